//! Checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DNCBCKPT"
//! 8       4     format version (u32 LE)
//! 12      4     payload kind: 1 = chain snapshot, 2 = posterior samples (u32 LE)
//! 16      8     payload length in bytes (u64 LE)
//! 24      4     CRC-32 of the payload (u32 LE)
//! 28      n     payload: UTF-8 JSON
//! ```
//!
//! Floats are written with round-trip precision, so a chain restored from a
//! snapshot continues bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DncbError, Result};
use crate::model::{ChainSnapshot, Model, PosteriorSamples};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DNCBCKPT";
const HEADER_LEN: usize = 28;
const KIND_CHAIN: u32 = 1;
const KIND_SAMPLES: u32 = 2;

/// Saved posterior samples with the model that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplesFile {
    pub model: Model,
    pub samples: PosteriorSamples,
}

pub fn save_checkpoint(path: &Path, snapshot: &ChainSnapshot) -> Result<()> {
    write_container(path, KIND_CHAIN, snapshot)
}

pub fn load_checkpoint(path: &Path) -> Result<ChainSnapshot> {
    read_container(path, KIND_CHAIN)
}

pub fn save_samples(path: &Path, samples: &SamplesFile) -> Result<()> {
    write_container(path, KIND_SAMPLES, samples)
}

pub fn load_samples(path: &Path) -> Result<SamplesFile> {
    read_container(path, KIND_SAMPLES)
}

pub(crate) fn encode<T: Serialize>(kind: u32, value: &T) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(value)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub(crate) fn decode<T: DeserializeOwned>(bytes: &[u8], kind: u32) -> Result<T> {
    if bytes.len() < HEADER_LEN {
        return Err(DncbError::Corrupt(format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(DncbError::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(DncbError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let found_kind = u32_at(12);
    if found_kind != kind {
        return Err(DncbError::Corrupt(format!("payload kind {found_kind}, expected {kind}")));
    }
    let len = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = u32_at(24);
    let payload = &bytes[HEADER_LEN..];
    let found = crc32fast::hash(payload);
    if found != expected || payload.len() as u64 != len {
        return Err(DncbError::Checksum { expected, found });
    }
    Ok(serde_json::from_slice(payload)?)
}

fn write_container<T: Serialize>(path: &Path, kind: u32, value: &T) -> Result<()> {
    let bytes = encode(kind, value)?;
    // write-then-rename so an interrupted save never leaves a torn file
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_container<T: DeserializeOwned>(path: &Path, kind: u32) -> Result<T> {
    decode(&fs::read(path)?, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_checks() {
        let bytes = encode(KIND_SAMPLES, &vec![1.5f64, 0.1, 1e-300]).unwrap();
        let back: Vec<f64> = decode(&bytes, KIND_SAMPLES).unwrap();
        assert_eq!(back, vec![1.5, 0.1, 1e-300]);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode::<Vec<f64>>(truncated, KIND_SAMPLES), Err(DncbError::Checksum { .. })));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 2;
        flipped[last] ^= 1;
        assert!(matches!(decode::<Vec<f64>>(&flipped, KIND_SAMPLES), Err(DncbError::Checksum { .. })));

        let mut bumped = bytes.clone();
        bumped[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            decode::<Vec<f64>>(&bumped, KIND_SAMPLES),
            Err(DncbError::Version { found: 2, expected: 1 })
        ));

        assert!(matches!(decode::<Vec<f64>>(&bytes, KIND_CHAIN), Err(DncbError::Corrupt(_))));
        assert!(matches!(decode::<Vec<f64>>(&bytes[..10], KIND_SAMPLES), Err(DncbError::Corrupt(_))));
    }
}
