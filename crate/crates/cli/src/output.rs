use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use dncb::io::write_labeled_csv;
use dncb::Factors;
use ndarray::Array2;
use serde::Serialize;

/// Output directory owned by one command invocation.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutDir { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.writer(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn text(&self, name: &str, s: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, s).with_context(|| format!("writing {}", p.display()))
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Factor CSVs in heatmap orientation: loadings are samples × components,
/// `phi` is features × factors, cores are clusters × factors.
pub fn write_factors(dir: &OutDir, prefix: &str, f: &Factors, rows: &[String], cols: &[String]) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut put = |name: &str, a: &Array2<f64>, r: &[String], c: &[String]| -> Result<()> {
        let file = format!("{prefix}{name}.csv");
        write_labeled_csv(dir.writer(&file)?, a, r, c).with_context(|| format!("writing {file}"))?;
        written.push(file);
        Ok(())
    };
    match f {
        Factors::Mf(m) => {
            let k = names("K", m.rank());
            put("theta1", &m.theta1, rows, &k)?;
            put("theta2", &m.theta2, rows, &k)?;
            put("phi", &m.phi.t().to_owned(), cols, &k)?;
        }
        Factors::Td(t) => {
            let c = names("C", t.theta.ncols());
            let k = names("K", t.phi.nrows());
            put("theta", &t.theta, rows, &c)?;
            put("phi", &t.phi.t().to_owned(), cols, &k)?;
            put("pi1", &t.pi1, &c, &k)?;
            put("pi2", &t.pi2, &c, &k)?;
        }
    }
    Ok(written)
}
