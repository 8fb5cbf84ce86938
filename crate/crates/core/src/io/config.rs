//! Flat TOML run configuration. Every key mirrors a CLI flag; flags win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bessel::SamplerMethod;
use crate::error::{DncbError, Result};
use crate::model::{DncbParams, Hyperparams, InitStrategy, Model, ModelKind, Schedule};

pub const DEFAULT_ITERATIONS: usize = 600;
pub const DEFAULT_BURN_IN: usize = 500;

macro_rules! run_config {
    ($($(#[$m:meta])* $field:ident: $ty:ty,)*) => {
        /// Run configuration; unset keys fall back to documented defaults.
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct RunConfig {
            $($(#[$m])* #[serde(default, skip_serializing_if = "Option::is_none")] pub $field: Option<$ty>,)*
        }

        impl RunConfig {
            /// Field-wise overlay: values set in `overrides` win.
            pub fn merge(self, overrides: RunConfig) -> RunConfig {
                RunConfig { $($field: overrides.$field.or(self.$field),)* }
            }
        }
    };
}

run_config! {
    model: ModelKind,
    /// Sample clusters (DNCB-TD).
    c: usize,
    /// Feature factors.
    k: usize,
    eps1: f64,
    eps2: f64,
    /// Per-column gamma rates; all 1 when unset.
    col_rates: Vec<f64>,
    eta1: f64,
    eta2: f64,
    nu1: f64,
    nu2: f64,
    zeta1: f64,
    zeta2: f64,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    chains: usize,
    sampler: SamplerMethod,
    init: InitStrategy,
    mask_fraction: f64,
    mask_seed: u64,
    /// Write a chain checkpoint every this many sweeps (0 = only at the end).
    checkpoint_every: usize,
    data: PathBuf,
    out: PathBuf,
    /// Continue `fit` from the checkpoints in `out`.
    resume: bool,
    /// Held-out cell list written by `fit`.
    mask: PathBuf,
    /// Posterior samples written by `fit`.
    samples: PathBuf,
    /// Long-format bisulfite read counts.
    biseq: PathBuf,
    sample_labels: PathBuf,
    feature_labels: PathBuf,
    /// Simulation rows.
    rows: usize,
    /// Simulation columns.
    cols: usize,
    n_reps: usize,
    c_values: Vec<usize>,
    k_values: Vec<usize>,
    s0: f64,
    top: usize,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| DncbError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)?;
        Self::from_toml_str(&s).map_err(|e| DncbError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DncbError::Config(e.to_string()))
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let d = Hyperparams::default();
        let h = Hyperparams {
            eta1: self.eta1.unwrap_or(d.eta1),
            eta2: self.eta2.unwrap_or(d.eta2),
            nu1: self.nu1.unwrap_or(d.nu1),
            nu2: self.nu2.unwrap_or(d.nu2),
            zeta1: self.zeta1.unwrap_or(d.zeta1),
            zeta2: self.zeta2.unwrap_or(d.zeta2),
        };
        h.validate()?;
        Ok(h)
    }

    /// Shapes `eps1`, `eps2` have no default and must be given.
    pub fn params(&self, ncols: usize) -> Result<DncbParams> {
        let eps1 = self.eps1.ok_or_else(|| DncbError::Config("eps1 is required".into()))?;
        let eps2 = self.eps2.ok_or_else(|| DncbError::Config("eps2 is required".into()))?;
        let p = DncbParams::new(eps1, eps2, ncols)?;
        match &self.col_rates {
            Some(c) if c.len() != ncols => Err(DncbError::Config(format!(
                "col_rates has {} entries for {ncols} columns",
                c.len()
            ))),
            Some(c) => p.with_col_rates(c.clone()),
            None => Ok(p),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.unwrap_or(ModelKind::Td)
    }

    pub fn model(&self, ncols: usize) -> Result<Model> {
        let k = self.k.ok_or_else(|| DncbError::Config("K is required".into()))?;
        let h = self.hyperparams()?;
        let p = self.params(ncols)?;
        let m = match self.kind() {
            ModelKind::Mf => Model::mf(k, h, p)?,
            ModelKind::Td => {
                let c = self.c.ok_or_else(|| DncbError::Config("C is required for the td model".into()))?;
                Model::td(c, k, h, p)?
            }
        };
        Ok(m.with_sampler(self.sampler.unwrap_or_default()))
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let iterations = self.iterations.unwrap_or(DEFAULT_ITERATIONS);
        let burn_in = self.burn_in.unwrap_or(DEFAULT_BURN_IN.min(iterations.saturating_sub(1)));
        if iterations <= burn_in {
            return Err(DncbError::Config(format!("iterations ({iterations}) must exceed burn_in ({burn_in})")));
        }
        Schedule::new(iterations, burn_in, self.thin.unwrap_or(1))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
