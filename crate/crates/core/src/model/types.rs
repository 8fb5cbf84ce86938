use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::bessel::SamplerMethod;
use crate::error::{DncbError, Result};

/// An `I x J` matrix of values in (0,1) with an observation mask
/// (`true` = observed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedMatrix {
    values: Array2<f64>,
    observed: Array2<bool>,
}

impl BoundedMatrix {
    /// Observed values are clamped into `[CLAMP_DELTA, 1 - CLAMP_DELTA]`.
    pub const CLAMP_DELTA: f64 = 1e-6;

    /// Build from values and mask, clamping observed values. Returns the
    /// matrix and the number of observed entries that had to be clamped.
    /// Unobserved entries may hold anything (including NaN); they are stored
    /// as 0.5 and never read by inference.
    pub fn new(values: Array2<f64>, observed: Array2<bool>) -> Result<(Self, usize)> {
        if values.dim() != observed.dim() {
            return Err(DncbError::Dimension(format!(
                "values {:?} vs mask {:?}",
                values.dim(),
                observed.dim()
            )));
        }
        let (ni, nj) = values.dim();
        if ni == 0 || nj == 0 {
            return Err(DncbError::Dimension("matrix must be at least 1 x 1".into()));
        }
        let mut values = values;
        let mut clamped = 0;
        let lo = Self::CLAMP_DELTA;
        let hi = 1.0 - Self::CLAMP_DELTA;
        for ((i, j), x) in values.indexed_iter_mut() {
            if !observed[[i, j]] {
                *x = 0.5;
                continue;
            }
            if !x.is_finite() {
                return Err(DncbError::domain(format!("non-finite observed value at ({i}, {j})")));
            }
            if *x < lo || *x > hi {
                *x = x.clamp(lo, hi);
                clamped += 1;
            }
        }
        Ok((BoundedMatrix { values, observed }, clamped))
    }

    /// All entries observed.
    pub fn from_values(values: Array2<f64>) -> Result<(Self, usize)> {
        let observed = Array2::from_elem(values.dim(), true);
        Self::new(values, observed)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[[i, j]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Copy with the cells where `heldout` is true hidden from inference.
    pub fn hide(&self, heldout: &Array2<bool>) -> Result<Self> {
        if heldout.dim() != self.dim() {
            return Err(DncbError::Dimension("held-out mask shape differs from data".into()));
        }
        let mut observed = self.observed.clone();
        let mut values = self.values.clone();
        Zip::from(&mut observed)
            .and(&mut values)
            .and(heldout)
            .for_each(|o, v, &h| {
                if h {
                    *o = false;
                    *v = 0.5;
                }
            });
        Ok(BoundedMatrix { values, observed })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mf,
    Td,
}

impl FromStr for ModelKind {
    type Err = DncbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(ModelKind::Mf),
            "td" => Ok(ModelKind::Td),
            other => Err(DncbError::Config(format!("unknown model kind {other:?} (expected mf|td)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mf => "mf",
            ModelKind::Td => "td",
        })
    }
}

/// Likelihood parameters: the global shapes and per-column gamma rates `c_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DncbParams {
    pub eps1: f64,
    pub eps2: f64,
    pub col_rates: Vec<f64>,
}

impl DncbParams {
    /// Column rates default to 1.
    pub fn new(eps1: f64, eps2: f64, ncols: usize) -> Result<Self> {
        let p = DncbParams {
            eps1,
            eps2,
            col_rates: vec![1.0; ncols],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_col_rates(mut self, col_rates: Vec<f64>) -> Result<Self> {
        self.col_rates = col_rates;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) || !self.eps1.is_finite() || !self.eps2.is_finite() {
            return Err(DncbError::domain("shape parameters eps1, eps2 must be positive"));
        }
        if self.col_rates.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(DncbError::domain("column rates c_j must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn eps(&self, t: usize) -> f64 {
        if t == 0 {
            self.eps1
        } else {
            self.eps2
        }
    }
}

/// Gamma prior (shape, rate) pairs: `eta` for sample factors, `nu` for
/// feature factors, `zeta` for the core matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub eta1: f64,
    pub eta2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub zeta1: f64,
    pub zeta2: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            eta1: 1.0,
            eta2: 1.0,
            nu1: 1.0,
            nu2: 1.0,
            zeta1: 1.0,
            zeta2: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn uniform(shape: f64, rate: f64) -> Self {
        Hyperparams {
            eta1: shape,
            eta2: rate,
            nu1: shape,
            nu2: rate,
            zeta1: shape,
            zeta2: rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.eta1, self.eta2, self.nu1, self.nu2, self.zeta1, self.zeta2];
        if all.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(DncbError::domain("all gamma hyperparameters must be positive"));
        }
        Ok(())
    }
}

/// DNCB-MF factors: `lambda^(t) = theta^(t) phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfFactors {
    /// I x K
    pub theta1: Array2<f64>,
    /// I x K
    pub theta2: Array2<f64>,
    /// K x J
    pub phi: Array2<f64>,
}

impl MfFactors {
    pub fn rank(&self) -> usize {
        self.phi.nrows()
    }

    /// `rho_ik = theta1 / (theta1 + theta2)`.
    pub fn rho(&self) -> Array2<f64> {
        Zip::from(&self.theta1)
            .and(&self.theta2)
            .map_collect(|a, b| a / (a + b))
    }
}

/// DNCB-TD factors: `lambda^(t) = theta Pi^(t) phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdFactors {
    /// I x C
    pub theta: Array2<f64>,
    /// K x J
    pub phi: Array2<f64>,
    /// C x K
    pub pi1: Array2<f64>,
    /// C x K
    pub pi2: Array2<f64>,
}

impl TdFactors {
    pub fn pi(&self, t: usize) -> &Array2<f64> {
        if t == 0 {
            &self.pi1
        } else {
            &self.pi2
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Factors {
    Mf(MfFactors),
    Td(TdFactors),
}

impl Factors {
    pub fn kind(&self) -> ModelKind {
        match self {
            Factors::Mf(_) => ModelKind::Mf,
            Factors::Td(_) => ModelKind::Td,
        }
    }

    pub fn rates(&self) -> Result<(Array2<f64>, Array2<f64>)> {
        match self {
            Factors::Mf(f) => compose_rates_mf(f),
            Factors::Td(f) => compose_rates_td(f),
        }
    }

    /// Sample-side loadings used for hard cluster assignment: theta for TD,
    /// theta1 + theta2 for MF.
    pub fn sample_loadings(&self) -> Array2<f64> {
        match self {
            Factors::Mf(f) => &f.theta1 + &f.theta2,
            Factors::Td(f) => f.theta.clone(),
        }
    }

    pub fn phi(&self) -> &Array2<f64> {
        match self {
            Factors::Mf(f) => &f.phi,
            Factors::Td(f) => &f.phi,
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            Factors::Mf(f) => f.theta1.nrows(),
            Factors::Td(f) => f.theta.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        self.phi().ncols()
    }

    pub fn all_positive(&self) -> bool {
        let pos = |a: &Array2<f64>| a.iter().all(|x| *x > 0.0 && x.is_finite());
        match self {
            Factors::Mf(f) => pos(&f.theta1) && pos(&f.theta2) && pos(&f.phi),
            Factors::Td(f) => pos(&f.theta) && pos(&f.phi) && pos(&f.pi1) && pos(&f.pi2),
        }
    }
}

/// A model specification: structure, priors, likelihood parameters and the
/// Bessel sampler used in the count step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    /// Number of sample clusters `C` (DNCB-TD only; equals `K` for DNCB-MF).
    pub n_clusters: usize,
    /// Number of feature factors `K`.
    pub n_factors: usize,
    pub hyper: Hyperparams,
    pub params: DncbParams,
    #[serde(default)]
    pub sampler: SamplerMethod,
}

impl Model {
    pub fn mf(k: usize, hyper: Hyperparams, params: DncbParams) -> Result<Self> {
        let m = Model {
            kind: ModelKind::Mf,
            n_clusters: k,
            n_factors: k,
            hyper,
            params,
            sampler: SamplerMethod::Auto,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn td(c: usize, k: usize, hyper: Hyperparams, params: DncbParams) -> Result<Self> {
        let m = Model {
            kind: ModelKind::Td,
            n_clusters: c,
            n_factors: k,
            hyper,
            params,
            sampler: SamplerMethod::Auto,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_sampler(mut self, sampler: SamplerMethod) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_factors == 0 || self.n_clusters == 0 {
            return Err(DncbError::domain("C and K must be at least 1"));
        }
        if self.n_factors > u16::MAX as usize || self.n_clusters > u16::MAX as usize {
            return Err(DncbError::domain("C and K must fit in 16 bits"));
        }
        self.hyper.validate()?;
        self.params.validate()
    }

    /// Check the model against data of shape `ni x nj`.
    pub fn check_data(&self, ni: usize, nj: usize) -> Result<()> {
        self.validate()?;
        if self.params.col_rates.len() != nj {
            return Err(DncbError::Dimension(format!(
                "{} column rates for {nj} columns",
                self.params.col_rates.len()
            )));
        }
        if ni > u32::MAX as usize || nj > u32::MAX as usize {
            return Err(DncbError::Dimension("matrix too large".into()));
        }
        Ok(())
    }
}

/// `lambda^(t)_ij = sum_k theta^(t)_ik phi_kj`.
pub fn compose_rates_mf(f: &MfFactors) -> Result<(Array2<f64>, Array2<f64>)> {
    let k = f.phi.nrows();
    if f.theta1.ncols() != k || f.theta2.ncols() != k || f.theta1.dim() != f.theta2.dim() {
        return Err(DncbError::Dimension(format!(
            "theta1 {:?}, theta2 {:?}, phi {:?}",
            f.theta1.dim(),
            f.theta2.dim(),
            f.phi.dim()
        )));
    }
    Ok((f.theta1.dot(&f.phi), f.theta2.dot(&f.phi)))
}

/// `lambda^(t)_ij = sum_c theta_ic sum_k pi^(t)_ck phi_kj`.
pub fn compose_rates_td(f: &TdFactors) -> Result<(Array2<f64>, Array2<f64>)> {
    let (c, k) = f.pi1.dim();
    if f.theta.ncols() != c || f.phi.nrows() != k || f.pi2.dim() != (c, k) {
        return Err(DncbError::Dimension(format!(
            "theta {:?}, pi1 {:?}, pi2 {:?}, phi {:?}",
            f.theta.dim(),
            f.pi1.dim(),
            f.pi2.dim(),
            f.phi.dim()
        )));
    }
    Ok((f.theta.dot(&f.pi1.dot(&f.phi)), f.theta.dot(&f.pi2.dot(&f.phi))))
}
