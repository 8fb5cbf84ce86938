use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DncbError, Result};

/// One nonzero latent subcount `y^(t)_icjk` (`c` is 0 for DNCB-MF).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subcount {
    pub i: u32,
    pub j: u32,
    pub c: u16,
    pub k: u16,
    pub t: u8,
    pub count: u32,
}

/// Sparse latent subcounts, grouped by row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Subcounts {
    pub entries: Vec<Subcount>,
}

/// Sufficient statistics of the subcounts for the DNCB-MF factor updates.
#[derive(Clone, Debug)]
pub struct MfStats {
    /// `y^(t)_i.k`, I x K each.
    pub theta: [Array2<f64>; 2],
    /// `y^(.)_.kj`, K x J.
    pub phi: Array2<f64>,
}

/// Sufficient statistics of the subcounts for the DNCB-TD factor updates.
#[derive(Clone, Debug)]
pub struct TdStats {
    /// `y^(.)_ic..`, I x C.
    pub theta: Array2<f64>,
    /// `y^(.)_..kj`, K x J.
    pub phi: Array2<f64>,
    /// `y^(t)_.c.k`, C x K each.
    pub pi: [Array2<f64>; 2],
}

impl Subcounts {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mf_stats(&self, ni: usize, nj: usize, nk: usize) -> MfStats {
        let mut theta = [Array2::zeros((ni, nk)), Array2::zeros((ni, nk))];
        let mut phi = Array2::zeros((nk, nj));
        for e in &self.entries {
            let n = e.count as f64;
            theta[e.t as usize][[e.i as usize, e.k as usize]] += n;
            phi[[e.k as usize, e.j as usize]] += n;
        }
        MfStats { theta, phi }
    }

    pub fn td_stats(&self, ni: usize, nj: usize, nc: usize, nk: usize) -> TdStats {
        let mut theta = Array2::zeros((ni, nc));
        let mut phi = Array2::zeros((nk, nj));
        let mut pi = [Array2::zeros((nc, nk)), Array2::zeros((nc, nk))];
        for e in &self.entries {
            let n = e.count as f64;
            theta[[e.i as usize, e.c as usize]] += n;
            phi[[e.k as usize, e.j as usize]] += n;
            pi[e.t as usize][[e.c as usize, e.k as usize]] += n;
        }
        TdStats { theta, phi, pi }
    }

    /// `sum_{c,k} y^(t)_icjk` for both t.
    pub fn totals(&self, ni: usize, nj: usize) -> [Array2<u64>; 2] {
        let mut out = [Array2::zeros((ni, nj)), Array2::zeros((ni, nj))];
        for e in &self.entries {
            out[e.t as usize][[e.i as usize, e.j as usize]] += e.count as u64;
        }
        out
    }
}

/// Latent counts, gamma variables and subcounts of the augmented model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub y1: Array2<u32>,
    pub y2: Array2<u32>,
    pub gamma1: Array2<f64>,
    pub gamma2: Array2<f64>,
    pub subcounts: Subcounts,
}

impl AugmentedState {
    /// Zero counts, unit gammas, no subcounts.
    pub fn new(ni: usize, nj: usize) -> Self {
        AugmentedState {
            y1: Array2::zeros((ni, nj)),
            y2: Array2::zeros((ni, nj)),
            gamma1: Array2::ones((ni, nj)),
            gamma2: Array2::ones((ni, nj)),
            subcounts: Subcounts::default(),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.y1.dim()
    }

    #[inline]
    pub fn y(&self, t: usize) -> &Array2<u32> {
        if t == 0 {
            &self.y1
        } else {
            &self.y2
        }
    }

    #[inline]
    pub fn gamma(&self, t: usize) -> &Array2<f64> {
        if t == 0 {
            &self.gamma1
        } else {
            &self.gamma2
        }
    }

    /// Check the structural invariants: subcounts sum to the counts and all
    /// gammas are positive and finite.
    pub fn check_invariants(&self) -> Result<()> {
        let (ni, nj) = self.dim();
        if self.y2.dim() != (ni, nj) || self.gamma1.dim() != (ni, nj) || self.gamma2.dim() != (ni, nj) {
            return Err(DncbError::Dimension("state arrays differ in shape".into()));
        }
        let totals = self.subcounts.totals(ni, nj);
        for t in 0..2 {
            for ((i, j), &y) in self.y(t).indexed_iter() {
                if totals[t][[i, j]] != y as u64 {
                    return Err(DncbError::Corrupt(format!(
                        "subcounts at ({i}, {j}, t={}) sum to {}, count is {y}",
                        t + 1,
                        totals[t][[i, j]]
                    )));
                }
            }
            if let Some(((i, j), g)) = self.gamma(t).indexed_iter().find(|(_, g)| !(**g > 0.0) || !g.is_finite()) {
                return Err(DncbError::Corrupt(format!("gamma{} at ({i}, {j}) is {g}", t + 1)));
            }
        }
        Ok(())
    }
}
