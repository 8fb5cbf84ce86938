use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::gibbs::gibbs_iteration;
use super::init::{initialize_state, InitStrategy};
use super::state::AugmentedState;
use super::types::{BoundedMatrix, Factors, Model, ModelKind};
use crate::error::{DncbError, Result};
use crate::rng::{seeded, ChainRng, RngState};

/// Sweep schedule for [`Chain::run`]: `iterations` sweeps in total, of which
/// the first `burn_in` are discarded and every `thin`-th after that is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Schedule {
    pub fn new(iterations: usize, burn_in: usize, thin: usize) -> Result<Self> {
        if thin == 0 {
            return Err(DncbError::Config("thin must be at least 1".into()));
        }
        if burn_in > iterations {
            return Err(DncbError::Config(format!("burn-in {burn_in} exceeds iterations {iterations}")));
        }
        Ok(Schedule { iterations, burn_in, thin })
    }

    /// `S` samples after `burn_in` sweeps, no thinning.
    pub fn samples(burn_in: usize, n: usize) -> Self {
        Schedule {
            iterations: burn_in + n,
            burn_in,
            thin: 1,
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Retained posterior draws of the factor matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub samples: Vec<Factors>,
    /// Chain iteration at which each sample was taken.
    pub iterations: Vec<u64>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, factors: Factors, iteration: u64) {
        self.samples.push(factors);
        self.iterations.push(iteration);
    }

    pub fn extend(&mut self, other: PosteriorSamples) {
        self.samples.extend(other.samples);
        self.iterations.extend(other.iterations);
    }

    /// Elementwise posterior mean of the factors. `None` when empty.
    ///
    /// Only meaningful within one chain: components are not aligned across
    /// chains.
    pub fn mean(&self) -> Option<Factors> {
        let mut it = self.samples.iter();
        let mut acc = it.next()?.clone();
        for f in it {
            match (&mut acc, f) {
                (Factors::Mf(a), Factors::Mf(b)) => {
                    a.theta1 += &b.theta1;
                    a.theta2 += &b.theta2;
                    a.phi += &b.phi;
                }
                (Factors::Td(a), Factors::Td(b)) => {
                    a.theta += &b.theta;
                    a.phi += &b.phi;
                    a.pi1 += &b.pi1;
                    a.pi2 += &b.pi2;
                }
                _ => return None,
            }
        }
        let n = self.len() as f64;
        match &mut acc {
            Factors::Mf(a) => [&mut a.theta1, &mut a.theta2, &mut a.phi].into_iter().for_each(|m| *m /= n),
            Factors::Td(a) => [&mut a.theta, &mut a.phi, &mut a.pi1, &mut a.pi2].into_iter().for_each(|m| *m /= n),
        }
        Some(acc)
    }
}

/// Everything needed to continue a chain bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSnapshot {
    pub model: Model,
    pub data: BoundedMatrix,
    pub factors: Factors,
    pub state: AugmentedState,
    pub rng: RngState,
    pub iteration: u64,
}

/// A single Gibbs chain.
#[derive(Clone, Debug)]
pub struct Chain {
    model: Model,
    data: BoundedMatrix,
    factors: Factors,
    state: AugmentedState,
    rng: ChainRng,
    iteration: u64,
}

impl Chain {
    pub fn new(model: Model, data: BoundedMatrix, init: InitStrategy, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let (factors, state) = initialize_state(&model, &data, init, &mut rng)?;
        Ok(Chain {
            model,
            data,
            factors,
            state,
            rng,
            iteration: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn data(&self) -> &BoundedMatrix {
        &self.data
    }

    pub fn factors(&self) -> &Factors {
        &self.factors
    }

    pub fn state(&self) -> &AugmentedState {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn step(&mut self) -> Result<()> {
        gibbs_iteration(&self.model, &self.data, &mut self.factors, &mut self.state, &mut self.rng)?;
        self.iteration += 1;
        Ok(())
    }

    pub fn run(&mut self, schedule: &Schedule) -> Result<PosteriorSamples> {
        self.run_with(schedule, |_| Ok(()))
    }

    /// As [`Chain::run`], calling `after_sweep` after every sweep (used for
    /// periodic checkpoints and progress reporting).
    pub fn run_with<F>(&mut self, schedule: &Schedule, mut after_sweep: F) -> Result<PosteriorSamples>
    where
        F: FnMut(&Chain) -> Result<()>,
    {
        let mut out = PosteriorSamples::default();
        for s in 1..=schedule.iterations {
            self.step()?;
            if s > schedule.burn_in && (s - schedule.burn_in).is_multiple_of(schedule.thin) {
                out.push(self.factors.clone(), self.iteration);
            }
            after_sweep(self)?;
        }
        Ok(out)
    }

    /// Sweep until `schedule.iterations` sweeps have been done in total,
    /// keeping draws by absolute iteration number. From a fresh chain this
    /// matches [`Chain::run_with`]; from a restored one it picks up where the
    /// snapshot left off.
    pub fn run_to<F>(&mut self, schedule: &Schedule, mut after_sweep: F) -> Result<PosteriorSamples>
    where
        F: FnMut(&Chain, &PosteriorSamples) -> Result<()>,
    {
        let mut out = PosteriorSamples::default();
        let (burn, thin) = (schedule.burn_in as u64, schedule.thin as u64);
        while self.iteration < schedule.iterations as u64 {
            self.step()?;
            let s = self.iteration;
            if s > burn && (s - burn).is_multiple_of(thin) {
                out.push(self.factors.clone(), s);
            }
            after_sweep(self, &out)?;
        }
        Ok(out)
    }

    /// Posterior draw of `β = γ1 / (γ1 + γ2)` for every entry (unobserved
    /// entries get their imputed value).
    pub fn imputed_beta(&self) -> Array2<f64> {
        Zip::from(&self.state.gamma1)
            .and(&self.state.gamma2)
            .map_collect(|a, b| a / (a + b))
    }

    pub fn snapshot(&self) -> ChainSnapshot {
        ChainSnapshot {
            model: self.model.clone(),
            data: self.data.clone(),
            factors: self.factors.clone(),
            state: self.state.clone(),
            rng: RngState::capture(&self.rng),
            iteration: self.iteration,
        }
    }

    pub fn from_snapshot(s: ChainSnapshot) -> Result<Self> {
        let (ni, nj) = s.data.dim();
        s.model.check_data(ni, nj)?;
        if s.state.dim() != (ni, nj) || s.factors.nrows() != ni || s.factors.ncols() != nj {
            return Err(DncbError::Corrupt("snapshot arrays disagree with data shape".into()));
        }
        let kind_ok = match (&s.factors, s.model.kind) {
            (Factors::Mf(f), ModelKind::Mf) => f.phi.nrows() == s.model.n_factors,
            (Factors::Td(f), ModelKind::Td) => f.pi1.dim() == (s.model.n_clusters, s.model.n_factors),
            _ => false,
        };
        if !kind_ok {
            return Err(DncbError::Corrupt("snapshot factors do not match the model".into()));
        }
        s.state.check_invariants()?;
        let rng = s.rng.restore().ok_or_else(|| DncbError::Corrupt("bad RNG word position".into()))?;
        Ok(Chain {
            model: s.model,
            data: s.data,
            factors: s.factors,
            state: s.state,
            rng,
            iteration: s.iteration,
        })
    }
}
