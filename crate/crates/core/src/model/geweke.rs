//! Joint-distribution ("getting it right") test of the Gibbs sampler.
//!
//! Marginal-conditional draws come straight from the generative model.
//! Successive-conditional draws alternate one Gibbs sweep with a fresh draw
//! of `(γ, β)` given the counts. If the sweep leaves the posterior invariant,
//! both schemes target the same joint and every test statistic has the same
//! mean under both.

use rand::Rng;

use super::gibbs::{gibbs_iteration, sample_gamma};
use super::simulate::{simulate_mf, simulate_td};
use super::state::AugmentedState;
use super::types::{BoundedMatrix, Factors, Model, ModelKind};
use crate::error::Result;

/// Statistics recorded per draw: `λ^(1)_11`, `y^(1)_11`, `θ_11`
/// (`θ^(1)_11` for DNCB-MF).
pub const STAT_NAMES: [&str; 3] = ["lambda1_11", "y1_11", "theta_11"];

fn stats(factors: &Factors, state: &AugmentedState) -> Result<[f64; 3]> {
    let (l1, _) = factors.rates()?;
    let theta = match factors {
        Factors::Mf(f) => f.theta1[[0, 0]],
        Factors::Td(f) => f.theta[[0, 0]],
    };
    Ok([l1[[0, 0]], state.y1[[0, 0]] as f64, theta])
}

fn simulate<R: Rng + ?Sized>(
    model: &Model,
    ni: usize,
    nj: usize,
    rng: &mut R,
) -> Result<(Factors, AugmentedState, BoundedMatrix)> {
    let s = match model.kind {
        ModelKind::Mf => simulate_mf(&model.hyper, &model.params, (ni, model.n_factors, nj), rng)?,
        ModelKind::Td => simulate_td(&model.hyper, &model.params, (ni, model.n_clusters, model.n_factors, nj), rng)?,
    };
    Ok((s.factors, s.state, s.data))
}

/// `n` independent draws from the generative model.
pub fn forward_draws<R: Rng + ?Sized>(model: &Model, ni: usize, nj: usize, n: usize, rng: &mut R) -> Result<Vec<[f64; 3]>> {
    model.check_data(ni, nj)?;
    (0..n)
        .map(|_| {
            let (f, s, _) = simulate(model, ni, nj, rng)?;
            stats(&f, &s)
        })
        .collect()
}

/// `n` successive-conditional draws, started from one forward draw.
pub fn successive_draws<R: Rng + ?Sized>(model: &Model, ni: usize, nj: usize, n: usize, rng: &mut R) -> Result<Vec<[f64; 3]>> {
    model.check_data(ni, nj)?;
    let (mut factors, mut state, mut data) = simulate(model, ni, nj, rng)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        gibbs_iteration(model, &data, &mut factors, &mut state, rng)?;
        data = redraw_data(model, &mut state, rng)?;
        out.push(stats(&factors, &state)?);
    }
    Ok(out)
}

/// `γ^(t) ~ Gam(ε_t + y^(t), c_j)`, `β = γ^(1) / (γ^(1) + γ^(2))`.
fn redraw_data<R: Rng + ?Sized>(model: &Model, state: &mut AugmentedState, rng: &mut R) -> Result<BoundedMatrix> {
    let p = &model.params;
    let (ni, nj) = state.dim();
    let mut beta = ndarray::Array2::zeros((ni, nj));
    for i in 0..ni {
        for j in 0..nj {
            let c = p.col_rates[j];
            let g1 = sample_gamma(p.eps1 + state.y1[[i, j]] as f64, c, rng);
            let g2 = sample_gamma(p.eps2 + state.y2[[i, j]] as f64, c, rng);
            state.gamma1[[i, j]] = g1;
            state.gamma2[[i, j]] = g2;
            beta[[i, j]] = g1 / (g1 + g2);
        }
    }
    Ok(BoundedMatrix::from_values(beta)?.0)
}

/// Two-sample z statistic: `forward` is i.i.d., `successive` is a Markov
/// chain whose variance of the mean is estimated by batch means.
pub fn geweke_z(forward: &[f64], successive: &[f64], n_batches: usize) -> f64 {
    let (mf, vf) = mean_var(forward);
    let ms = successive.iter().sum::<f64>() / successive.len() as f64;
    let b = successive.len() / n_batches.max(2);
    let batch_means: Vec<f64> = successive
        .chunks_exact(b.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let (_, vb) = mean_var(&batch_means);
    let se2 = vf / forward.len() as f64 + vb / batch_means.len() as f64;
    (mf - ms) / se2.sqrt()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_of_identical_iid_samples_is_zero() {
        let x: Vec<f64> = (0..1000).map(|i| (i % 17) as f64).collect();
        assert!(geweke_z(&x, &x, 20).abs() < 1e-12);
        let shifted: Vec<f64> = x.iter().map(|a| a + 5.0).collect();
        assert!(geweke_z(&x, &shifted, 20) < -10.0);
    }
}
