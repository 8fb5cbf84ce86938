//! Forward simulation from the generative models.

use ndarray::Array2;
use rand::Rng;

use super::gibbs::{gibbs_allocate_subcounts, sample_gamma, sample_poisson};
use super::state::AugmentedState;
use super::types::{compose_rates_mf, compose_rates_td, BoundedMatrix, DncbParams, Factors, Hyperparams, MfFactors, TdFactors};
use crate::error::{DncbError, Result};

/// Output of a forward simulation.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub factors: Factors,
    pub state: AugmentedState,
    pub data: BoundedMatrix,
}

fn gamma_matrix<R: Rng + ?Sized>(shape: (usize, usize), a: f64, b: f64, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::zeros(shape);
    for x in m.iter_mut() {
        *x = sample_gamma(a, b, rng);
    }
    m
}

/// `θ^(t) ~ Gam(η1, η2)`, then `Φ ~ Gam(ν1, ν2)`.
pub fn sample_mf_prior<R: Rng + ?Sized>(h: &Hyperparams, ni: usize, nk: usize, nj: usize, rng: &mut R) -> MfFactors {
    let theta1 = gamma_matrix((ni, nk), h.eta1, h.eta2, rng);
    let theta2 = gamma_matrix((ni, nk), h.eta1, h.eta2, rng);
    let phi = gamma_matrix((nk, nj), h.nu1, h.nu2, rng);
    MfFactors { theta1, theta2, phi }
}

/// `Π^(t) ~ Gam(ζ1, ζ2)`, then `Φ ~ Gam(ν1, ν2)`, then `Θ ~ Gam(η1, η2)`.
pub fn sample_td_prior<R: Rng + ?Sized>(
    h: &Hyperparams,
    ni: usize,
    nc: usize,
    nk: usize,
    nj: usize,
    rng: &mut R,
) -> TdFactors {
    let pi1 = gamma_matrix((nc, nk), h.zeta1, h.zeta2, rng);
    let pi2 = gamma_matrix((nc, nk), h.zeta1, h.zeta2, rng);
    let phi = gamma_matrix((nk, nj), h.nu1, h.nu2, rng);
    let theta = gamma_matrix((ni, nc), h.eta1, h.eta2, rng);
    TdFactors { theta, phi, pi1, pi2 }
}

/// Draw `y^(t) ~ Pois(λ^(t))`, `γ^(t) ~ Gam(ε_t + y^(t), c_j)` and
/// `β = γ^(1) / (γ^(1) + γ^(2))` entrywise. Returns the state (without
/// subcounts) and the fully observed data.
pub fn sample_observations<R: Rng + ?Sized>(
    rates1: &Array2<f64>,
    rates2: &Array2<f64>,
    params: &DncbParams,
    rng: &mut R,
) -> Result<(AugmentedState, BoundedMatrix)> {
    let (ni, nj) = rates1.dim();
    if rates2.dim() != (ni, nj) || params.col_rates.len() != nj {
        return Err(DncbError::Dimension(format!(
            "rates {:?} / {:?} with {} column rates",
            rates1.dim(),
            rates2.dim(),
            params.col_rates.len()
        )));
    }
    params.validate()?;
    let mut state = AugmentedState::new(ni, nj);
    let mut beta = Array2::zeros((ni, nj));
    for i in 0..ni {
        for j in 0..nj {
            let c = params.col_rates[j];
            let y1 = sample_poisson(rates1[[i, j]], rng)?;
            let y2 = sample_poisson(rates2[[i, j]], rng)?;
            let g1 = sample_gamma(params.eps1 + y1 as f64, c, rng);
            let g2 = sample_gamma(params.eps2 + y2 as f64, c, rng);
            state.y1[[i, j]] = y1;
            state.y2[[i, j]] = y2;
            state.gamma1[[i, j]] = g1;
            state.gamma2[[i, j]] = g2;
            beta[[i, j]] = g1 / (g1 + g2);
        }
    }
    let (data, _) = BoundedMatrix::from_values(beta)?;
    Ok((state, data))
}

/// Simulate `(I, K, J)` DNCB-MF data with known ground truth.
pub fn simulate_mf<R: Rng + ?Sized>(
    h: &Hyperparams,
    params: &DncbParams,
    (ni, nk, nj): (usize, usize, usize),
    rng: &mut R,
) -> Result<Simulated> {
    h.validate()?;
    let f = sample_mf_prior(h, ni, nk, nj, rng);
    let (l1, l2) = compose_rates_mf(&f)?;
    finish(Factors::Mf(f), &l1, &l2, params, rng)
}

/// Simulate `(I, C, K, J)` DNCB-TD data with known ground truth.
pub fn simulate_td<R: Rng + ?Sized>(
    h: &Hyperparams,
    params: &DncbParams,
    (ni, nc, nk, nj): (usize, usize, usize, usize),
    rng: &mut R,
) -> Result<Simulated> {
    h.validate()?;
    let f = sample_td_prior(h, ni, nc, nk, nj, rng);
    let (l1, l2) = compose_rates_td(&f)?;
    finish(Factors::Td(f), &l1, &l2, params, rng)
}

fn finish<R: Rng + ?Sized>(
    factors: Factors,
    l1: &Array2<f64>,
    l2: &Array2<f64>,
    params: &DncbParams,
    rng: &mut R,
) -> Result<Simulated> {
    let (mut state, data) = sample_observations(l1, l2, params, rng)?;
    gibbs_allocate_subcounts(&mut state, &factors, rng)?;
    Ok(Simulated { factors, state, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_rates_give_beta_draws() {
        // λ = 0 forces y = 0, so β ~ Beta(ε1, ε2) exactly.
        let n = 200;
        let z = Array2::zeros((n, n));
        let params = DncbParams::new(2.0, 5.0, n).unwrap();
        let (state, data) = sample_observations(&z, &z, &params, &mut seeded(5)).unwrap();
        assert!(state.y1.iter().chain(state.y2.iter()).all(|y| *y == 0));
        let m = data.values().mean().unwrap();
        let se = (2.0 * 5.0 / (49.0 * 8.0) / (n * n) as f64).sqrt();
        assert!((m - 2.0 / 7.0).abs() < 5.0 * se, "{m}");
    }

    #[test]
    fn simulated_state_is_consistent() {
        let h = Hyperparams::default();
        let params = DncbParams::new(1.0, 1.0, 6).unwrap();
        let s = simulate_td(&h, &params, (5, 2, 3, 6), &mut seeded(1)).unwrap();
        s.state.check_invariants().unwrap();
        assert_eq!(s.data.dim(), (5, 6));
        let s = simulate_mf(&h, &params, (5, 3, 6), &mut seeded(2)).unwrap();
        s.state.check_invariants().unwrap();
    }

    #[test]
    fn deterministic_given_seed() {
        let h = Hyperparams::default();
        let params = DncbParams::new(0.5, 2.0, 4).unwrap();
        let a = simulate_mf(&h, &params, (3, 2, 4), &mut seeded(11)).unwrap();
        let b = simulate_mf(&h, &params, (3, 2, 4), &mut seeded(11)).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.state, b.state);
    }
}
