//! Augmented Gibbs sampler.
//!
//! One sweep updates, in order: the gamma pairs, the latent counts, the
//! latent subcounts and the factor matrices. Entrywise steps run row-parallel
//! on per-row substreams (see [`crate::rng`]).

use std::sync::Mutex;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use rayon::prelude::*;

use super::state::{AugmentedState, Subcount, Subcounts};
use super::types::{BoundedMatrix, DncbParams, Factors, Hyperparams, MfFactors, Model, TdFactors};
use crate::bessel::{sample_bessel, BesselParams, SamplerMethod};
use crate::error::{DncbError, Result};
use crate::rng::StreamKey;

/// Gamma draw with shape/rate parametrisation, floored at the smallest
/// positive normal so that logs and ratios stay finite.
#[inline]
pub(crate) fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("gamma parameters validated upstream");
    g.sample(rng).max(f64::MIN_POSITIVE)
}

#[inline]
pub(crate) fn sample_poisson<R: Rng + ?Sized>(lam: f64, rng: &mut R) -> Result<u32> {
    if lam <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(lam).map_err(|e| DncbError::domain(format!("Poisson rate {lam}: {e}")))?;
    let y: f64 = d.sample(rng);
    if y > u32::MAX as f64 {
        return Err(DncbError::domain(format!("Poisson rate {lam} too large for a u32 count")));
    }
    Ok(y as u32)
}

/// Multinomial draw by sequential binomials. Zero or non-finite total
/// weight falls back to uniform.
pub(crate) fn multinomial<R: Rng + ?Sized>(n: u32, weights: &[f64], out: &mut [u32], rng: &mut R) {
    debug_assert_eq!(weights.len(), out.len());
    out.fill(0);
    if n == 0 || out.is_empty() {
        return;
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        let uniform = vec![1.0; weights.len()];
        multinomial(n, &uniform, out, rng);
        return;
    }
    if n == 1 {
        let mut u = rng.random::<f64>() * total;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                out[k] = 1;
                return;
            }
            u -= w;
        }
        let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1);
        out[last] = 1;
        return;
    }
    let last = weights.len() - 1;
    let mut rem_n = n as u64;
    let mut rem_w = total;
    for k in 0..last {
        if rem_n == 0 {
            return;
        }
        let p = if rem_w > 0.0 { (weights[k] / rem_w).clamp(0.0, 1.0) } else { 1.0 };
        let x = Binomial::new(rem_n, p).expect("p in [0, 1]").sample(rng);
        out[k] = x as u32;
        rem_n -= x;
        rem_w -= weights[k];
    }
    out[last] = rem_n as u32;
}

/// Record the first error raised inside a parallel loop.
struct FirstError(Mutex<Option<DncbError>>);

impl FirstError {
    fn new() -> Self {
        FirstError(Mutex::new(None))
    }

    fn set(&self, e: DncbError) {
        let mut slot = self.0.lock().expect("poisoned");
        if slot.is_none() {
            *slot = Some(e);
        }
    }

    fn into_result(self) -> Result<()> {
        match self.0.into_inner().expect("poisoned") {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Observed entries: `γ• ~ Gam(ε1 + ε2 + y1 + y2, c_j)`, then
/// `γ1 = β γ•`, `γ2 = (1 - β) γ•`. Unobserved entries are untouched.
pub fn gibbs_sample_gammas<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    data: &BoundedMatrix,
    params: &DncbParams,
    rng: &mut R,
) -> Result<()> {
    check_shapes(state, data, params)?;
    let key = StreamKey::draw(rng);
    let eps = params.eps1 + params.eps2;
    let AugmentedState { y1, y2, gamma1, gamma2, .. } = state;
    Zip::indexed(gamma1.rows_mut())
        .and(gamma2.rows_mut())
        .and(y1.rows())
        .and(y2.rows())
        .par_for_each(|i, mut g1, mut g2, y1, y2| {
            let mut r = key.stream(i as u64);
            for j in 0..g1.len() {
                if !data.is_observed(i, j) {
                    continue;
                }
                let beta = data.value(i, j);
                let shape = eps + y1[j] as f64 + y2[j] as f64;
                let total = sample_gamma(shape, params.col_rates[j], &mut r);
                g1[j] = (beta * total).max(f64::MIN_POSITIVE);
                g2[j] = ((1.0 - beta) * total).max(f64::MIN_POSITIVE);
            }
        });
    Ok(())
}

/// Observed entries: `y^(t) ~ Bes(ε_t - 1, 2 sqrt(c_j γ^(t) λ^(t)))`.
/// Unobserved entries are drawn from the generative model:
/// `y^(t) ~ Pois(λ^(t))`, `γ^(t) ~ Gam(ε_t + y^(t), c_j)`.
pub fn gibbs_sample_counts<R: Rng + ?Sized>(
    state: &mut AugmentedState,
    data: &BoundedMatrix,
    rates: (&Array2<f64>, &Array2<f64>),
    params: &DncbParams,
    method: SamplerMethod,
    rng: &mut R,
) -> Result<()> {
    check_shapes(state, data, params)?;
    if rates.0.dim() != data.dim() || rates.1.dim() != data.dim() {
        return Err(DncbError::Dimension("rate matrices differ from data shape".into()));
    }
    let key = StreamKey::draw(rng);
    let errors = FirstError::new();
    let AugmentedState { y1, y2, gamma1, gamma2, .. } = state;
    Zip::indexed(y1.rows_mut())
        .and(y2.rows_mut())
        .and(gamma1.rows_mut())
        .and(gamma2.rows_mut())
        .par_for_each(|i, y1, y2, g1, g2| {
            let mut r = key.stream(i as u64);
            let mut ys = [y1, y2];
            let mut gs = [g1, g2];
            let ls = [rates.0.row(i), rates.1.row(i)];
            for j in 0..ls[0].len() {
                let c = params.col_rates[j];
                let observed = data.is_observed(i, j);
                for t in 0..2 {
                    let lam = ls[t][j];
                    let draw = if observed {
                        let a = 2.0 * (c * gs[t][j] * lam).sqrt();
                        BesselParams::new(params.eps(t) - 1.0, a)
                            .and_then(|p| sample_bessel(&p, method, &mut r))
                            .and_then(|y| {
                                u32::try_from(y).map_err(|_| DncbError::domain(format!("count {y} overflows u32")))
                            })
                    } else {
                        sample_poisson(lam, &mut r).inspect(|&y| {
                            gs[t][j] = sample_gamma(params.eps(t) + y as f64, c, &mut r);
                        })
                    };
                    match draw {
                        Ok(y) => ys[t][j] = y,
                        Err(e) => {
                            errors.set(e);
                            return;
                        }
                    }
                }
            }
        });
    errors.into_result()
}

/// Split every count into subcounts over the latent components.
///
/// DNCB-MF: `(y^(t)_ij1..K) ~ Mult(y^(t)_ij, θ^(t)_ik φ_kj)`.
/// DNCB-TD: first over clusters with weights `θ_ic (Π^(t)Φ)_cj`, then each
/// cluster's share over `k` with weights `π^(t)_ck φ_kj`; the result is the
/// same joint multinomial over `(c, k)`.
pub fn gibbs_allocate_subcounts<R: Rng + ?Sized>(state: &mut AugmentedState, factors: &Factors, rng: &mut R) -> Result<()> {
    let (ni, nj) = state.dim();
    if factors.nrows() != ni || factors.ncols() != nj {
        return Err(DncbError::Dimension(format!(
            "factors are {} x {}, state is {ni} x {nj}",
            factors.nrows(),
            factors.ncols()
        )));
    }
    let key = StreamKey::draw(rng);
    let state_ref = &*state;
    let rows: Vec<Vec<Subcount>> = match factors {
        Factors::Mf(f) => (0..ni)
            .into_par_iter()
            .map(|i| allocate_row_mf(state_ref, f, i, &mut key.stream(i as u64)))
            .collect(),
        Factors::Td(f) => {
            let pi_phi = [f.pi1.dot(&f.phi), f.pi2.dot(&f.phi)];
            (0..ni)
                .into_par_iter()
                .map(|i| allocate_row_td(state_ref, f, &pi_phi, i, &mut key.stream(i as u64)))
                .collect()
        }
    };
    state.subcounts = Subcounts {
        entries: rows.into_iter().flatten().collect(),
    };
    Ok(())
}

fn allocate_row_mf<R: Rng + ?Sized>(state: &AugmentedState, f: &MfFactors, i: usize, rng: &mut R) -> Vec<Subcount> {
    let nk = f.phi.nrows();
    let mut w = vec![0.0; nk];
    let mut out = vec![0u32; nk];
    let mut entries = Vec::new();
    for t in 0..2 {
        let theta = if t == 0 { &f.theta1 } else { &f.theta2 };
        let y = state.y(t);
        for j in 0..y.ncols() {
            let n = y[[i, j]];
            if n == 0 {
                continue;
            }
            for k in 0..nk {
                w[k] = theta[[i, k]] * f.phi[[k, j]];
            }
            multinomial(n, &w, &mut out, rng);
            for (k, &m) in out.iter().enumerate() {
                if m > 0 {
                    entries.push(Subcount { i: i as u32, j: j as u32, c: 0, k: k as u16, t: t as u8, count: m });
                }
            }
        }
    }
    entries
}

fn allocate_row_td<R: Rng + ?Sized>(
    state: &AugmentedState,
    f: &TdFactors,
    pi_phi: &[Array2<f64>; 2],
    i: usize,
    rng: &mut R,
) -> Vec<Subcount> {
    let (nc, nk) = f.pi1.dim();
    let mut wc = vec![0.0; nc];
    let mut nc_out = vec![0u32; nc];
    let mut wk = vec![0.0; nk];
    let mut nk_out = vec![0u32; nk];
    let mut entries = Vec::new();
    for t in 0..2 {
        let y = state.y(t);
        let pi = f.pi(t);
        for j in 0..y.ncols() {
            let n = y[[i, j]];
            if n == 0 {
                continue;
            }
            for c in 0..nc {
                wc[c] = f.theta[[i, c]] * pi_phi[t][[c, j]];
            }
            multinomial(n, &wc, &mut nc_out, rng);
            for c in 0..nc {
                if nc_out[c] == 0 {
                    continue;
                }
                for k in 0..nk {
                    wk[k] = pi[[c, k]] * f.phi[[k, j]];
                }
                multinomial(nc_out[c], &wk, &mut nk_out, rng);
                for (k, &m) in nk_out.iter().enumerate() {
                    if m > 0 {
                        entries.push(Subcount {
                            i: i as u32,
                            j: j as u32,
                            c: c as u16,
                            k: k as u16,
                            t: t as u8,
                            count: m,
                        });
                    }
                }
            }
        }
    }
    entries
}

/// Conjugate gamma updates for `θ^(1)`, `θ^(2)`, then `Φ`.
pub fn update_factors_mf<R: Rng + ?Sized>(
    f: &mut MfFactors,
    state: &AugmentedState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let (ni, nj) = state.dim();
    let nk = f.phi.nrows();
    let stats = state.subcounts.mf_stats(ni, nj, nk);

    let phi_row_sums = f.phi.sum_axis(Axis(1));
    for (t, theta) in [&mut f.theta1, &mut f.theta2].into_iter().enumerate() {
        for ((i, k), x) in theta.indexed_iter_mut() {
            *x = sample_gamma(hyper.eta1 + stats.theta[t][[i, k]], hyper.eta2 + phi_row_sums[k], rng);
        }
    }
    let theta_col_sums: Array1<f64> = f.theta1.sum_axis(Axis(0)) + f.theta2.sum_axis(Axis(0));
    for ((k, j), x) in f.phi.indexed_iter_mut() {
        *x = sample_gamma(hyper.nu1 + stats.phi[[k, j]], hyper.nu2 + theta_col_sums[k], rng);
    }
    Ok(())
}

/// Conjugate gamma updates for `Θ`, `Φ`, then `Π^(1)`, `Π^(2)`.
pub fn update_factors_td<R: Rng + ?Sized>(
    f: &mut TdFactors,
    state: &AugmentedState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let (ni, nj) = state.dim();
    let (nc, nk) = f.pi1.dim();
    let stats = state.subcounts.td_stats(ni, nj, nc, nk);

    // θ_ic: rate η2 + sum_t sum_k π^(t)_ck (sum_j φ_kj)
    let phi_sums = f.phi.sum_axis(Axis(1));
    let theta_rate = (&f.pi1 + &f.pi2).dot(&phi_sums);
    for ((i, c), x) in f.theta.indexed_iter_mut() {
        *x = sample_gamma(hyper.eta1 + stats.theta[[i, c]], hyper.eta2 + theta_rate[c], rng);
    }

    // φ_kj: rate ν2 + sum_t sum_c (sum_i θ_ic) π^(t)_ck
    let theta_sums = f.theta.sum_axis(Axis(0));
    let phi_rate = (&f.pi1 + &f.pi2).t().dot(&theta_sums);
    for ((k, j), x) in f.phi.indexed_iter_mut() {
        *x = sample_gamma(hyper.nu1 + stats.phi[[k, j]], hyper.nu2 + phi_rate[k], rng);
    }

    // π^(t)_ck: rate ζ2 + (sum_i θ_ic)(sum_j φ_kj)
    let phi_sums = f.phi.sum_axis(Axis(1));
    for (t, pi) in [&mut f.pi1, &mut f.pi2].into_iter().enumerate() {
        for ((c, k), x) in pi.indexed_iter_mut() {
            *x = sample_gamma(
                hyper.zeta1 + stats.pi[t][[c, k]],
                hyper.zeta2 + theta_sums[c] * phi_sums[k],
                rng,
            );
        }
    }
    Ok(())
}

pub fn update_factors<R: Rng + ?Sized>(
    factors: &mut Factors,
    state: &AugmentedState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    match factors {
        Factors::Mf(f) => update_factors_mf(f, state, hyper, rng),
        Factors::Td(f) => update_factors_td(f, state, hyper, rng),
    }
}

/// One full sweep.
pub fn gibbs_iteration<R: Rng + ?Sized>(
    model: &Model,
    data: &BoundedMatrix,
    factors: &mut Factors,
    state: &mut AugmentedState,
    rng: &mut R,
) -> Result<()> {
    gibbs_sample_gammas(state, data, &model.params, rng)?;
    let (l1, l2) = factors.rates()?;
    gibbs_sample_counts(state, data, (&l1, &l2), &model.params, model.sampler, rng)?;
    gibbs_allocate_subcounts(state, factors, rng)?;
    update_factors(factors, state, &model.hyper, rng)
}

fn check_shapes(state: &AugmentedState, data: &BoundedMatrix, params: &DncbParams) -> Result<()> {
    if state.dim() != data.dim() {
        return Err(DncbError::Dimension(format!(
            "state {:?} vs data {:?}",
            state.dim(),
            data.dim()
        )));
    }
    if params.col_rates.len() != data.ncols() {
        return Err(DncbError::Dimension(format!(
            "{} column rates for {} columns",
            params.col_rates.len(),
            data.ncols()
        )));
    }
    Ok(())
}
