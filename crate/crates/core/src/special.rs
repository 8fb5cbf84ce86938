//! Scalar special functions behind the DNCB density and the Bessel
//! distribution.
//!
//! Everything here is a pure function of its arguments. Modified Bessel
//! functions are only ever produced in log space; callers that need ratios use
//! [`bessel_quotient`], which never evaluates the Bessel function itself.

use crate::error::{DncbError, Result};

/// Values of `|M(a,b,c)|` above this are rescaled while summing.
const SERIES_RESCALE: f64 = 1e250;

/// Kummer series: stop once a term drops below this fraction of the sum.
const KUMMER_TOL: f64 = 1e-15;
const KUMMER_MAX_TERMS: usize = 100_000;

/// Below this argument the Hankel expansion is not attempted.
const HANKEL_MIN_ARG: f64 = 50.0;

const QUOTIENT_TOL: f64 = 1e-16;
const QUOTIENT_MAX_ITER: usize = 1_000_000;

/// Joint Poisson tail mass dropped when truncating the DNCB mixture.
pub const DNCB_TAIL_MASS: f64 = 1e-12;
/// Maximum number of (y1, y2) mixture terms evaluated by [`dncb_log_pdf`].
pub const DNCB_MAX_TERMS: usize = 1_000_000;

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log(n!)`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_bessel_args(v: f64, a: f64) -> Result<()> {
    if !(v > -1.0) || !v.is_finite() {
        return Err(DncbError::domain(format!("Bessel order v={v} must satisfy v > -1")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(DncbError::domain(format!("Bessel argument a={a} must be positive")));
    }
    Ok(())
}

/// `floor((sqrt(a^2 + v^2) - v) / 2)`: index of the largest term of the
/// power series of `I(v, a)`, which is also the mode of `Bes(v, a)`.
pub(crate) fn series_peak(v: f64, a: f64) -> u64 {
    let r = ((a * a + v * v).sqrt() - v) / 2.0;
    let mut m = if r > 0.0 { r.floor() as u64 } else { 0 };
    let half_sq = 0.25 * a * a;
    // Guard against rounding in `r`: the mode satisfies
    // m (m + v) <= a^2/4 <= (m + 1)(m + 1 + v).
    while m > 0 && (m as f64) * (m as f64 + v) > half_sq {
        m -= 1;
    }
    while (m as f64 + 1.0) * (m as f64 + 1.0 + v) < half_sq {
        m += 1;
    }
    m
}

/// `log I(v, a)`, the modified Bessel function of the first kind.
///
/// Large arguments use the Hankel expansion when it converges to double
/// precision; otherwise the power series is summed outward from its largest
/// term, entirely in scaled arithmetic.
pub fn log_bessel_i(v: f64, a: f64) -> Result<f64> {
    check_bessel_args(v, a)?;
    if a >= HANKEL_MIN_ARG {
        if let Some(x) = log_bessel_i_hankel(v, a) {
            return Ok(x);
        }
    }
    Ok(log_bessel_i_series(v, a))
}

fn log_bessel_i_series(v: f64, a: f64) -> f64 {
    let half = 0.5 * a;
    let half_sq = half * half;
    let ln_half = half.ln();
    let peak = series_peak(v, a);
    let pf = peak as f64;
    let ln_peak_term = (2.0 * pf + v) * ln_half - ln_gamma(pf + 1.0) - ln_gamma(pf + v + 1.0);

    let mut sum = 1.0;
    let mut term = 1.0;
    let mut n = pf;
    loop {
        term *= half_sq / ((n + 1.0) * (n + 1.0 + v));
        sum += term;
        n += 1.0;
        if term < 1e-17 * sum {
            break;
        }
    }
    term = 1.0;
    let mut n = pf;
    while n > 0.0 {
        term *= n * (n + v) / half_sq;
        sum += term;
        n -= 1.0;
        if term < 1e-17 * sum {
            break;
        }
    }
    ln_peak_term + sum.ln()
}

fn log_bessel_i_hankel(v: f64, a: f64) -> Option<f64> {
    let mu = 4.0 * v * v;
    let mut term: f64 = 1.0;
    let mut sum = 1.0;
    for k in 1..80 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * a);
        if next.abs() >= term.abs() && next != 0.0 {
            return None;
        }
        term = next;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            if sum <= 0.0 {
                return None;
            }
            return Some(a - 0.5 * (2.0 * std::f64::consts::PI * a).ln() + sum.ln());
        }
    }
    None
}

/// Bessel quotient `R(v, a) = I(v+1, a) / I(v, a)`.
///
/// Evaluated from the continued fraction
/// `R = 1 / (2(v+1)/a + 1 / (2(v+2)/a + ...))` with the modified Lentz
/// algorithm; no Bessel function is computed.
pub fn bessel_quotient(v: f64, a: f64) -> Result<f64> {
    check_bessel_args(v, a)?;
    let b = |j: usize| 2.0 * (v + j as f64) / a;
    let tiny = 1e-300;
    let mut f = b(1);
    let mut c = f;
    let mut d = 0.0;
    for j in 2..QUOTIENT_MAX_ITER {
        let bj = b(j);
        d += bj;
        if d == 0.0 {
            d = tiny;
        }
        d = 1.0 / d;
        c = bj + 1.0 / c;
        if c == 0.0 {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < QUOTIENT_TOL {
            return Ok(1.0 / f);
        }
    }
    Err(DncbError::Convergence {
        what: "Bessel quotient continued fraction",
        iterations: QUOTIENT_MAX_ITER,
    })
}

/// Arguments of Kummer's confluent hypergeometric function `M(a, b, c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KummerArgs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl KummerArgs {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        KummerArgs { a, b, c }
    }
}

/// Power series of `M(a, b, x)` for `x >= 0`, returned as `(sum, log_scale)`
/// with `M = sum * exp(log_scale)`.
fn kummer_series(a: f64, b: f64, x: f64) -> Result<(f64, f64)> {
    let mut sum = 1.0;
    let mut term = 1.0;
    let mut log_scale = 0.0;
    let mut n = 0.0;
    for _ in 0..KUMMER_MAX_TERMS {
        let ratio = (a + n) / (b + n) * x / (n + 1.0);
        term *= ratio;
        sum += term;
        n += 1.0;
        if term == 0.0 {
            return Ok((sum, log_scale));
        }
        let next_ratio = ((a + n) / (b + n) * x / (n + 1.0)).abs();
        if term.abs() < KUMMER_TOL * sum.abs() && next_ratio < 1.0 {
            return Ok((sum, log_scale));
        }
        if sum.abs() > SERIES_RESCALE {
            sum /= SERIES_RESCALE;
            term /= SERIES_RESCALE;
            log_scale += SERIES_RESCALE.ln();
        }
    }
    Err(DncbError::Convergence {
        what: "Kummer M series",
        iterations: KUMMER_MAX_TERMS,
    })
}

/// Kummer's confluent hypergeometric function `M(a, b, c)`.
///
/// Negative arguments go through Kummer's transformation
/// `M(a, b, c) = e^c M(b - a, b, -c)` so the summed series never alternates
/// in `c`; the scale is carried in log space to avoid overflow.
pub fn kummer_m(args: KummerArgs) -> Result<f64> {
    let KummerArgs { a, b, c } = args;
    if !(b > 0.0) || !b.is_finite() {
        return Err(DncbError::domain(format!("Kummer M requires b > 0, got b={b}")));
    }
    if !a.is_finite() || !c.is_finite() {
        return Err(DncbError::domain("Kummer M requires finite a and c"));
    }
    if c >= 0.0 {
        let (sum, log_scale) = kummer_series(a, b, c)?;
        Ok(sum * log_scale.exp())
    } else {
        let (sum, log_scale) = kummer_series(b - a, b, -c)?;
        Ok(sum * (c + log_scale).exp())
    }
}

/// `q = M(1, 2 b0 + 1, -zeta)`, the weight on 1/2 in the closed-form
/// expectation of a symmetric-shape DNCB variable.
pub fn q_factor(b0: f64, zeta: f64) -> Result<f64> {
    if !(b0 > 0.0) {
        return Err(DncbError::domain(format!("q_factor requires b0 > 0, got {b0}")));
    }
    if !(zeta >= 0.0) {
        return Err(DncbError::domain(format!("q_factor requires zeta >= 0, got {zeta}")));
    }
    kummer_m(KummerArgs::new(1.0, 2.0 * b0 + 1.0, -zeta))
}

/// A symmetric-shape DNCB moment scenario: shapes `b0`, total Poisson rate
/// `zeta` split in proportion `rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentScenario {
    pub b0: f64,
    pub zeta: f64,
    pub rho: f64,
    pub q: f64,
}

impl MomentScenario {
    pub fn new(b0: f64, zeta: f64, rho: f64) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(DncbError::domain(format!("zeta must be positive, got {zeta}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(DncbError::domain(format!("rho must lie in (0,1), got {rho}")));
        }
        let q = q_factor(b0, zeta)?;
        Ok(MomentScenario { b0, zeta, rho, q })
    }
}

/// `E[beta]` with the latent counts marginalised out:
/// `0.5 M(1, 2b0+1, -zeta) + rho zeta / (2b0+1) M(1, 2b0+2, -zeta)`.
pub fn expected_beta(s: &MomentScenario) -> Result<f64> {
    let b = 2.0 * s.b0 + 1.0;
    let m1 = kummer_m(KummerArgs::new(1.0, b, -s.zeta))?;
    let m2 = kummer_m(KummerArgs::new(1.0, b + 1.0, -s.zeta))?;
    Ok(0.5 * m1 + s.rho * s.zeta / b * m2)
}

/// Window of a Poisson(`lam`) pmf holding all but `tail` of its mass, as
/// `(first index, log pmf values)`. The weights are self-normalised so the
/// result does not depend on the accuracy of `ln_gamma` at large arguments.
pub(crate) fn poisson_window(lam: f64, tail: f64) -> (u64, Vec<f64>) {
    if lam == 0.0 {
        return (0, vec![0.0]);
    }
    let mode = lam.floor() as u64;
    let mut right = vec![1.0];
    let mut w = 1.0;
    let mut total = 1.0;
    let mut k = mode as f64;
    loop {
        w *= lam / (k + 1.0);
        k += 1.0;
        total += w;
        right.push(w);
        if w < 1e-20 * total {
            break;
        }
    }
    let mut left = Vec::new();
    let mut w = 1.0;
    let mut k = mode as f64;
    while k > 0.0 {
        w *= k / lam;
        k -= 1.0;
        total += w;
        left.push(w);
        if w < 1e-20 * total {
            break;
        }
    }
    // Trim the ends while the dropped mass stays under `tail`.
    let mut weights: Vec<f64> = left.iter().rev().chain(right.iter()).map(|w| w / total).collect();
    let mut first = mode - left.len() as u64;
    let mut dropped = 0.0;
    let (mut lo, mut hi) = (0, weights.len());
    loop {
        let cand_lo = if lo + 1 < hi { weights[lo] } else { f64::INFINITY };
        let cand_hi = if hi > lo + 1 { weights[hi - 1] } else { f64::INFINITY };
        let smallest = cand_lo.min(cand_hi);
        if dropped + smallest > tail {
            break;
        }
        dropped += smallest;
        if cand_lo <= cand_hi {
            lo += 1;
        } else {
            hi -= 1;
        }
    }
    first += lo as u64;
    weights = weights[lo..hi].to_vec();
    (first, weights.into_iter().map(f64::ln).collect())
}

fn check_dncb_args(beta: f64, eps1: f64, eps2: f64, lam1: f64, lam2: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(DncbError::domain(format!("DNCB density needs beta in (0,1), got {beta}")));
    }
    if !(eps1 > 0.0 && eps2 > 0.0) || !eps1.is_finite() || !eps2.is_finite() {
        return Err(DncbError::domain("DNCB shapes must be positive and finite"));
    }
    if !(lam1 >= 0.0 && lam2 >= 0.0) || !lam1.is_finite() || !lam2.is_finite() {
        return Err(DncbError::domain("DNCB non-centralities must be nonnegative and finite"));
    }
    Ok(())
}

/// Log density of `DNCB(eps1, eps2, lam1, lam2)` at `beta`.
///
/// Evaluated as the Poisson-beta mixture
/// `sum_{y1,y2} Pois(y1; lam1) Pois(y2; lam2) Beta(beta; eps1 + y1, eps2 + y2)`
/// with the joint Poisson tail beyond [`DNCB_TAIL_MASS`] dropped.
pub fn dncb_log_pdf(beta: f64, eps1: f64, eps2: f64, lam1: f64, lam2: f64) -> Result<f64> {
    check_dncb_args(beta, eps1, eps2, lam1, lam2)?;
    let (lo1, w1) = poisson_window(lam1, 0.5 * DNCB_TAIL_MASS);
    let (lo2, w2) = poisson_window(lam2, 0.5 * DNCB_TAIL_MASS);
    if w1.len().saturating_mul(w2.len()) > DNCB_MAX_TERMS {
        return Err(DncbError::Convergence {
            what: "DNCB mixture truncation",
            iterations: DNCB_MAX_TERMS,
        });
    }
    let ln_b = beta.ln();
    let ln_1mb = (-beta).ln_1p();
    let a_terms: Vec<f64> = w1
        .iter()
        .enumerate()
        .map(|(n, lw)| {
            let s = eps1 + (lo1 + n as u64) as f64;
            lw + (s - 1.0) * ln_b - ln_gamma(s)
        })
        .collect();
    let b_terms: Vec<f64> = w2
        .iter()
        .enumerate()
        .map(|(n, lw)| {
            let s = eps2 + (lo2 + n as u64) as f64;
            lw + (s - 1.0) * ln_1mb - ln_gamma(s)
        })
        .collect();
    let eps_sum = eps1 + eps2 + (lo1 + lo2) as f64;
    let g_terms: Vec<f64> = (0..w1.len() + w2.len())
        .map(|n| ln_gamma(eps_sum + n as f64))
        .collect();

    let mut max = f64::NEG_INFINITY;
    for (n1, a) in a_terms.iter().enumerate() {
        for (n2, b) in b_terms.iter().enumerate() {
            max = max.max(a + b + g_terms[n1 + n2]);
        }
    }
    if !max.is_finite() {
        return Ok(max);
    }
    let mut acc = 0.0;
    for (n1, a) in a_terms.iter().enumerate() {
        let row = a - max;
        for (n2, b) in b_terms.iter().enumerate() {
            acc += (row + b + g_terms[n1 + n2]).exp();
        }
    }
    Ok(max + acc.ln())
}

/// Log density of the standard beta distribution.
pub fn beta_log_pdf(beta: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * beta.ln() + (b - 1.0) * (-beta).ln_1p() + ln_gamma(a + b)
        - ln_gamma(a)
        - ln_gamma(b)
}
