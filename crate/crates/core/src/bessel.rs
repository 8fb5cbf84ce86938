//! The Bessel discrete distribution `Bes(v, a)` on `{0, 1, 2, ...}`:
//!
//! ```text
//! P(y) = (a/2)^(2y+v) / (y! Γ(y+v+1) I(v, a)),   v > -1, a > 0
//! ```
//!
//! It is the conditional posterior of a Poisson count whose gamma-distributed
//! partner has been observed. `a = 0` is treated as the point mass at zero.
//!
//! Samplers:
//!
//! * [`SamplerMethod::DevroyeRejection`]: rejection from the universal
//!   envelope for discrete log-concave laws, `p(m+k) <= p_m min(1, e^{1-p_m|k|})`,
//!   using the exact mode probability (needs `log I`).
//! * [`SamplerMethod::QuotientRejection`]: the same envelope driven by the
//!   lower bound `p_m >= 1/sqrt(1 + 12 σ²)`, with σ² from Bessel quotients
//!   only. No Bessel function is evaluated.
//! * [`SamplerMethod::Table`]: inversion over the PMF built by the ratio
//!   recurrence outward from the mode.
//! * [`SamplerMethod::GaussianApprox`]: rounded normal with matching
//!   moments. Approximate; never selected by [`SamplerMethod::Auto`].

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DncbError, Result};
use crate::special::{bessel_quotient, ln_gamma, log_bessel_i, series_peak};

/// Auto dispatch uses the table sampler below this mean.
pub const TABLE_MAX_MEAN: f64 = 50.0;
/// `AutoApprox` switches to the Gaussian approximation above this mean.
pub const GAUSSIAN_MIN_MEAN: f64 = 1e4;
/// The table sampler refuses means above this (its cost grows with σ).
const TABLE_HARD_MAX_MEAN: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesselParams {
    v: f64,
    a: f64,
}

impl BesselParams {
    pub fn new(v: f64, a: f64) -> Result<Self> {
        if !(v > -1.0) || !v.is_finite() {
            return Err(DncbError::domain(format!("Bessel order v={v} must satisfy v > -1")));
        }
        if !(a >= 0.0) || !a.is_finite() {
            return Err(DncbError::domain(format!("Bessel argument a={a} must be >= 0")));
        }
        Ok(BesselParams { v, a })
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn is_degenerate(&self) -> bool {
        self.a == 0.0
    }

    /// `log p(y) - log p(mode)` up to the `v log(a/2)` constant, i.e. the
    /// unnormalised log mass `2y log(a/2) - log y! - log Γ(y+v+1)`.
    #[inline]
    fn ln_unnormalized(&self, y: u64, ln_half_a: f64) -> f64 {
        let y = y as f64;
        2.0 * y * ln_half_a - ln_gamma(y + 1.0) - ln_gamma(y + self.v + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    DevroyeRejection,
    QuotientRejection,
    GaussianApprox,
    Table,
    /// Table for small means, quotient rejection otherwise. Always exact.
    #[default]
    Auto,
    /// As `Auto`, but uses the Gaussian approximation for very large means.
    AutoApprox,
}

impl SamplerMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerMethod::DevroyeRejection => "devroye_rejection",
            SamplerMethod::QuotientRejection => "quotient_rejection",
            SamplerMethod::GaussianApprox => "gaussian_approx",
            SamplerMethod::Table => "table",
            SamplerMethod::Auto => "auto",
            SamplerMethod::AutoApprox => "auto_approx",
        }
    }

    pub fn exact_methods() -> [SamplerMethod; 3] {
        [
            SamplerMethod::DevroyeRejection,
            SamplerMethod::QuotientRejection,
            SamplerMethod::Table,
        ]
    }
}

impl std::str::FromStr for SamplerMethod {
    type Err = DncbError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "devroye_rejection" | "devroye" => SamplerMethod::DevroyeRejection,
            "quotient_rejection" | "quotient" => SamplerMethod::QuotientRejection,
            "gaussian_approx" | "gaussian" => SamplerMethod::GaussianApprox,
            "table" => SamplerMethod::Table,
            "auto" => SamplerMethod::Auto,
            "auto_approx" => SamplerMethod::AutoApprox,
            other => return Err(DncbError::Config(format!("unknown sampler method {other:?}"))),
        })
    }
}

/// Normalised log PMF. Requires `a > 0`; the degenerate point mass is the
/// caller's concern.
pub fn bessel_log_pmf(y: u64, p: &BesselParams) -> Result<f64> {
    if p.a <= 0.0 {
        return Err(DncbError::domain("Bessel log pmf requires a > 0"));
    }
    let ln_half_a = (0.5 * p.a).ln();
    Ok(p.ln_unnormalized(y, ln_half_a) + p.v * ln_half_a - log_bessel_i(p.v, p.a)?)
}

/// Mode of the PMF: `floor((sqrt(a^2 + v^2) - v) / 2)`.
pub fn bessel_mode(p: &BesselParams) -> u64 {
    if p.a == 0.0 {
        0
    } else {
        series_peak(p.v, p.a)
    }
}

/// Mean `a R(v, a) / 2`.
pub fn bessel_mean(p: &BesselParams) -> Result<f64> {
    if p.a == 0.0 {
        return Ok(0.0);
    }
    Ok(0.5 * p.a * bessel_quotient(p.v, p.a)?)
}

/// Variance `μ (1 + (a/2) (R(v+1, a) - R(v, a)))`; never exceeds the mean.
pub fn bessel_variance(p: &BesselParams) -> Result<f64> {
    if p.a == 0.0 {
        return Ok(0.0);
    }
    let r0 = bessel_quotient(p.v, p.a)?;
    let r1 = bessel_quotient(p.v + 1.0, p.a)?;
    let mu = 0.5 * p.a * r0;
    Ok((mu * (1.0 + 0.5 * p.a * (r1 - r0))).max(0.0))
}

/// Draw one variate from `Bes(v, a)`.
pub fn sample_bessel<R: Rng + ?Sized>(p: &BesselParams, method: SamplerMethod, rng: &mut R) -> Result<u64> {
    if p.a == 0.0 {
        return Ok(0);
    }
    match method {
        SamplerMethod::DevroyeRejection => sample_devroye(p, rng),
        SamplerMethod::QuotientRejection => sample_quotient(p, rng),
        SamplerMethod::Table => {
            let mu = bessel_mean(p)?;
            if mu > TABLE_HARD_MAX_MEAN {
                return Err(DncbError::MethodUnavailable {
                    method: "table",
                    reason: format!("mean {mu:.3e} exceeds {TABLE_HARD_MAX_MEAN:e}"),
                });
            }
            Ok(sample_table(p, rng))
        }
        SamplerMethod::GaussianApprox => sample_gaussian(p, rng),
        SamplerMethod::Auto | SamplerMethod::AutoApprox => {
            let mu = bessel_mean(p)?;
            if mu < TABLE_MAX_MEAN {
                Ok(sample_table(p, rng))
            } else if method == SamplerMethod::AutoApprox && mu > GAUSSIAN_MIN_MEAN {
                sample_gaussian(p, rng)
            } else {
                sample_quotient(p, rng)
            }
        }
    }
}

fn sample_devroye<R: Rng + ?Sized>(p: &BesselParams, rng: &mut R) -> Result<u64> {
    let mode = bessel_mode(p);
    let p_mode = bessel_log_pmf(mode, p)?.exp();
    Ok(log_concave_rejection(p, mode, p_mode, rng))
}

fn sample_quotient<R: Rng + ?Sized>(p: &BesselParams, rng: &mut R) -> Result<u64> {
    let mode = bessel_mode(p);
    let var = bessel_variance(p)?;
    let p_mode_bound = 1.0 / (1.0 + 12.0 * var).sqrt();
    Ok(log_concave_rejection(p, mode, p_mode_bound, rng))
}

/// Rejection from `h(x) = min(1, exp(w - q|x|))`, `w = 1 + q/2`, rounded to
/// the nearest integer offset from the mode. Valid whenever `q <= p(mode)`
/// because the PMF is log-concave. Expected trials: `2 (w + 1) p(mode) / q`.
fn log_concave_rejection<R: Rng + ?Sized>(p: &BesselParams, mode: u64, q: f64, rng: &mut R) -> u64 {
    let ln_half_a = (0.5 * p.a).ln();
    let ln_mode = p.ln_unnormalized(mode, ln_half_a);
    let w = 1.0 + 0.5 * q;
    let flat = w / (1.0 + w);
    loop {
        let u: f64 = rng.random();
        let (x, ln_env) = if u < flat {
            (rng.random::<f64>() * w / q, 0.0)
        } else {
            let e: f64 = Exp1.sample(rng);
            ((w + e) / q, -e)
        };
        let x = if rng.random::<bool>() { x } else { -x };
        let k = x.round();
        let y = mode as f64 + k;
        if y < 0.0 {
            continue;
        }
        let y = y as u64;
        let ln_w: f64 = rng.random::<f64>().ln();
        if ln_w + ln_env <= p.ln_unnormalized(y, ln_half_a) - ln_mode {
            return y;
        }
    }
}

/// Inversion from the mode outward. Relative weights come from
/// `p(y+1)/p(y) = (a/2)^2 / ((y+1)(y+1+v))`; the table is walked twice
/// (once to normalise, once to invert) instead of being stored.
fn sample_table<R: Rng + ?Sized>(p: &BesselParams, rng: &mut R) -> u64 {
    let mode = bessel_mode(p);
    let half_sq = 0.25 * p.a * p.a;
    let v = p.v;
    let up = |y: f64| half_sq / ((y + 1.0) * (y + 1.0 + v));

    let mut right_sum = 1.0;
    let mut w = 1.0;
    let mut y = mode as f64;
    loop {
        w *= up(y);
        y += 1.0;
        right_sum += w;
        if w < 1e-17 * right_sum {
            break;
        }
    }
    let mut left_sum = 0.0;
    let mut w = 1.0;
    let mut y = mode as f64;
    while y > 0.0 {
        w /= up(y - 1.0);
        y -= 1.0;
        left_sum += w;
        if w < 1e-17 * (left_sum + right_sum) {
            break;
        }
    }

    let mut u = rng.random::<f64>() * (right_sum + left_sum);
    if u < right_sum {
        let mut w = 1.0;
        let mut y = mode;
        loop {
            if u < w {
                return y;
            }
            u -= w;
            w *= up(y as f64);
            y += 1;
            if w == 0.0 {
                return y - 1;
            }
        }
    }
    u -= right_sum;
    let mut w = 1.0;
    let mut y = mode;
    while y > 0 {
        w /= up((y - 1) as f64);
        y -= 1;
        if u < w {
            return y;
        }
        u -= w;
    }
    0
}

fn sample_gaussian<R: Rng + ?Sized>(p: &BesselParams, rng: &mut R) -> Result<u64> {
    let mu = bessel_mean(p)?;
    let var = bessel_variance(p)?;
    if var < 1.0 {
        return Err(DncbError::MethodUnavailable {
            method: "gaussian_approx",
            reason: format!("variance {var:.3e} < 1; the normal approximation is meaningless"),
        });
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok((mu + var.sqrt() * z).round().max(0.0) as u64)
}
