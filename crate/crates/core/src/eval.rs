//! Evaluation: held-out predictive density, prior predictive checks and
//! co-clustering stability across model cardinalities.

use std::io::Write;

use ndarray::{Array2, Axis, Zip};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DncbError, Result};
use crate::model::{
    compose_rates_mf, compose_rates_td, sample_mf_prior, sample_observations, sample_td_prior, BoundedMatrix, Chain,
    DncbParams, Factors, Hyperparams, InitStrategy, Model, ModelKind, Schedule,
};
use crate::rng::{derive_seed, seeded, StreamKey};
use crate::special::{dncb_log_pdf, log_sum_exp};
use crate::SamplerMethod;

pub use crate::model::PosteriorSamples;

/// Cells hidden from inference for held-out evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMask {
    /// `true` = held out.
    pub mask: Array2<bool>,
    pub fraction: f64,
    pub seed: u64,
}

impl HeldoutMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Held-out cells that are observed in `data`, with their true values.
    pub fn cells(&self, data: &BoundedMatrix) -> Result<Vec<HeldoutCell>> {
        if self.mask.dim() != data.dim() {
            return Err(DncbError::Dimension("mask shape differs from data".into()));
        }
        Ok(self
            .mask
            .indexed_iter()
            .filter(|&((i, j), &m)| m && data.is_observed(i, j))
            .map(|((i, j), _)| HeldoutCell { i, j, beta: data.value(i, j) })
            .collect())
    }
}

/// Hold out exactly `round(fraction * I * J)` cells, chosen uniformly
/// without replacement.
pub fn make_mask(dims: (usize, usize), fraction: f64, seed: u64) -> Result<HeldoutMask> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DncbError::domain(format!("held-out fraction {fraction} must lie in (0, 1)")));
    }
    let n = dims.0 * dims.1;
    let m = (fraction * n as f64).round() as usize;
    let mut mask = Array2::from_elem(dims, false);
    let mut rng = seeded(seed);
    for idx in sample_indices(&mut rng, n, m) {
        mask[[idx / dims.1, idx % dims.1]] = true;
    }
    Ok(HeldoutMask { mask, fraction, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutCell {
    pub i: usize,
    pub j: usize,
    pub beta: f64,
}

/// `exp(mean over cells of log((1/S) sum_s DNCB(β_ij; ε, λ_s)))`.
pub fn rescaled_ppd(cells: &[HeldoutCell], samples: &PosteriorSamples, params: &DncbParams) -> Result<f64> {
    let logs = log_ppd_per_cell(cells, samples, params)?;
    Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

/// Log of the per-cell posterior predictive density, in cell order.
pub fn log_ppd_per_cell(cells: &[HeldoutCell], samples: &PosteriorSamples, params: &DncbParams) -> Result<Vec<f64>> {
    if cells.is_empty() {
        return Err(DncbError::domain("no held-out cells"));
    }
    if samples.is_empty() {
        return Err(DncbError::domain("no posterior samples"));
    }
    let rates: Vec<(Array2<f64>, Array2<f64>)> = samples.samples.iter().map(|f| f.rates()).collect::<Result<_>>()?;
    let (ni, nj) = rates[0].0.dim();
    if let Some(c) = cells.iter().find(|c| c.i >= ni || c.j >= nj) {
        return Err(DncbError::Dimension(format!("cell ({}, {}) outside {ni} x {nj}", c.i, c.j)));
    }
    if rates.iter().any(|r| r.0.dim() != (ni, nj)) {
        return Err(DncbError::Dimension("posterior samples differ in shape".into()));
    }
    let ln_s = (rates.len() as f64).ln();
    cells
        .par_iter()
        .map(|c| {
            let terms: Vec<f64> = rates
                .iter()
                .map(|(l1, l2)| dncb_log_pdf(c.beta, params.eps1, params.eps2, l1[[c.i, c.j]], l2[[c.i, c.j]]))
                .collect::<Result<_>>()?;
            let v = log_sum_exp(&terms) - ln_s;
            if v == f64::NEG_INFINITY || v.is_nan() {
                return Err(DncbError::Underflow(format!(
                    "predictive density at ({}, {}) is zero",
                    c.i, c.j
                )));
            }
            Ok(v)
        })
        .collect()
}

/// Mean squared error over the observed entries of `data`.
pub fn mse(data: &BoundedMatrix, predicted: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != data.dim() {
        return Err(DncbError::Dimension("prediction shape differs from data".into()));
    }
    let mut s = 0.0;
    let mut n = 0usize;
    Zip::from(data.values())
        .and(data.observed())
        .and(predicted)
        .for_each(|b, &o, p| {
            if o {
                s += (b - p) * (b - p);
                n += 1;
            }
        });
    if n == 0 {
        return Err(DncbError::domain("no observed entries"));
    }
    Ok(s / n as f64)
}

/// Simulate `n_reps` matrices from the prior of `model` and report the mean
/// and standard deviation of their MSE against `data`.
pub fn prior_predictive_mse<R: Rng + ?Sized>(
    data: &BoundedMatrix,
    model: &Model,
    n_reps: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_reps == 0 {
        return Err(DncbError::domain("n_reps must be at least 1"));
    }
    let (ni, nj) = data.dim();
    model.check_data(ni, nj)?;
    let key = StreamKey::draw(rng);
    let errs: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = key.stream(r as u64);
            let (l1, l2) = match model.kind {
                ModelKind::Mf => compose_rates_mf(&sample_mf_prior(&model.hyper, ni, model.n_factors, nj, &mut rng))?,
                ModelKind::Td => compose_rates_td(&sample_td_prior(
                    &model.hyper,
                    ni,
                    model.n_clusters,
                    model.n_factors,
                    nj,
                    &mut rng,
                ))?,
            };
            let (_, sim) = sample_observations(&l1, &l2, &model.params, &mut rng)?;
            mse(data, sim.values())
        })
        .collect::<Result<_>>()?;
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let sd = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, sd))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Samples,
    Features,
}

/// Hard cluster labels: `argmax_c θ_ic` for samples, `argmax_k φ_kj` for
/// features. Ties go to the lowest index.
pub fn hard_labels(factors: &Factors, side: Side) -> Vec<usize> {
    let argmax = |it: ndarray::ArrayView1<f64>| {
        it.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &x)| if x > best.1 { (k, x) } else { best })
            .0
    };
    match side {
        Side::Samples => factors.sample_loadings().axis_iter(Axis(0)).map(argmax).collect(),
        Side::Features => factors.phi().axis_iter(Axis(1)).map(argmax).collect(),
    }
}

/// `A_ab = 1` iff `labels[a] == labels[b]`.
pub fn cooccurrence_from_labels(labels: &[usize]) -> Array2<f64> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(a, b)| if labels[a] == labels[b] { 1.0 } else { 0.0 })
}

pub fn cooccurrence(factors: &Factors, side: Side) -> Array2<f64> {
    cooccurrence_from_labels(&hard_labels(factors, side))
}

/// Additive smoothing applied to co-occurrence entries before normalising.
pub const KL_SMOOTHING: f64 = 1e-6;

/// `KL(P || Q)` where `P`, `Q` are the smoothed matrices normalised over all
/// entries.
pub fn stability_kl(reference: &Array2<f64>, induced: &Array2<f64>) -> Result<f64> {
    if reference.dim() != induced.dim() {
        return Err(DncbError::Dimension(format!(
            "co-occurrence shapes {:?} vs {:?}",
            reference.dim(),
            induced.dim()
        )));
    }
    let zp: f64 = reference.iter().map(|x| x + KL_SMOOTHING).sum();
    let zq: f64 = induced.iter().map(|x| x + KL_SMOOTHING).sum();
    let kl: f64 = Zip::from(reference).and(induced).fold(0.0, |acc, a, b| {
        let p = (a + KL_SMOOTHING) / zp;
        let q = (b + KL_SMOOTHING) / zq;
        acc + p * (p / q).ln()
    });
    Ok(kl.max(0.0))
}

/// Reference co-occurrences for a stability sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReference {
    /// External sample labels; when absent the fit at the smallest grid cell
    /// is the reference.
    pub sample_labels: Option<Vec<usize>>,
    pub feature_labels: Option<Vec<usize>>,
}

/// Grid and fit budget of a stability sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: ModelKind,
    /// Ignored for DNCB-MF.
    pub c_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub hyper: Hyperparams,
    pub params: DncbParams,
    pub schedule: Schedule,
    pub init: InitStrategy,
    pub sampler: SamplerMethod,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub c: usize,
    pub k: usize,
    pub sample_kl: Option<f64>,
    pub feature_kl: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: ModelKind,
    /// `"labels"` or `"smallest_cell"`, per side.
    pub sample_reference: String,
    pub feature_reference: String,
    pub cells: Vec<StabilityCell>,
}

impl StabilityReport {
    pub fn cell(&self, c: usize, k: usize) -> Option<&StabilityCell> {
        self.cells.iter().find(|x| x.c == c && x.k == k)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["C", "K", "sample_kl", "feature_kl", "error"])?;
        let f = |x: Option<f64>| x.map(|v| format!("{v:.17e}")).unwrap_or_default();
        for c in &self.cells {
            out.write_record([
                c.c.to_string(),
                c.k.to_string(),
                f(c.sample_kl),
                f(c.feature_kl),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Fitted {
    c: usize,
    k: usize,
    result: Result<(Vec<usize>, Vec<usize>)>,
}

/// Fit one chain per `(C, K)` grid cell (in parallel) and compare the
/// induced hard co-occurrences with the reference. Fit failures are recorded
/// in the cell, not propagated.
pub fn stability_sweep(data: &BoundedMatrix, cfg: &SweepConfig, reference: &StabilityReference) -> Result<StabilityReport> {
    if cfg.k_values.is_empty() || (cfg.kind == ModelKind::Td && cfg.c_values.is_empty()) {
        return Err(DncbError::Config("stability grid is empty".into()));
    }
    let (ni, nj) = data.dim();
    if reference.sample_labels.as_ref().is_some_and(|l| l.len() != ni)
        || reference.feature_labels.as_ref().is_some_and(|l| l.len() != nj)
    {
        return Err(DncbError::Dimension("reference labels do not match data shape".into()));
    }
    let mut grid: Vec<(usize, usize)> = match cfg.kind {
        ModelKind::Mf => cfg.k_values.iter().map(|&k| (k, k)).collect(),
        ModelKind::Td => cfg
            .c_values
            .iter()
            .flat_map(|&c| cfg.k_values.iter().map(move |&k| (c, k)))
            .collect(),
    };
    grid.sort_unstable();
    grid.dedup();

    let fits: Vec<Fitted> = grid
        .par_iter()
        .map(|&(c, k)| Fitted {
            c,
            k,
            result: fit_labels(data, cfg, c, k),
        })
        .collect();

    let smallest = &fits[0];
    let sample_ref = match &reference.sample_labels {
        Some(l) => Some(cooccurrence_from_labels(l)),
        None => smallest.result.as_ref().ok().map(|(s, _)| cooccurrence_from_labels(s)),
    };
    let feature_ref = match &reference.feature_labels {
        Some(l) => Some(cooccurrence_from_labels(l)),
        None => smallest.result.as_ref().ok().map(|(_, f)| cooccurrence_from_labels(f)),
    };

    let mut cells = Vec::with_capacity(fits.len());
    for fit in &fits {
        let cell = match &fit.result {
            Ok((s, f)) => StabilityCell {
                c: fit.c,
                k: fit.k,
                sample_kl: sample_ref
                    .as_ref()
                    .map(|r| stability_kl(r, &cooccurrence_from_labels(s)))
                    .transpose()?,
                feature_kl: feature_ref
                    .as_ref()
                    .map(|r| stability_kl(r, &cooccurrence_from_labels(f)))
                    .transpose()?,
                error: None,
            },
            Err(e) => StabilityCell {
                c: fit.c,
                k: fit.k,
                sample_kl: None,
                feature_kl: None,
                error: Some(e.to_string()),
            },
        };
        cells.push(cell);
    }
    let name = |external: bool| if external { "labels" } else { "smallest_cell" }.to_string();
    Ok(StabilityReport {
        kind: cfg.kind,
        sample_reference: name(reference.sample_labels.is_some()),
        feature_reference: name(reference.feature_labels.is_some()),
        cells,
    })
}

fn fit_labels(data: &BoundedMatrix, cfg: &SweepConfig, c: usize, k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let model = match cfg.kind {
        ModelKind::Mf => Model::mf(k, cfg.hyper, cfg.params.clone())?,
        ModelKind::Td => Model::td(c, k, cfg.hyper, cfg.params.clone())?,
    }
    .with_sampler(cfg.sampler);
    let seed = derive_seed(cfg.seed, &[c as u64, k as u64]);
    let mut chain = Chain::new(model, data.clone(), cfg.init, seed)?;
    chain.run(&Schedule::new(cfg.schedule.iterations, cfg.schedule.iterations, 1)?)?;
    // point summary from the final sample
    let f = chain.factors();
    Ok((hard_labels(f, Side::Samples), hard_labels(f, Side::Features)))
}
