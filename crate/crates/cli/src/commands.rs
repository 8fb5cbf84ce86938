use std::collections::HashMap;
use std::env;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dncb::eval::{
    log_ppd_per_cell, make_mask, prior_predictive_mse, stability_sweep, HeldoutCell, PosteriorSamples,
    StabilityReference, SweepConfig,
};
use dncb::io::{
    load_biseq, load_checkpoint, load_matrix, load_samples, save_checkpoint, save_matrix, save_samples,
    variance_filter, Delimiter, LabeledMatrix, MatrixFormat, RunConfig, SamplesFile,
};
use dncb::model::{simulate_mf, simulate_td};
use dncb::rng::{derive_seed, seeded};
use dncb::{Chain, ModelKind};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{FitArgs, Overrides, PpcArgs, PpdArgs, PreprocessArgs, SimulateArgs, StabilityArgs};
use crate::output::{write_factors, OutDir};

pub const OUT_DIR_ENV: &str = "DNCB_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "dncb-out";
const DEFAULT_N_REPS: usize = 1000;
const DEFAULT_S0: f64 = 0.1;

struct Run {
    cfg: RunConfig,
    out: OutDir,
}

fn resolve<A: Overrides>(args: &A) -> Result<Run> {
    let file = match &args.common().config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = file.merge(args.overrides());
    let root = cfg
        .out
        .take()
        .or_else(|| env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| DEFAULT_OUT_DIR.into());
    cfg.seed = Some(cfg.seed());
    Ok(Run {
        cfg,
        out: OutDir::create(root)?,
    })
}

fn need<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().ok_or_else(|| anyhow!("missing setting `{key}` (flag or config key)"))
}

fn load_labeled(path: &Path) -> Result<LabeledMatrix> {
    let fmt = MatrixFormat {
        delimiter: Delimiter::from_path(path),
        ..MatrixFormat::default()
    };
    let (m, clamped) = load_matrix(path, &fmt).with_context(|| format!("loading {}", path.display()))?;
    if clamped > 0 {
        eprintln!("warning: {clamped} values in {} clamped into (0, 1)", path.display());
    }
    Ok(m)
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let Run { cfg, out } = resolve(args)?;
    let rows = need(&cfg.rows, "rows")?;
    let cols = need(&cfg.cols, "cols")?;
    let model = cfg.model(cols)?;
    let mut rng = seeded(cfg.seed());
    let sim = match model.kind {
        ModelKind::Mf => simulate_mf(&model.hyper, &model.params, (rows, model.n_factors, cols), &mut rng)?,
        ModelKind::Td => simulate_td(
            &model.hyper,
            &model.params,
            (rows, model.n_clusters, model.n_factors, cols),
            &mut rng,
        )?,
    };
    let data = LabeledMatrix {
        row_names: names("sample", rows),
        col_names: names("feature", cols),
        matrix: sim.data,
    };
    save_matrix(&out.path("data.csv"), &data, Delimiter::Csv)?;
    let mut files = vec!["data.csv".to_string(), "truth.json".to_string()];
    files.extend(write_factors(&out, "truth_", &sim.factors, &data.row_names, &data.col_names)?);
    out.json("truth.json", &sim.factors)?;
    out.text("config.toml", &cfg.to_toml_string()?)?;
    out.json(
        "simulate.json",
        &json!({
            "command": "simulate",
            "model": model.kind,
            "rows": rows,
            "cols": cols,
            "C": model.n_clusters,
            "K": model.n_factors,
            "seed": cfg.seed(),
            "files": files,
        }),
    )
}

fn chain_file(c: usize, ext: &str) -> String {
    format!("chain{c}.{ext}")
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let Run { cfg, out } = resolve(args)?;
    let data_path = need(&cfg.data, "data")?;
    let lm = load_labeled(&data_path)?;
    let (ni, nj) = lm.matrix.dim();
    let model = cfg.model(nj)?;
    model.check_data(ni, nj)?;
    let schedule = cfg.schedule()?;
    let seed = cfg.seed();
    let n_chains = cfg.chains.unwrap_or(1);
    if n_chains == 0 {
        bail!("chains must be at least 1");
    }
    let every = cfg.checkpoint_every.unwrap_or(0) as u64;
    let resume = cfg.resume.unwrap_or(false);
    let init = cfg.init.unwrap_or_default();

    let mut heldout = 0;
    let train = match cfg.mask_fraction.unwrap_or(0.0) {
        f if f > 0.0 => {
            let mask = make_mask((ni, nj), f, cfg.mask_seed.unwrap_or(seed))?;
            // indices only: held-out values never reach this run's outputs
            let mut w = csv::Writer::from_writer(out.writer("mask.csv")?);
            w.write_record(["row", "col", "row_name", "col_name"])?;
            for ((i, j), &m) in mask.mask.indexed_iter() {
                if m && lm.matrix.is_observed(i, j) {
                    w.write_record([i.to_string(), j.to_string(), lm.row_names[i].clone(), lm.col_names[j].clone()])?;
                    heldout += 1;
                }
            }
            w.flush()?;
            lm.matrix.hide(&mask.mask)?
        }
        _ => lm.matrix.clone(),
    };

    let results: Vec<Result<PosteriorSamples>> = (0..n_chains)
        .into_par_iter()
        .map(|c| {
            let ckpt = out.path(&chain_file(c, "ckpt"));
            let partial = out.path(&chain_file(c, "samples"));
            let (mut chain, mut kept) = if resume {
                let snap = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
                if snap.model != model || snap.data != train {
                    bail!("{} was written for a different model or data", ckpt.display());
                }
                let prior = load_samples(&partial).with_context(|| format!("loading {}", partial.display()))?;
                (Chain::from_snapshot(snap)?, prior.samples)
            } else {
                let chain = Chain::new(model.clone(), train.clone(), init, derive_seed(seed, &[c as u64]))?;
                (chain, PosteriorSamples::default())
            };
            let save = |chain: &Chain, kept: &PosteriorSamples| -> dncb::Result<()> {
                save_checkpoint(&ckpt, &chain.snapshot())?;
                save_samples(
                    &partial,
                    &SamplesFile {
                        model: model.clone(),
                        samples: kept.clone(),
                    },
                )
            };
            let base = kept.clone();
            let fresh = chain.run_to(&schedule, |ch, new| {
                if every > 0 && ch.iteration() % every == 0 {
                    let mut all = base.clone();
                    all.extend(new.clone());
                    save(ch, &all)?;
                }
                Ok(())
            })?;
            kept.extend(fresh);
            save(&chain, &kept)?;
            Ok(kept)
        })
        .collect();

    let mut pooled = PosteriorSamples::default();
    let mut per_chain = Vec::with_capacity(n_chains);
    for (c, r) in results.into_iter().enumerate() {
        let s = r.with_context(|| format!("chain {c}"))?;
        per_chain.push(s.len());
        if c == 0 {
            let mean = s.mean().ok_or_else(|| anyhow!("schedule keeps no samples"))?;
            write_factors(&out, "", &mean, &lm.row_names, &lm.col_names)?;
        }
        pooled.extend(s);
    }
    save_samples(
        &out.path("samples.bin"),
        &SamplesFile {
            model: model.clone(),
            samples: pooled,
        },
    )?;
    out.text("config.toml", &cfg.to_toml_string()?)?;
    out.json(
        "fit.json",
        &json!({
            "command": "fit",
            "model": model.kind,
            "rows": ni,
            "cols": nj,
            "C": model.n_clusters,
            "K": model.n_factors,
            "observed": train.n_observed(),
            "heldout": heldout,
            "chains": n_chains,
            "iterations": schedule.iterations,
            "burn_in": schedule.burn_in,
            "thin": schedule.thin,
            "samples_per_chain": per_chain,
            "seed": seed,
            "factors_from_chain": 0,
        }),
    )
}

fn read_mask(path: &Path, data: &LabeledMatrix) -> Result<Vec<HeldoutCell>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut cells = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let idx = |k: usize| -> Result<usize> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| anyhow!("{}: line {}: bad cell index", path.display(), n + 2))
        };
        let (i, j) = (idx(0)?, idx(1)?);
        let (ni, nj) = data.matrix.dim();
        if i >= ni || j >= nj || !data.matrix.is_observed(i, j) {
            bail!("{}: line {}: cell ({i}, {j}) is not an observed cell of the data", path.display(), n + 2);
        }
        cells.push(HeldoutCell {
            i,
            j,
            beta: data.matrix.value(i, j),
        });
    }
    Ok(cells)
}

pub fn ppd(args: &PpdArgs) -> Result<()> {
    let Run { cfg, out } = resolve(args)?;
    let data = load_labeled(&need(&cfg.data, "data")?)?;
    let mask = cfg.mask.clone().unwrap_or_else(|| out.path("mask.csv"));
    let samples = cfg.samples.clone().unwrap_or_else(|| out.path("samples.bin"));
    let cells = read_mask(&mask, &data)?;
    let file = load_samples(&samples).with_context(|| format!("loading {}", samples.display()))?;
    let logs = log_ppd_per_cell(&cells, &file.samples, &file.model.params)?;
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;

    let mut w = csv::Writer::from_writer(out.writer("ppd_cells.csv")?);
    w.write_record(["row", "col", "beta", "log_ppd"])?;
    for (c, l) in cells.iter().zip(&logs) {
        w.write_record([c.i.to_string(), c.j.to_string(), format!("{:.17e}", c.beta), format!("{l:.17e}")])?;
    }
    w.flush()?;
    out.json(
        "ppd.json",
        &json!({
            "command": "ppd",
            "rescaled_ppd": mean_log.exp(),
            "mean_log_ppd": mean_log,
            "cells": cells.len(),
            "samples": file.samples.len(),
        }),
    )
}

pub fn ppc(args: &PpcArgs) -> Result<()> {
    let Run { cfg, out } = resolve(args)?;
    let data = load_labeled(&need(&cfg.data, "data")?)?;
    let model = cfg.model(data.matrix.ncols())?;
    let n_reps = cfg.n_reps.unwrap_or(DEFAULT_N_REPS);
    let (mean, sd) = prior_predictive_mse(&data.matrix, &model, n_reps, &mut seeded(cfg.seed()))?;
    out.text("config.toml", &cfg.to_toml_string()?)?;
    out.json(
        "ppc.json",
        &json!({
            "command": "ppc",
            "model": model.kind,
            "C": model.n_clusters,
            "K": model.n_factors,
            "n_reps": n_reps,
            "mse_mean": mean,
            "mse_sd": sd,
            "seed": cfg.seed(),
        }),
    )
}

/// Labels from the last column of a CSV with a header; distinct strings get
/// ids in first-seen order.
fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let label = rec.iter().next_back().unwrap_or_default().trim().to_string();
        let next = ids.len();
        out.push(*ids.entry(label).or_insert(next));
    }
    Ok(out)
}

pub fn stability(args: &StabilityArgs) -> Result<()> {
    let Run { cfg, out } = resolve(args)?;
    let data = load_labeled(&need(&cfg.data, "data")?)?;
    let nj = data.matrix.ncols();
    let kind = cfg.kind();
    let sweep = SweepConfig {
        kind,
        c_values: match kind {
            ModelKind::Td => need(&cfg.c_values, "c_values")?,
            ModelKind::Mf => Vec::new(),
        },
        k_values: need(&cfg.k_values, "k_values")?,
        hyper: cfg.hyperparams()?,
        params: cfg.params(nj)?,
        schedule: cfg.schedule()?,
        init: cfg.init.unwrap_or_default(),
        sampler: cfg.sampler.unwrap_or_default(),
        seed: cfg.seed(),
    };
    let reference = StabilityReference {
        sample_labels: cfg.sample_labels.as_deref().map(read_labels).transpose()?,
        feature_labels: cfg.feature_labels.as_deref().map(read_labels).transpose()?,
    };
    let report = stability_sweep(&data.matrix, &sweep, &reference)?;
    report.write_csv(out.writer("stability.csv")?)?;
    out.text("config.toml", &cfg.to_toml_string()?)?;
    out.json("stability.json", &report)?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} grid cells failed; see stability.csv");
    }
    Ok(())
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let Run { cfg, out } = resolve(args)?;
    let s0 = cfg.s0.unwrap_or(DEFAULT_S0);
    let m = match (&cfg.biseq, &cfg.data) {
        (Some(_), Some(_)) => bail!("give either `biseq` or `data`, not both"),
        (Some(p), None) => load_biseq(p, s0).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(p)) => load_labeled(p)?,
        (None, None) => bail!("missing setting `biseq` or `data`"),
    };
    let input_cols = m.matrix.ncols();
    let m = match cfg.top {
        Some(n) => variance_filter(&m, n)?,
        None => m,
    };
    save_matrix(&out.path("beta.csv"), &m, Delimiter::Csv)?;
    out.text("config.toml", &cfg.to_toml_string()?)?;
    out.json(
        "preprocess.json",
        &json!({
            "command": "preprocess",
            "rows": m.matrix.nrows(),
            "cols": m.matrix.ncols(),
            "input_cols": input_cols,
            "observed": m.matrix.n_observed(),
            "s0": cfg.biseq.as_ref().map(|_| s0),
        }),
    )
}
