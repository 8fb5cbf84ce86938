use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dncb::io::RunConfig;
use dncb::{InitStrategy, ModelKind, SamplerMethod};

/// Doubly non-central beta matrix factorization and tri-factorization.
///
/// Every flag has a config-file key of the same name with `-` spelled `_`
/// (`--burn-in` is `burn_in`; `--C`, `--K` are `c`, `k`). Flags override
/// the file.
#[derive(Debug, Parser)]
#[command(name = "dncb", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic matrix and its ground-truth factors from the prior.
    Simulate(SimulateArgs),
    /// Run Gibbs chains; write checkpoints, posterior samples and factor CSVs.
    Fit(FitArgs),
    /// Rescaled posterior predictive density of the held-out cells of a fit.
    Ppd(PpdArgs),
    /// Prior predictive check: mean squared error of prior draws.
    Ppc(PpcArgs),
    /// Stability sweep over a (C, K) grid.
    Stability(StabilityArgs),
    /// Build a beta-value matrix from bisulfite read counts or filter one.
    ///
    /// Subset selection rules that depend on the raw source (for example the
    /// face-image subset of the Olivetti set) are not automated; vectorize
    /// and select upstream, then pass the matrix with --data.
    Preprocess(PreprocessArgs),
}

pub trait Overrides {
    fn overrides(&self) -> RunConfig;
    fn common(&self) -> &Common;
}

#[derive(Debug, Args)]
pub struct Common {
    /// RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $DNCB_OUT_DIR, else ./dncb-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn apply(&self, c: &mut RunConfig) {
        c.seed = self.seed;
        c.out = self.out.clone();
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model: mf or td [default: td]
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Sample clusters (td).
    #[arg(long = "C", visible_alias = "c")]
    pub c: Option<usize>,
    /// Feature factors.
    #[arg(long = "K", visible_alias = "k")]
    pub k: Option<usize>,
    /// Likelihood shape for the first component (required).
    #[arg(long)]
    pub eps1: Option<f64>,
    /// Likelihood shape for the second component (required).
    #[arg(long)]
    pub eps2: Option<f64>,
    /// Per-column gamma rates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub col_rates: Option<Vec<f64>>,
    /// Gamma shape of the sample-factor prior [default: 1]
    #[arg(long)]
    pub eta1: Option<f64>,
    /// Gamma rate of the sample-factor prior [default: 1]
    #[arg(long)]
    pub eta2: Option<f64>,
    /// Gamma shape of the feature-factor prior [default: 1]
    #[arg(long)]
    pub nu1: Option<f64>,
    /// Gamma rate of the feature-factor prior [default: 1]
    #[arg(long)]
    pub nu2: Option<f64>,
    /// Gamma shape of the core prior (td) [default: 1]
    #[arg(long)]
    pub zeta1: Option<f64>,
    /// Gamma rate of the core prior (td) [default: 1]
    #[arg(long)]
    pub zeta2: Option<f64>,
    /// Bessel sampler: auto, auto_approx, devroye, quotient, table, gaussian.
    #[arg(long)]
    pub sampler: Option<SamplerMethod>,
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.model = self.model;
        c.c = self.c;
        c.k = self.k;
        c.eps1 = self.eps1;
        c.eps2 = self.eps2;
        c.col_rates = self.col_rates.clone();
        c.eta1 = self.eta1;
        c.eta2 = self.eta2;
        c.nu1 = self.nu1;
        c.nu2 = self.nu2;
        c.zeta1 = self.zeta1;
        c.zeta2 = self.zeta2;
        c.sampler = self.sampler;
    }
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Total Gibbs sweeps [default: 600]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Discarded sweeps [default: 500]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Keep every this-many-th sweep after burn-in [default: 1]
    #[arg(long)]
    pub thin: Option<usize>,
    /// Initialization: prior or moment.
    #[arg(long)]
    pub init: Option<InitStrategy>,
}

impl SamplingArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.iterations = self.iterations;
        c.burn_in = self.burn_in;
        c.thin = self.thin;
        c.init = self.init;
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Samples (rows).
    #[arg(long, visible_alias = "I")]
    pub rows: Option<usize>,
    /// Features (columns).
    #[arg(long, visible_alias = "J")]
    pub cols: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Input matrix (CSV or TSV with header and row names).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Independent chains, run in parallel [default: 1]
    #[arg(long)]
    pub chains: Option<usize>,
    /// Fraction of observed cells to hold out [default: 0]
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// Seed of the held-out mask [default: --seed]
    #[arg(long)]
    pub mask_seed: Option<u64>,
    /// Checkpoint every this many sweeps; 0 writes only at the end.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from the checkpoints in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct PpdArgs {
    #[command(flatten)]
    pub common: Common,
    /// The full matrix the fit was masked from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out cells [default: <out>/mask.csv]
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Posterior samples [default: <out>/samples.bin]
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PpcArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Prior replicates [default: 1000]
    #[arg(long)]
    pub n_reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Cluster counts of the grid, comma separated (td).
    #[arg(long, value_delimiter = ',')]
    pub c_values: Option<Vec<usize>>,
    /// Factor counts of the grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// CSV of reference sample labels (last column), one row per sample.
    #[arg(long)]
    pub sample_labels: Option<PathBuf>,
    /// CSV of reference feature labels (last column), one row per feature.
    #[arg(long)]
    pub feature_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Long-format read counts: sample,feature,methylated,unmethylated.
    #[arg(long, conflicts_with = "data")]
    pub biseq: Option<PathBuf>,
    /// A beta-value matrix to filter.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Read-count smoothing [default: 0.1]
    #[arg(long)]
    pub s0: Option<f64>,
    /// Keep this many highest-variance columns.
    #[arg(long)]
    pub top: Option<usize>,
}

impl Overrides for SimulateArgs {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        self.common.apply(&mut c);
        self.model.apply(&mut c);
        c.rows = self.rows;
        c.cols = self.cols;
        c
    }

    fn common(&self) -> &Common {
        &self.common
    }
}

impl Overrides for FitArgs {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        self.common.apply(&mut c);
        self.model.apply(&mut c);
        self.sampling.apply(&mut c);
        c.data = self.data.clone();
        c.chains = self.chains;
        c.mask_fraction = self.mask_fraction;
        c.mask_seed = self.mask_seed;
        c.checkpoint_every = self.checkpoint_every;
        c.resume = self.resume.then_some(true);
        c
    }

    fn common(&self) -> &Common {
        &self.common
    }
}

impl Overrides for PpdArgs {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        self.common.apply(&mut c);
        c.data = self.data.clone();
        c.mask = self.mask.clone();
        c.samples = self.samples.clone();
        c
    }

    fn common(&self) -> &Common {
        &self.common
    }
}

impl Overrides for PpcArgs {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        self.common.apply(&mut c);
        self.model.apply(&mut c);
        c.data = self.data.clone();
        c.n_reps = self.n_reps;
        c
    }

    fn common(&self) -> &Common {
        &self.common
    }
}

impl Overrides for StabilityArgs {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        self.common.apply(&mut c);
        self.model.apply(&mut c);
        self.sampling.apply(&mut c);
        c.data = self.data.clone();
        c.c_values = self.c_values.clone();
        c.k_values = self.k_values.clone();
        c.sample_labels = self.sample_labels.clone();
        c.feature_labels = self.feature_labels.clone();
        c
    }

    fn common(&self) -> &Common {
        &self.common
    }
}

impl Overrides for PreprocessArgs {
    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        self.common.apply(&mut c);
        c.biseq = self.biseq.clone();
        c.data = self.data.clone();
        c.s0 = self.s0;
        c.top = self.top;
        c
    }

    fn common(&self) -> &Common {
        &self.common
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_map_to_config_keys() {
        let cli = Cli::try_parse_from([
            "dncb", "fit", "--model", "mf", "--K", "3", "--eps1", "0.5", "--burn-in", "7", "--col-rates", "1,2", "--resume",
        ])
        .unwrap();
        let Command::Fit(a) = cli.command else { panic!() };
        let c = a.overrides();
        assert_eq!(c.model, Some(ModelKind::Mf));
        assert_eq!(c.k, Some(3));
        assert_eq!(c.burn_in, Some(7));
        assert_eq!(c.col_rates, Some(vec![1.0, 2.0]));
        assert_eq!(c.resume, Some(true));
        assert_eq!(c.c, None);
    }

    #[test]
    fn short_dimension_aliases() {
        let cli = Cli::try_parse_from(["dncb", "simulate", "--I", "20", "--J", "30", "--C", "2", "--k", "3"]).unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        let c = a.overrides();
        assert_eq!((c.rows, c.cols, c.c, c.k), (Some(20), Some(30), Some(2), Some(3)));
    }
}
