use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ovb_core::{DiscountSchedule, GridSpec, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "ovb",
    version,
    about = "Variational and Gibbs inference for mixtures of spatio-temporal regressions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (records, truth and manifest).
    Simulate(SimulateArgs),
    /// Fit a dataset in batch, online or Gibbs mode.
    Fit(Box<FitArgs>),
    /// Evaluate the predictive coefficient density stored in a checkpoint.
    Predict(PredictArgs),
    /// Turn delimited text files into subject records.
    Convert(ConvertArgs),
    /// Write the proximity matrix and ρ grid of a lattice.
    ExportCar(ExportCarArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Run directory; defaults to a fresh directory under $OVB_OUTPUT_DIR
    /// (or ./ovb-runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub example: u8,
    /// Subjects; defaults to 10000 for design 1 and 100 otherwise.
    #[arg(long)]
    pub n: Option<usize>,
    /// Sites; must be a perfect square for designs 2 and 3.
    #[arg(long = "K")]
    pub sites: Option<usize>,
    #[arg(long = "T")]
    pub times: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Batch,
    Online,
    Mcmc,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Dataset directory (or its manifest file).
    #[arg(long)]
    pub data: PathBuf,
    /// spatio-temporal, temporal-only, spatial-only or regression-only;
    /// inferred from simulated datasets when omitted.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Truncation level of the stick-breaking mixture.
    #[arg(long = "R", default_value_t = 20)]
    pub truncation: usize,
    /// Latent factors (spatio-temporal variant).
    #[arg(long = "m", default_value_t = 1)]
    pub factors: usize,
    /// Lattice for the spatial prior, `ROWSxCOLS` or `line:LEN`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,
    /// Distance-decay exponent of the proximities.
    #[arg(long, default_value_t = 1.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 2.0)]
    pub cutoff: f64,
    /// Regular levels of the ρ grid.
    #[arg(long = "M", default_value_t = 10)]
    pub levels: usize,
    /// Gap of the top ρ level below one, in units of 1/M.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// reciprocal, none, power:OMEGA or constant:H.
    #[arg(long, default_value = "reciprocal", value_parser = parse_discount)]
    pub discount: DiscountSchedule,
    /// Process subjects in an order permuted with this seed.
    #[arg(long)]
    pub shuffle_subjects: Option<u64>,
    /// Worker threads for the batch local phase; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Seed for initialization and sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative ELBO tolerance (batch).
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Relative change tolerance of the per-subject alternation (online).
    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,
    #[arg(long, default_value_t = 100)]
    pub inner_max_iters: usize,
    /// Fit each subject from a single start instead of one per component.
    #[arg(long)]
    pub single_start: bool,
    /// An online fit counts as unconverged once more than this fraction of
    /// subjects hit the alternation cap.
    #[arg(long, default_value_t = 0.05)]
    pub max_unconverged: f64,
    #[arg(long)]
    pub skip_malformed: bool,
    /// Write a checkpoint every this many subjects (online).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue an online run from a checkpoint; model and schedule are
    /// taken from the checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    /// Largest n·K·T the sampler accepts.
    #[arg(long, default_value_t = 2_000_000)]
    pub budget: usize,
    /// Components with expected weight at or above this count as effective.
    #[arg(long, default_value_t = 0.05)]
    pub min_weight: f64,
    #[command(flatten)]
    pub density: DensityArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// Evaluation grid `LO:HI:POINTS`; defaults to every component mean
    /// ± `width` standard deviations.
    #[arg(long = "density-grid", value_parser = parse_range, allow_hyphen_values = true)]
    pub range: Option<(f64, f64, usize)>,
    #[arg(long, default_value_t = 6.0)]
    pub width: f64,
    #[arg(long, default_value_t = 401)]
    pub points: usize,
    /// Modes to read off each marginal; defaults to the effective
    /// component count.
    #[arg(long)]
    pub modes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub min_weight: f64,
    #[command(flatten)]
    pub density: DensityArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// One file per subject with header `t,k,y,x1,...`; ids follow the
    /// argument order.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExportCarArgs {
    #[arg(long, value_parser = parse_grid)]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 1.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 2.0)]
    pub cutoff: f64,
    #[arg(long = "M", default_value_t = 10)]
    pub levels: usize,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_variant(s: &str) -> Result<Variant, ovb_core::Error> {
    s.parse()
}

fn parse_discount(s: &str) -> Result<DiscountSchedule, ovb_core::Error> {
    s.parse()
}

pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let num = |v: &str| {
        v.parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad grid size `{v}`"))
    };
    if let Some(len) = s.strip_prefix("line:") {
        return Ok(GridSpec::Line { len: num(len)? });
    }
    let (rows, cols) = s
        .split_once('x')
        .ok_or_else(|| format!("expected ROWSxCOLS or line:LEN, got `{s}`"))?;
    Ok(GridSpec::Lattice {
        rows: num(rows)?,
        cols: num(cols)?,
    })
}

fn parse_range(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || format!("expected LO:HI:POINTS, got `{s}`");
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let points: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo < hi) || points < 2 {
        return Err(format!(
            "grid needs LO < HI and at least two points, got `{s}`"
        ));
    }
    Ok((lo, hi, points))
}
