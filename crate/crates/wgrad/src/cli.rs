//! Command-line definitions. Every tunable flag is optional so that a config
//! file can supply it; unset values fall back to built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wgrad_core::attribution::Method;
use wgrad_core::meanfield::Variant;

#[derive(Debug, Parser)]
#[command(name = "wgrad", version, about = "Wasserstein-barycenter gradient attributions on a toy forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute one attribution map.
    Explain(ExplainArgs),
    /// Attribution displacement under input noise, over events and horizons.
    Sweep(SweepArgs),
    /// Gini, ROAD and LLE scores for several methods.
    Evaluate(EvaluateArgs),
    /// Mean-field particle dynamics and the basin experiment.
    Particles(ParticlesArgs),
    /// Emit a synthetic state sequence as rasters.
    Synth(SynthArgs),
    /// Entropic barycenter of precomputed rasters.
    Barycenter(BarycenterArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub blobs: Option<usize>,
    /// Blob standard deviation in cells.
    #[arg(long)]
    pub blob_width: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Advection per step as `rows,cols` cells.
    #[arg(long)]
    pub velocity: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttrArgs {
    /// Forecast horizon in autoregressive steps.
    #[arg(long = "T", alias = "horizon")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub c_in: Option<usize>,
    #[arg(long)]
    pub c_out: Option<usize>,
    /// Target box as `row_min,row_max,col_min,col_max` (inclusive).
    #[arg(long)]
    pub roi: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Noise level as a fraction of the input channel's range.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
    /// Barycenter iteration budget.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Input state raster; a synthetic event is used when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Synthetic event index.
    #[arg(long)]
    pub event: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub attr: AttrArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    #[arg(long)]
    pub events: Option<usize>,
    /// Noise levels, ascending, comma-separated.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Horizons, comma-separated.
    #[arg(long)]
    pub horizons: Option<String>,
    #[arg(long)]
    pub cell_km: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub attr: AttrArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Methods, comma-separated.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub events: Option<usize>,
    /// Largest ROAD masking percentage.
    #[arg(long)]
    pub p_max: Option<usize>,
    #[arg(long)]
    pub k_rand: Option<usize>,
    #[arg(long)]
    pub k_lle: Option<usize>,
    /// LLE perturbation scale as a fraction of the channel range.
    #[arg(long)]
    pub lle_sigma: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub attr: AttrArgs,
}

#[derive(Debug, Args)]
pub struct ParticlesArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Noise scale; 0 is deterministic.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Trajectory snapshot interval in steps.
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Initial positions: `random` or `circle` (evenly spaced on a great circle).
    #[arg(long)]
    pub init: Option<String>,
    /// Basin experiment trials; 0 skips the experiment.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub sigma_init: Option<f64>,
    /// Fail unless the energy never decreases by more than 1e-8 per step.
    #[arg(long)]
    pub assert_energy: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Last time index written; states `0..=steps` are emitted.
    #[arg(long)]
    pub steps: Option<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct BarycenterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input rasters.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub channel: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Barycentric weights, comma-separated; uniform when absent.
    #[arg(long)]
    pub weights: Option<String>,
    /// Exit with a numeric failure if the iteration budget runs out.
    #[arg(long)]
    pub require_converged: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: wgrad_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: wgrad_core::Error| e.to_string())
}
