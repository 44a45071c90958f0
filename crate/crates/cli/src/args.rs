use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Training-free segmentation of dense feature maps.
#[derive(Debug, Parser)]
#[command(name = "flowseg", version, about)]
pub struct Cli {
    /// Seed for every random choice (synthetic data, diagnostic sampling).
    #[arg(long, global = true, default_value_t = 3)]
    pub seed: u64,

    /// Worker threads for batch work; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Print the resolved configuration and where each value came from.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one feature file or every `.npy` file in a directory.
    Segment(SegmentArgs),
    /// Score predicted label maps against ground truth.
    Eval(EvalArgs),
    /// Measure Hilbert-metric behaviour of the flow iteration.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic fixture (features and ground truth).
    Synth(SynthArgs),
    /// Segment and score across a grid of one parameter.
    Sweep(SweepArgs),
}

/// Overrides for every pipeline parameter. Flags beat the config file, which
/// beats the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file of `key = value` pipeline parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub expansion_l: Option<u32>,
    #[arg(long)]
    pub inflation_r: Option<f64>,
    #[arg(long)]
    pub prune_tau: Option<f64>,
    #[arg(long)]
    pub affinity_floor: Option<f64>,
    #[arg(long)]
    pub flow_tol: Option<f64>,
    #[arg(long)]
    pub max_flow_iters: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub prop_tol: Option<f64>,
    #[arg(long)]
    pub max_prop_iters: Option<usize>,
    /// dense, sparse or auto.
    #[arg(long)]
    pub storage_mode: Option<String>,
    #[arg(long)]
    pub topk_cap: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub merge_attractors: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelFormatArg {
    Pgm,
    Npy,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Feature file (`.npy`, shape H x W x C) or a directory of them.
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write labels upsampled to this height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub upsample: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = LabelFormatArg::Pgm)]
    pub format: LabelFormatArg,
    /// Also write a color-mapped PNG.
    #[arg(long)]
    pub png: bool,
    /// Write per-iteration flow records to `<stem>.trace.jsonl`.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    #[arg(long, default_value_t = 255)]
    pub ignore_id: u32,
    /// Report the summary `miou` from confusion counts summed over all images
    /// instead of the mean of per-image scores.
    #[arg(long)]
    pub dataset_level: bool,
    /// Results file; defaults to `<pred_dir>/eval.jsonl`.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Build the transition matrix from this feature file instead of a planted graph.
    #[arg(long, conflicts_with = "blocks")]
    pub features: Option<PathBuf>,
    /// Planted block sizes.
    #[arg(long, value_delimiter = ',', default_value = "10,10,10")]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub within: f64,
    #[arg(long, default_value_t = 0.01)]
    pub cross: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Disable pruning (threshold 0) during the measured iteration.
    #[arg(long)]
    pub no_prune: bool,
    /// Number of sampled row pairs.
    #[arg(long, default_value_t = 32)]
    pub pairs: usize,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// two-blob, four-blob or ablation-four-blob.
    #[arg(long, default_value = "two-blob")]
    pub fixture: String,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of fixtures; the i-th uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Store features as 32-bit floats.
    #[arg(long)]
    pub f32: bool,
    /// Output directory; receives `features/` and `gt/`.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Beta,
    #[value(name = "inflation_r", alias = "inflation-r")]
    InflationR,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long)]
    pub grid: String,
    /// Bundled fixture to sweep over.
    #[arg(long, conflicts_with = "dataset")]
    pub fixture: Option<String>,
    /// Fixture noise; defaults to the fixture's own.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Directory with `features/` and `gt/` as written by `synth`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 255)]
    pub ignore_id: u32,
    /// Also write one JSON record per grid value.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}
