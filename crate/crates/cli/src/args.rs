use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Parser)]
#[command(name = "vbma", version, about = "Variational Bayesian model averaging for HMM-based binary classification")]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for replicates and per-model fits (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory [default: vbma-out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Which output formats to write.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Draw replicate series from the simulation design.
    Simulate(SimulateArgs),
    /// Fit each model of a collection to a series.
    Fit(FitArgs),
    /// Combine fitted models with VB, PE and/or IS weights.
    Average(AverageArgs),
    /// Run the replicated simulation study over a grid of (c, u).
    Benchmark(BenchmarkArgs),
    /// Full analysis of a real series: fit, weight, average, classify.
    Analyze(AnalyzeArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Concentration of the alternative.
    #[arg(long, default_value_t = 5.0)]
    pub c: f64,
    /// Stationary proportion of the class of interest.
    #[arg(long, default_value_t = 0.05)]
    pub u: f64,
    /// Shifting rate.
    #[arg(long, default_value_t = 0.6)]
    pub l: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PriorArgs {
    /// Dirichlet parameters of each transition row, as `a,b`.
    #[arg(long, default_value = "1,1")]
    pub prior_trans: String,
    /// Symmetric Dirichlet parameter of the component proportions.
    #[arg(long, default_value_t = 1.0)]
    pub prior_props: f64,
    /// Gamma shape and rate of the shared precision, as `a,b`.
    #[arg(long, default_value = "0.01,0.01")]
    pub prior_gamma: String,
    /// Prior mean of the component means.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub prior_mean: f64,
    /// Prior scale of the component means (in units of the precision).
    #[arg(long, default_value_t = 0.01)]
    pub prior_scale: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VbemArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Single-column CSV (optional header).
    pub data: PathBuf,
    /// Model sizes: `1..6`, `2,3,5` or `4`.
    #[arg(long, default_value = "1..7")]
    pub components: String,
    /// Null density as `mean,sd`.
    #[arg(long, default_value = "0,1", allow_hyphen_values = true)]
    pub null: String,
    /// Take logs of the data first.
    #[arg(long)]
    pub log_transform: bool,
    /// Exit with a numeric-failure code when some fit did not converge.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub vbem: VbemArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightChoice {
    Vb,
    Pe,
    Is,
    All,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AverageArgs {
    /// Fit JSON files written by `fit`.
    #[arg(required = true)]
    pub fits: Vec<PathBuf>,
    /// The series the fits were computed on; needed for PE and IS.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Apply the same log transform used when fitting.
    #[arg(long)]
    pub log_transform: bool,
    #[arg(long, value_enum, default_value_t = WeightChoice::All)]
    pub weights: WeightChoice,
    /// Importance-sampling draws per model.
    #[arg(long, default_value_t = 1000)]
    pub is_samples: usize,
    /// `T_t` at or above this is labeled null.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideChoice {
    /// Band on the probability of the class of interest.
    Interest,
    /// Band on the probability of the null class.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectChoice {
    Is,
    Vb,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    /// Comma-separated concentrations.
    #[arg(long, default_value = "5,7,10,15")]
    pub c: String,
    /// Comma-separated class proportions.
    #[arg(long, default_value = "0.05,0.1,0.2,0.3")]
    pub u: String,
    #[arg(long, default_value_t = 0.6)]
    pub l: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value = "1..7")]
    pub models: String,
    #[arg(long, default_value_t = 500)]
    pub is_samples: usize,
    /// Scored band as `low,high`.
    #[arg(long, default_value = "0.2,0.8")]
    pub band: String,
    #[arg(long, value_enum, default_value_t = SideChoice::Interest)]
    pub band_side: SideChoice,
    /// Weights used to pick the single selected model.
    #[arg(long, value_enum, default_value_t = SelectChoice::Is)]
    pub selection: SelectChoice,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub vbem: VbemArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    pub data: PathBuf,
    /// Null density as `mean,sd` (after the optional log transform).
    #[arg(long, allow_hyphen_values = true)]
    pub null: String,
    #[arg(long, default_value_t = 6)]
    pub max_components: usize,
    #[arg(long)]
    pub log_transform: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub vbem: VbemArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}
