//! Flag definitions and their validation.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use quickfit::coordinator::{Contract, RunConfig, DEFAULT_N0};
use quickfit::mcs::{ModelKind, DEFAULT_BETA, DEFAULT_FACTORS};
use quickfit::stats::StatsMethod;
use quickfit::{FileFormat, ModelSpec};

/// A configuration error; reported with exit code 64.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(name = "quickfit", version, about = "Train models on subsamples with a probabilistic accuracy contract")]
pub struct Cli {
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, env = "QUICKFIT_THREADS")]
    pub threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the smallest-sample model that meets the requested accuracy.
    Train(TrainArgs),
    /// Train on a fixed sample size and report its error bound.
    Accuracy(AccuracyArgs),
    /// Estimate the sample size a contract needs without the second training.
    Size(TrainArgs),
    /// Compare the contract workflow with fixed sample-size baselines.
    Bench(BenchArgs),
    /// Repeat contract runs on synthetic data and check them against the full model.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    /// `label idx:val ...` lines with 1-based indices.
    Svm,
}

impl From<Format> for FileFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => FileFormat::Csv,
            Format::Svm => FileFormat::SparseSvm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// Least-squares linear regression.
    Lin,
    /// Logistic regression.
    Lr,
    /// Multiclass max-entropy classifier.
    Me,
    /// Probabilistic PCA.
    Ppca,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Stats {
    ClosedForm,
    InverseGradients,
    ObservedFisher,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Label column (CSV header name or 0-based index).
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "lr")]
    pub model: Model,
    /// L2 coefficient (default 0.001; 0 for ppca).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Class count for `me` (default: distinct labels in the data).
    #[arg(long, visible_alias = "k")]
    pub classes: Option<usize>,
    /// Factor count for `ppca`.
    #[arg(long, default_value_t = DEFAULT_FACTORS)]
    pub q: usize,
}

impl ModelArgs {
    pub fn kind(&self) -> ModelKind {
        match self.model {
            Model::Lin => ModelKind::Lin,
            Model::Lr => ModelKind::Lr,
            Model::Me => ModelKind::Me { classes: self.classes.unwrap_or(2) },
            Model::Ppca => ModelKind::Ppca { factors: self.q },
        }
    }

    /// Model spec for `dim` features; `found` is the number of distinct labels.
    pub fn spec(&self, dim: usize, found: Option<usize>) -> anyhow::Result<ModelSpec> {
        let kind = match self.model {
            Model::Lin => ModelKind::Lin,
            Model::Lr => {
                if let Some(f) = found.filter(|&f| f != 2) {
                    return usage(format!("lr needs exactly 2 distinct labels, found {f}"));
                }
                ModelKind::Lr
            }
            Model::Me => {
                let classes = match (self.classes, found) {
                    (Some(k), Some(f)) if k < f => {
                        return usage(format!("--classes {k} is below the {f} distinct labels found"))
                    }
                    (Some(k), _) => k,
                    (None, Some(f)) => f,
                    (None, None) => return usage("--classes is required for me on synthetic data"),
                };
                if classes < 2 {
                    return usage("--classes must be at least 2");
                }
                ModelKind::Me { classes }
            }
            Model::Ppca => {
                if self.q == 0 || self.q >= dim {
                    return usage(format!("--q must be in 1..{dim} for {dim} features, got {}", self.q));
                }
                ModelKind::Ppca { factors: self.q }
            }
        };
        let beta = self.beta.unwrap_or(if self.model == Model::Ppca { 0.0 } else { DEFAULT_BETA });
        if !(beta >= 0.0 && beta.is_finite()) {
            return usage(format!("--beta must be a finite value >= 0, got {beta}"));
        }
        Ok(ModelSpec::new(kind, beta)?)
    }
}

/// A level given as a fraction (`0.95`) or a percentage (`95`).
fn fraction(flag: &str, v: f64) -> anyhow::Result<f64> {
    let f = if v > 1.0 { v / 100.0 } else { v };
    if !(f > 0.0 && f < 1.0) {
        return usage(format!("--{flag} must lie strictly between 0 and 1 (or 0 and 100 as a percentage), got {v}"));
    }
    Ok(f)
}

#[derive(Debug, Args)]
pub struct ConfidenceArgs {
    /// Probability that the bound holds, as a fraction or percentage.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

impl ConfidenceArgs {
    pub fn delta(&self) -> anyhow::Result<f64> {
        Ok(1.0 - fraction("confidence", self.confidence)?)
    }
}

#[derive(Debug, Args)]
pub struct ContractArgs {
    /// Requested agreement with the full model, as a fraction or percentage.
    #[arg(long, conflicts_with = "eps", required_unless_present = "eps")]
    pub accuracy: Option<f64>,
    /// Error bound ε directly (needed for regression and ppca differences above 1).
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub confidence: ConfidenceArgs,
    /// Initial sample size.
    #[arg(long, default_value_t = DEFAULT_N0)]
    pub n0: usize,
}

impl ContractArgs {
    pub fn contract(&self) -> anyhow::Result<Contract> {
        let eps = match (self.accuracy, self.eps) {
            (Some(a), _) => 1.0 - fraction("accuracy", a)?,
            (None, Some(e)) => e,
            (None, None) => return usage("give --accuracy or --eps"),
        };
        if !(eps > 0.0 && eps.is_finite()) {
            return usage(format!("--eps must be positive, got {eps}"));
        }
        if self.n0 == 0 {
            return usage("--n0 must be at least 1");
        }
        Ok(Contract::new(eps, self.confidence.delta()?, self.n0)?)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "observed-fisher")]
    pub stats_method: Stats,
    /// Monte-Carlo draws per estimate.
    #[arg(long, default_value_t = quickfit::accuracy::DEFAULT_DRAWS)]
    pub draws: usize,
    /// Master seed; every random stream of a run derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of rows held out for model differences.
    #[arg(long, default_value_t = 0.2)]
    pub holdout_frac: f64,
}

impl RunArgs {
    pub fn config(&self) -> anyhow::Result<RunConfig> {
        if self.draws < 2 {
            return usage("--draws must be at least 2");
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return usage(format!("--holdout-frac must lie in (0, 1), got {}", self.holdout_frac));
        }
        Ok(RunConfig {
            stats_method: match self.stats_method {
                Stats::ClosedForm => StatsMethod::ClosedForm,
                Stats::InverseGradients => StatsMethod::InverseGradients,
                Stats::ObservedFisher => StatsMethod::ObservedFisher,
            },
            k: self.draws,
            ..RunConfig::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Report path (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample size to train on.
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub confidence: ConfidenceArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Generate this many training rows instead of reading --data.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Feature dimension of the synthetic data (including the intercept column).
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Requested accuracies, comma separated, as fractions or percentages.
    #[arg(long, value_delimiter = ',', default_values_t = [0.90, 0.95, 0.99])]
    pub accuracies: Vec<f64>,
    #[command(flatten)]
    pub confidence: ConfidenceArgs,
    #[arg(long, default_value_t = DEFAULT_N0)]
    pub n0: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[command(flatten)]
    pub run: RunArgs,
    /// CSV path (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl BenchArgs {
    /// Accuracies in percent.
    pub fn accuracies(&self) -> anyhow::Result<Vec<f64>> {
        if self.accuracies.is_empty() {
            return usage("--accuracies is empty");
        }
        if self.n0 == 0 {
            return usage("--n0 must be at least 1");
        }
        self.accuracies
            .iter()
            .map(|&a| Ok(fraction("accuracies", a)? * 100.0))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training rows per run.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Feature dimension (including the intercept column for supervised models).
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Independent runs (at least 20).
    #[arg(long, default_value_t = 40)]
    pub runs: usize,
    #[command(flatten)]
    pub contract: ContractArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Per-run CSV path (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
