use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use binconv::bootstrap::MRule;
use binconv::Estimator;

#[derive(Debug, Parser)]
#[command(
    name = "binconv",
    version,
    about = "Accuracy-rate estimation for error-prone bounded counts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the estimators to a paired-count CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study described by a TOML config.
    Simulate(SimulateArgs),
    /// Pooled against group-specific rates by AIC/BIC, plus agreement shares.
    Compare(CompareArgs),
    /// Leave-one-out sensitivity of the GMM rates.
    Influence(CompareArgs),
    /// Write one synthetic dataset as CSV.
    Generate(GenerateArgs),
}

impl Command {
    pub fn parallelism(&self) -> Option<usize> {
        match self {
            Command::Estimate(a) => a.parallelism,
            Command::Simulate(a) => a.parallelism,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorChoice {
    Mle,
    Ols,
    Gmm,
    All,
}

impl EstimatorChoice {
    pub fn expand(choices: &[EstimatorChoice]) -> Vec<Estimator> {
        let mut out = Vec::new();
        for c in choices {
            let add: &[Estimator] = match c {
                EstimatorChoice::Mle => &[Estimator::Mle],
                EstimatorChoice::Ols => &[Estimator::Ols],
                EstimatorChoice::Gmm => &[Estimator::Gmm],
                EstimatorChoice::All => &Estimator::ALL,
            };
            for e in add {
                if !out.contains(e) {
                    out.push(*e);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeChoice {
    Plugin,
    Semipar,
    Boot,
    Moon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MRuleChoice {
    #[value(name = "2n3")]
    TwoThirdsN,
    #[value(name = "2sqrtn")]
    TwoSqrtN,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// CSV with header `x,y,n_trials[,group]`.
    pub input: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    pub estimator: Vec<EstimatorChoice>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "plugin")]
    pub se: Vec<SeChoice>,
    /// Subsample rule for `--se moon`.
    #[arg(long, value_enum, default_value = "2sqrtn")]
    pub m_rule: MRuleChoice,
    /// Subsample size for `--m-rule explicit`.
    #[arg(long)]
    pub m: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = binconv::bootstrap::DEFAULT_ANALYSIS_REPLICATES)]
    pub boot_reps: usize,
    /// Confidence level of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Re-estimate the GMM weighting matrix this many times.
    #[arg(long, default_value_t = 0)]
    pub iterate_weights: usize,
    /// Skip the per-group fits.
    #[arg(long)]
    pub no_groups: bool,
}

impl EstimateArgs {
    pub fn m_rule(&self) -> Result<MRule, String> {
        match (self.m_rule, self.m) {
            (MRuleChoice::Explicit, Some(m)) => Ok(MRule::Explicit(m)),
            (MRuleChoice::Explicit, None) => Err("--m-rule explicit requires --m".into()),
            (_, Some(_)) => Err("--m is only valid with --m-rule explicit".into()),
            (MRuleChoice::TwoThirdsN, None) => Ok(MRule::TwoThirdsN),
            (MRuleChoice::TwoSqrtN, None) => Ok(MRule::TwoSqrtN),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study config (TOML).
    pub config: PathBuf,
    /// Directory receiving the CSV and JSON reports.
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Worker threads (0 = all cores). Reports do not depend on it.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's replications per cell.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Overrides the config's bootstrap replicates.
    #[arg(long)]
    pub boot_reps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub n_trials: u32,
    #[arg(long, default_value_t = 0.95)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho_x: f64,
    #[arg(long, default_value_t = 0.98)]
    pub pi_tp: f64,
    #[arg(long, default_value_t = 0.70)]
    pub pi_tn: f64,
    /// none, overdispersed_tp, overdispersed_tn or overdispersed_both.
    #[arg(long, default_value = "none")]
    pub misspec: String,
    #[arg(long, default_value_t = 0.0)]
    pub misspec_rho: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}
