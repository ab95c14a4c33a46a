use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};

use em_lab::harness::SCENARIO_IDS;

#[derive(Debug, Parser)]
#[command(
    name = "em-lab",
    version,
    about = "EM for over-specified Gaussian and regression mixtures"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run without --seed, drawing a fresh master seed.
    #[arg(long, global = true)]
    pub allow_nondeterministic: bool,

    /// Worker threads for parallel trials (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory for data files.
    #[arg(
        long = "out",
        global = true,
        env = "EM_LAB_OUT",
        default_value = "em-lab-out"
    )]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Population EM trajectory of one fit, written as CSV.
    PopEm(PopEmArgs),
    /// One sample-EM run described by a JSON config; prints the result as JSON.
    RunEm {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte-Carlo rate experiment for a scenario or a JSON config.
    Rates(RatesArgs),
    /// Nonzero fixed points of the balanced one-dimensional sample map.
    FixedPoints {
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Balanced sample-EM trajectory against the epoch annuli.
    EpochTrace(EpochArgs),
    /// Empirical sup-deviation between the sample and population operators.
    Deviation {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 0.5)]
        pi: f64,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Population log-likelihood of the symmetric fit on a grid over [-3σ, 3σ].
    Loglik {
        #[arg(long)]
        pi: f64,
        /// Grid step.
        #[arg(long, default_value_t = 0.01)]
        grid: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Closed-form quantities.
    #[command(subcommand)]
    Theory(TheoryCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopFit {
    Balanced,
    Unbalanced,
    Regression,
    UnknownWeight,
    /// Every trajectory of the population-em scenario.
    All,
}

#[derive(Debug, Args)]
pub struct PopEmArgs {
    #[arg(long, value_enum)]
    pub fit: PopFit,
    /// Initial location, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta0: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Fixed weight (unbalanced) or initial weight (unknown-weight).
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(true).args(["scenario", "config"]))]
pub struct RatesArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(SCENARIO_IDS))]
    pub scenario: Option<String>,
    /// ExperimentConfig JSON (one object or an array); replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the trial count of every sub-experiment.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Steps for the population-em scenario.
    #[arg(long, default_value_t = 60)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct EpochArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub epsilon: f64,
    /// Initial location, comma separated (default: all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta0: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
}

#[derive(Debug, Subcommand)]
pub enum TheoryCommand {
    /// α₀ ..= α_L of the epoch recursion.
    Alpha {
        #[arg(long)]
        steps: usize,
    },
    /// Upper and lower contraction envelopes at ‖θ‖.
    Gamma {
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Fisher information at zero of the symmetric fit with weight π.
    Fisher {
        #[arg(long)]
        pi: f64,
    },
    /// Epoch lengths and annulus radii.
    Schedule {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        theta0: f64,
    },
}

impl Command {
    /// Whether the command draws random numbers and therefore needs a seed.
    pub fn is_random(&self) -> bool {
        match self {
            Command::PopEm(_) | Command::Loglik { .. } | Command::Theory(_) => false,
            Command::Rates(a) => {
                a.scenario.as_deref() != Some("population-em") || a.config.is_some()
            }
            _ => true,
        }
    }
}

pub fn scenario_help() -> String {
    format!("Scenario ids:\n  {}", SCENARIO_IDS.join("\n  "))
}
