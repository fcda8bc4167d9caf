//! `relisten`: evaluate activation models on listening logs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{AlgorithmSpec, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "relisten",
    version,
    about = "Predict music relistening with memory activation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay each user's history and score every algorithm on the remaining session.
    Evaluate(EvaluateArgs),
    /// Fit a power law to the relistening-gap histogram.
    FitDecay(FitDecayArgs),
    /// Regress base-level, spreading and valuation weights on a user subset.
    FitWeights(FitWeightsArgs),
    /// Assign session ids and write the sessionized events.
    Sessionize(SessionizeArgs),
    /// Draw a count-stratified user sample.
    Sample(SampleArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct Input {
    /// Listening events: user, track, unix-seconds timestamp.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Abort on the first malformed row.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: Input,
    /// Track metadata: track, duration in ms, features.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    session_gap_minutes: Option<u32>,
    #[arg(long)]
    min_gap_seconds: Option<f64>,
    /// Comma-separated algorithm names replacing the configured roster.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Weights written by `fit-weights`, added to the roster.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitDecayArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: Input,
    /// Ignore gaps longer than this many hours.
    #[arg(long)]
    max_hours: Option<u64>,
}

#[derive(Debug, Args)]
struct FitWeightsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    window_days: Option<u32>,
    #[arg(long)]
    session_gap_minutes: Option<u32>,
    #[arg(long)]
    min_gap_seconds: Option<f64>,
    /// Share of users whose queries enter the regression.
    #[arg(long)]
    user_fraction: Option<f64>,
    /// Base-level decay used for the regressor.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Fit an intercept column.
    #[arg(long)]
    intercept: bool,
    /// Constrain the weights to be non-negative.
    #[arg(long)]
    nonneg: bool,
}

#[derive(Debug, Args)]
struct SessionizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    session_gap_minutes: Option<u32>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    min_events: Option<usize>,
    #[arg(long)]
    max_events: Option<usize>,
    #[arg(long)]
    num_bins: Option<usize>,
    #[arg(long)]
    users_per_stratum: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    events_per_user: Option<usize>,
    #[arg(long)]
    catalog_size: Option<usize>,
    /// Power-law exponent of relistening gaps.
    #[arg(long)]
    gap_exponent: Option<f64>,
    #[arg(long)]
    session_length_mean: Option<f64>,
    #[arg(long)]
    relisten_prob: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.paths.output, self.out.clone());
        set(&mut cfg.threads, self.threads);
        Ok(cfg)
    }
}

impl Input {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.events.is_some() {
            cfg.paths.events = self.events.clone();
        }
        cfg.input.strict |= self.strict;
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Evaluate(a) => {
            init_logging(a.common.verbose);
            let mut cfg = a.common.config()?;
            a.input.apply(&mut cfg);
            if a.meta.is_some() {
                cfg.paths.meta = a.meta;
            }
            if a.weights.is_some() {
                cfg.paths.weights = a.weights;
            }
            set(&mut cfg.window_days, a.window_days);
            set(&mut cfg.session_gap_minutes, a.session_gap_minutes);
            set(&mut cfg.min_gap_seconds, a.min_gap_seconds);
            if let Some(names) = a.algorithms {
                let names = names.iter().map(|n| n.trim()).filter(|n| !n.is_empty());
                cfg.algorithm = Some(names.map(AlgorithmSpec::named).collect());
            }
            commands::evaluate(&cfg)
        }
        Command::FitDecay(a) => {
            init_logging(a.common.verbose);
            let mut cfg = a.common.config()?;
            a.input.apply(&mut cfg);
            if a.max_hours.is_some() {
                cfg.fit_decay.max_hours = a.max_hours;
            }
            commands::fit_decay(&cfg)
        }
        Command::FitWeights(a) => {
            init_logging(a.common.verbose);
            let mut cfg = a.common.config()?;
            a.input.apply(&mut cfg);
            if a.meta.is_some() {
                cfg.paths.meta = a.meta;
            }
            set(&mut cfg.window_days, a.window_days);
            set(&mut cfg.session_gap_minutes, a.session_gap_minutes);
            set(&mut cfg.min_gap_seconds, a.min_gap_seconds);
            let w = &mut cfg.fit_weights;
            set(&mut w.user_fraction, a.user_fraction);
            set(&mut w.decay, a.decay);
            set(&mut w.alpha, a.alpha);
            w.intercept |= a.intercept;
            w.nonneg |= a.nonneg;
            commands::fit_weights(&cfg)
        }
        Command::Sessionize(a) => {
            init_logging(a.common.verbose);
            let mut cfg = a.common.config()?;
            a.input.apply(&mut cfg);
            set(&mut cfg.session_gap_minutes, a.session_gap_minutes);
            commands::sessionize(&cfg)
        }
        Command::Sample(a) => {
            init_logging(a.common.verbose);
            let mut cfg = a.common.config()?;
            a.input.apply(&mut cfg);
            let s = &mut cfg.sample;
            set(&mut s.min_events, a.min_events);
            set(&mut s.max_events, a.max_events);
            set(&mut s.num_bins, a.num_bins);
            set(&mut s.users_per_stratum, a.users_per_stratum);
            commands::sample(&cfg)
        }
        Command::Synth(a) => {
            init_logging(a.common.verbose);
            let mut cfg = a.common.config()?;
            let s = &mut cfg.synth;
            set(&mut s.num_users, a.users);
            set(&mut s.events_per_user, a.events_per_user);
            set(&mut s.catalog_size, a.catalog_size);
            set(&mut s.gap_exponent, a.gap_exponent);
            set(&mut s.session_length_mean, a.session_length_mean);
            set(&mut s.relisten_prob, a.relisten_prob);
            commands::synth(&mut cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
