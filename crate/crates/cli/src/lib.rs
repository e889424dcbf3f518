//! Experiment runner and benchmark harness for `wingfit`.
//!
//! Commands: `simulate`, `train`, `bench`, `validate`. Exit codes: 0 ok,
//! 2 usage or input error, 3 numerical divergence or invariant violation.

pub mod bench;
pub mod config;
pub mod error;
pub mod simulate;
pub mod train;
pub mod validate;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "wingfit",
    version,
    about = "Flapping-wing dynamics, aerodynamic surrogate training and tape benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate and write trajectory.csv and samples.csv.
    Simulate(Common),
    /// Train the force surrogate online; writes training.csv, forces.csv, checkpoint.txt.
    Train(TrainArgs),
    /// Time naive against compiled evaluation of D, C, G and Pjac.
    Bench(BenchArgs),
    /// Check the equations-of-motion invariants of a model.
    Validate(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Model file (overrides `model` in the config).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated time (s).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Integration step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Integration steps per training sample.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Continue from a checkpoint written by an earlier `train`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many filter updates in total.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Passes over the sample stream.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train on an existing sample CSV instead of simulating.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Timed evaluations per term and backend.
    #[arg(long)]
    pub iters: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.clone(),
            out: self.out.clone(),
            seed: self.seed,
            duration: self.duration,
            dt: self.dt,
            stride: self.stride,
            ..Overrides::default()
        }
    }

    fn resolve(&self, extra: impl FnOnce(&mut Overrides)) -> Result<ExperimentConfig, CliError> {
        let mut o = self.overrides();
        extra(&mut o);
        ExperimentConfig::resolve(self.config.as_deref(), &o)
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(c) => simulate::cmd_simulate(&c.resolve(|_| {})?).map(|_| ()),
        Command::Train(a) => {
            let cfg = a.common.resolve(|o| {
                o.steps = a.steps;
                o.epochs = a.epochs;
                o.samples = a.samples.clone();
            })?;
            train::cmd_train(&cfg, a.resume.as_deref()).map(|_| ())
        }
        Command::Bench(a) => {
            let cfg = a.common.resolve(|o| o.iters = a.iters)?;
            bench::cmd_bench(&cfg).map(|_| ())
        }
        Command::Validate(c) => validate::cmd_validate(&c.resolve(|_| {})?).map(|_| ()),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
