//! Command-line front end: simulate epidemics, fit pairwise survival models,
//! run replicate studies, predict secondary attack rates, and select models.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use pairsurv_core::Error;

mod fit;
mod report;
mod sar;
mod simulate;
mod study;

pub use fit::{FitArgs, SelectArgs};
pub use sar::{read_profiles, Profile, SarArgs};
pub use simulate::SimulateArgs;
pub use study::StudyArgs;

#[derive(Debug, Parser)]
#[command(name = "pairsurv", version, about = "Pairwise survival models for infectious disease transmission")]
pub struct Cli {
    /// Master random seed; overrides any seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a household epidemic and write its pair-row datasets.
    Simulate(SimulateArgs),
    /// Fit a model to pair rows or household data.
    Fit(FitArgs),
    /// Run a replicate simulation study and summarize estimator performance.
    ReplicateStudy(StudyArgs),
    /// Predict household secondary attack rates from a saved fit.
    PredictSar(SarArgs),
    /// Backward model selection by AIC.
    Select(SelectArgs),
}

/// How a successful command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NotConverged,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::NotConverged => 3,
        }
    }
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
}

impl Context {
    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<Status> {
    std::fs::create_dir_all(&cli.output_dir)
        .with_context(|| format!("cannot create output directory {}", cli.output_dir.display()))?;
    let ctx = Context { seed: cli.seed, threads: cli.threads, output_dir: cli.output_dir.clone() };
    let work = || match &cli.command {
        Command::Simulate(args) => simulate::run(&ctx, args),
        Command::Fit(args) => fit::run(&ctx, args),
        Command::ReplicateStudy(args) => study::run(&ctx, args),
        Command::PredictSar(args) => sar::run(&ctx, args),
        Command::Select(args) => fit::run_select(&ctx, args),
    };
    match cli.threads {
        Some(0) => Err(Error::Schema("--threads must be at least 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
        None => work(),
    }
}

/// Process exit code for a failed command: 2 for bad input or
/// configuration, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite(_) | Error::Evaluation { .. } => 1,
                _ => 2,
            };
        }
    }
    1
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}
