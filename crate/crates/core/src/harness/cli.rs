//! The `paff` command line. Every subcommand reads one run configuration and
//! works inside the run directory named by its fingerprint, so successive
//! subcommands with the same configuration and seed pick up each other's
//! artifacts.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use super::run::{
    ablate_stage, calibrate_stage, evaluate_stage, gen_data, paff_stage, report_stage,
    resolve_seed, train_policy_stage, train_relabeler_stage, RunConfig, RunDir, SEED_ENV,
};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "paff",
    version,
    about = "Play, relabel and fine-tune a pick-and-place policy"
)]
struct Cli {
    /// Run configuration (TOML); omitted keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Master seed. Overrides the file and the PAFF_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory under which run directories are created.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the stage-1 expert demonstrations.
    GenData,
    /// Train the stage-1 policy on the demonstrations.
    TrainPolicy,
    /// Pretrain the relabeler and train its temporal fusion.
    TrainRelabeler,
    /// Calibrate the relabel acceptance threshold.
    Calibrate,
    /// Play, relabel and fine-tune.
    PaffAdapt,
    /// Evaluate the stage-1 and (if present) adapted policies.
    Evaluate,
    /// Run the configured ablation axis over its seeds.
    Ablate {
        /// Stage-1 checkpoint cache; defaults to `<out>/cache`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Render plots and print a digest of the run's summaries.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainPolicy => "train-policy",
            Command::TrainRelabeler => "train-relabeler",
            Command::Calibrate => "calibrate",
            Command::PaffAdapt => "paff-adapt",
            Command::Evaluate => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Report => "report",
        }
    }
}

/// 1 for configuration errors, wherever they surface; 2 for the rest.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Stage { source, .. } => exit_code(source),
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on a usage or configuration error,
/// 2 on a runtime error.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    config.seed = resolve_seed(config.seed, cli.seed, env.as_deref())?;
    config.validate()?;
    let dir = RunDir::create(&cli.out, &config)?;
    println!("run {}", dir.root.display());

    let started = Instant::now();
    match &cli.command {
        Command::GenData => println!("demos: {}", gen_data(&config, &dir)?),
        Command::TrainPolicy => {
            let losses = train_policy_stage(&config, &dir)?;
            println!(
                "policy: {} epochs, final loss {:.5}",
                losses.len(),
                losses.last().unwrap_or(&f64::NAN)
            );
        }
        Command::TrainRelabeler => {
            let (a, b) = train_relabeler_stage(&config, &dir)?;
            println!(
                "relabeler: phase A loss {:.5}, phase B loss {:.5}",
                a.last().unwrap_or(&f64::NAN),
                b.last().unwrap_or(&f64::NAN)
            );
        }
        Command::Calibrate => {
            let c = calibrate_stage(&config, &dir)?;
            println!(
                "theta {}: keeps {}/{} at precision {:.4}",
                c.theta, c.kept, c.total, c.precision
            );
            if !c.attainable {
                log::warn!(
                    "target precision {} is not attainable",
                    config.calibration.target_precision
                );
            }
        }
        Command::PaffAdapt => {
            let r = paff_stage(&config, &dir)?;
            println!(
                "play {} records; kept {} of {} relabeled (precision {:?}); fine-tuned on {}",
                r.play.records,
                r.relabel.kept,
                r.relabel.total,
                r.relabel.kept_precision,
                r.finetune.relabeled
            );
        }
        Command::Evaluate => {
            let s = evaluate_stage(&config, &dir)?;
            println!(
                "report {} ({} tasks)",
                dir.path("report.json").display(),
                s.baseline.tasks.len()
            );
        }
        Command::Ablate { cache } => {
            let cache = cache.clone().unwrap_or_else(|| cli.out.join("cache"));
            let table = ablate_stage(&config, &dir, &cache)?;
            for c in &table.cells {
                println!(
                    "{:<18} held-out {:?} ({} runs, {} unadapted, {} failed)",
                    c.label,
                    c.held_out_success.map(|s| s.mean),
                    c.runs,
                    c.unadapted,
                    c.errors.len()
                );
            }
            if table.failed() {
                return Err(Error::Adaptation(
                    "some ablation runs failed; see ablation.json".into(),
                ));
            }
        }
        Command::Report => print!("{}", report_stage(&config, &dir)?),
    }
    dir.record_timing(cli.command.name(), started.elapsed().as_secs_f64())?;
    Ok(())
}
