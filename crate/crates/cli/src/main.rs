//! Command-line front end for the outreg experiment tooling.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 training
//! divergence, 5 gradient-check failure. Errors print one
//! machine-parseable line: `error class=<class>: <message>`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use outreg::gradcheck::CheckOptions;
use outreg::Error;

use commands::RunOverrides;

#[derive(Parser)]
#[command(
    name = "outreg",
    about = "Train and inspect classifiers with output-distribution regularizers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed list (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Validate the config, print the resolved settings, run nothing.
    #[arg(long)]
    dry_run: bool,
}

impl RunArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            out_dir: self.out.clone(),
            seeds: self.seeds.clone(),
            threads: self.threads,
            dry_run: self.dry_run,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write metrics plus checkpoints.
    Train(RunArgs),
    /// Train every grid point per seed, rank by validation error, and
    /// emit the best configuration as a ready-to-run config file.
    Gridsearch(RunArgs),
    /// Run the finite-difference oracle suite over every analytic
    /// gradient.
    Gradcheck {
        /// Class count for the vector-operation checks.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Random instances per check.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0x5EED)]
        seed: u64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Deliberately perturb the analytic gradients; the suite must
        /// then fail (self-test of the harness).
        #[arg(long)]
        perturb_analytic: bool,
    },
    /// Histogram a checkpoint's max softmax probabilities over a split.
    Histogram {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Experiment config describing the dataset.
        #[arg(long)]
        config: PathBuf,
        /// Split to evaluate: train, val, or test.
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value_t = outreg::reporting::DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
        /// Output directory for histogram.csv and entropy_stats.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn error_class(e: &Error) -> (&'static str, u8) {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArchitecture(_) => ("config", 2),
        Error::InvalidInput(_)
        | Error::InvalidLabel { .. }
        | Error::InvalidMask(_)
        | Error::Format { .. }
        | Error::Io(_) => ("data", 3),
        Error::TrainingDiverged(_) => ("divergence", 4),
        Error::InvalidState(_) => ("internal", 1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<ExitCode, Error> = match &cli.command {
        Command::Train(args) => {
            commands::cmd_train(&args.config, &args.overrides()).map(|()| ExitCode::SUCCESS)
        }
        Command::Gridsearch(args) => {
            commands::cmd_gridsearch(&args.config, &args.overrides()).map(|()| ExitCode::SUCCESS)
        }
        Command::Gradcheck {
            k,
            instances,
            seed,
            step,
            perturb_analytic,
        } => {
            let opts = CheckOptions {
                classes: *k,
                instances: *instances,
                seed: *seed,
                step: *step,
                analytic_perturbation: if *perturb_analytic { 1e-3 } else { 0.0 },
            };
            commands::cmd_gradcheck(&opts).map(|all_pass| {
                if all_pass {
                    ExitCode::SUCCESS
                } else {
                    eprintln!("error class=check: gradient checks failed");
                    ExitCode::from(5)
                }
            })
        }
        Command::Histogram {
            checkpoint,
            config,
            split,
            bins,
            out,
        } => commands::cmd_histogram(checkpoint, config, split, *bins, out)
            .map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let (class, code) = error_class(&e);
            eprintln!("error class={class}: {e}");
            ExitCode::from(code)
        }
    }
}
