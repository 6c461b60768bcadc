// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod export;
mod report;
mod run;

use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, EXIT_VALIDATION};

/// Config-driven experiments on the multi-scale random conductance model.
#[derive(Parser)]
#[command(name = "walkforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads; defaults to WALKFORGE_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        verbose: bool,
    },
    /// Collect report statistics into one long-format CSV.
    Export {
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
        /// Skip reports whose config hash was already exported.
        #[arg(long)]
        dedup: bool,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("WALKFORGE_THREADS") {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                CliError::Config(format!("WALKFORGE_THREADS={v} is not a thread count"))
            })
        }
        Err(_) => Ok(None),
    }
}

fn main_inner(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run {
            config,
            threads,
            out,
            verbose,
        } => {
            if let Some(n) = thread_count(threads)? {
                if n == 0 {
                    return Err(CliError::Config("thread count must be at least 1".into()));
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::runtime("thread pool", e))?;
            }
            let text = fs::read_to_string(&config)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
            let loaded = config::load(&text)?;
            let summary = run::run(&loaded, &run::RunOptions { out, verbose })?;
            println!("{}", summary.report_path.display());
            if summary.valid {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "walkforge: validation failed, see {}",
                    summary.report_path.display()
                );
                Ok(ExitCode::from(EXIT_VALIDATION))
            }
        }
        Command::Export {
            reports,
            csv,
            dedup,
        } => {
            let file = File::create(&csv)
                .map_err(|e| CliError::runtime(&format!("cannot create {}", csv.display()), e))?;
            export::export(&reports, dedup, file)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match main_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("walkforge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
