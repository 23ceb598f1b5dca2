use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mgdfis_core::io::write_param_dir;
use mgdfis_harness::bench::{bench_tssa, format_table, DEFAULT_TOKENS};
use mgdfis_harness::flops::{flops, ladder};
use mgdfis_harness::gradcheck::{gradcheck_all, DEFAULT_SEEDS};
use mgdfis_harness::init::{init_params, manifest_constants};
use mgdfis_harness::run::{deterministic_part, run};
use mgdfis_harness::threads::thread_cap;
use mgdfis_harness::{exit, HarnessError, RunConfig, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "mgdfis",
    version,
    about = "Run and verify the MGDFIS feature-fusion kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    stage: Option<Stage>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated token counts for `bench-tssa`.
    #[arg(long, global = true, value_delimiter = ',')]
    tokens: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a pipeline stage and write its outputs.
    Run,
    /// Time TSSA and a quadratic attention baseline across token counts.
    BenchTssa,
    /// Print analytic operation counts.
    Flops,
    /// Check every analytic gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
    },
    /// Write the initialized parameters as MGDT files plus a manifest.
    DumpParams,
}

fn load_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| HarnessError::in_file(path, e.into()))?;
            RunConfig::parse(&text).map_err(|source| HarnessError::Config {
                path: path.clone(),
                source,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(stage) = cli.stage {
        cfg.stage = stage;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Run => {
            let report = run(&cfg)?;
            print!("{}", report.summary);
            debug_assert!(!deterministic_part(&report.summary).is_empty());
        }
        Command::BenchTssa => {
            let tokens = cli
                .tokens
                .clone()
                .unwrap_or_else(|| DEFAULT_TOKENS.to_vec());
            if tokens.is_empty() || tokens.contains(&0) {
                return Err(HarnessError::Usage("--tokens needs positive counts".into()));
            }
            print!("{}", format_table(&bench_tssa(&cfg, &tokens)?));
        }
        Command::Flops => {
            print!("{}", flops(&cfg)?.to_text());
            for (level, total) in ladder(&cfg)? {
                println!("ladder.{} = {total}", level.name());
            }
        }
        Command::Gradcheck { seeds } => {
            let report = gradcheck_all(&cfg, *seeds, thread_cap());
            print!("{}", report.to_text());
            if !report.passed() {
                return Err(HarnessError::Failed("gradient check failed".into()));
            }
        }
        Command::DumpParams => {
            let params = init_params(&cfg)?;
            write_param_dir(&cfg.out, &params, &manifest_constants(&cfg))
                .map_err(|e| HarnessError::in_file(&cfg.out, e))?;
            println!("wrote parameters to {}", cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE as u8
            } else {
                exit::OK as u8
            });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
