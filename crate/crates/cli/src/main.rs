use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hytasker::dataio::{instance_from_json, instance_to_json, DataError};
use hytasker::experiment::{
    emit_results, run_sweep, summary_path, Cell, ExperimentConfig, ExperimentError,
    InstanceFactory,
};
use hytasker::model::AllocationResult;
use hytasker::selection::{run_strategy, RunError, Strategy};

/// Hybrid opportunistic and participatory task allocation.
#[derive(Debug, Parser)]
#[command(name = "hytasker", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one instance (first value of every axis) as JSON.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one strategy on one instance.
    Run {
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Instance JSON; generated from the config when absent.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full cross-product of a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's strategy list.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Replaces the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// An error with its process exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const CONFIG_ERROR: u8 = 2;
const DATA_ERROR: u8 = 3;

fn config_error(message: impl ToString) -> Failure {
    Failure {
        code: CONFIG_ERROR,
        message: message.to_string(),
    }
}

fn data_error(message: impl ToString) -> Failure {
    Failure {
        code: DATA_ERROR,
        message: message.to_string(),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => config_error(e),
            ExperimentError::Data(_) | ExperimentError::Run { .. } | ExperimentError::Io { .. } => {
                data_error(e)
            }
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Params(_) => config_error(e),
            _ => data_error(e),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        data_error(e)
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            Ok(ExperimentConfig::from_json(&text)?)
        }
    }
}

fn first_cell(cfg: &ExperimentConfig) -> Cell {
    cfg.cells()[0]
}

fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<hytasker::model::Instance, Failure> {
    let cell = first_cell(cfg);
    let factory = InstanceFactory::load(&cfg.source)?;
    Ok(factory.instance(cell.num_workers, &cfg.population(&cell, seed))?)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

#[derive(Serialize)]
struct SnapshotOut {
    ordinal: usize,
    utility: f64,
    estimate: Option<f64>,
}

#[derive(Serialize)]
struct RunOut<'a> {
    strategy: Strategy,
    seed: u64,
    completed: usize,
    result: &'a AllocationResult,
    snapshots: Vec<SnapshotOut>,
    /// Ordinal of the paid snapshot.
    chosen: Option<usize>,
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let instance = generate(&cfg, seed)?;
            create_dir(&out)?;
            let path = out.join("instance.json");
            write(&path, instance_to_json(&instance).as_bytes())?;
            println!("wrote {}", path.display());
        }
        Command::Run {
            strategy,
            instance,
            config,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let strategy = strategy.unwrap_or(cfg.strategies[0]);
            let instance = match instance {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .map_err(|e| data_error(format!("{}: {e}", p.display())))?;
                    instance_from_json(&text).map_err(data_error)?
                }
                None => generate(&cfg, seed)?,
            };
            let outcome = run_strategy(strategy, &instance, &cfg.run_config(seed))?;
            let report = RunOut {
                strategy,
                seed,
                completed: outcome.result.completed_tasks.len(),
                result: &outcome.result,
                snapshots: outcome
                    .trace
                    .snapshots
                    .iter()
                    .map(|s| SnapshotOut {
                        ordinal: s.ordinal,
                        utility: s.utility,
                        estimate: s.estimate,
                    })
                    .collect(),
                chosen: outcome.trace.chosen.map(|i| i + 1),
            };
            create_dir(&out)?;
            let path = out.join("result.json");
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write(&path, json.as_bytes())?;
            let r = &outcome.result;
            println!(
                "{strategy}: completed {} of {} tasks, {} opportunistic workers, spend {} + {} of {}",
                r.completed_tasks.len(),
                instance.tasks.len(),
                r.selected_opportunistic.len(),
                r.opp_spend,
                r.par_spend,
                instance.budget.total
            );
        }
        Command::Sweep {
            config,
            strategy,
            seed,
            out,
            jobs,
        } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(s) = strategy {
                cfg.strategies = vec![s];
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if jobs == 0 {
                return Err(config_error("--jobs must be at least 1"));
            }
            let rows = run_sweep(&cfg, jobs)?;
            create_dir(&out)?;
            let path = out.join("results.csv");
            emit_results(&rows, &path).map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
            println!(
                "wrote {} rows to {} and {}",
                rows.len(),
                path.display(),
                summary_path(&path).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
