use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use savc::config::{parse_override, ExperimentConfig};
use savc::error::{Error, Result};
use savc::experiment::{compare_runs, describe_schedule, dump_embeddings, metrics_from_dump, run_experiment};
use savc::report::RunStatus;
use savc_core::metrics::SeparationOptions;

#[derive(Parser)]
#[command(name = "savc", version, about = "Few-shot class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every session of a configured experiment.
    Run {
        /// TOML configuration; built-in defaults when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override a configuration key, e.g. `--set train.base_epochs=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Print per-session accuracies of a run and its last-session gain over a baseline run.
    Compare {
        run: PathBuf,
        baseline: PathBuf,
        /// Row label; defaults to the run directory name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Write backbone features of the test samples seen by a checkpoint.
    DumpEmbeddings {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Separation metrics (distances, R²) of an embedding dump, as JSON.
    Metrics {
        embeddings: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        max_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<ExperimentConfig> {
    let overrides = overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    match path {
        Some(p) => ExperimentConfig::from_file(p, &overrides),
        None => ExperimentConfig::from_toml_str("", &overrides),
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides, print_config } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let outcome = run_experiment(&cfg)?;
            match outcome.status {
                RunStatus::DryRun => {
                    println!("dry run: {}", outcome.data_hint.unwrap_or_default());
                    println!("schedule: {}", describe_schedule(&cfg.schedule()));
                }
                _ => {
                    for s in &outcome.sessions {
                        println!("session {} ({} classes): {:.2}%", s.session, s.num_classes, s.accuracy);
                    }
                    println!("results in {}", outcome.dir.display());
                }
            }
        }
        Command::Compare { run, baseline, name } => {
            let result = compare_runs(&run, &baseline)?;
            let name = name.unwrap_or_else(|| run.file_name().and_then(|f| f.to_str()).unwrap_or("run").to_string());
            println!("{}", result.format_row(&name));
        }
        Command::DumpEmbeddings { config, overrides, checkpoint, out } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let n = dump_embeddings(&cfg, &checkpoint, &out)?;
            println!("wrote {n} embeddings to {}", out.display());
        }
        Command::Metrics { embeddings, max_points, seed } => {
            if max_points < 2 {
                return Err(Error::Input("--max-points must be at least 2".into()));
            }
            print_json(&metrics_from_dump(&embeddings, SeparationOptions { max_points, seed })?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
