use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use inquire_core::metrics::{compute_metrics, curves_csv, results_csv};
use inquire_core::run::{load_results, record_script, replay_episode, run_stream, RunConfig};

#[derive(Parser)]
#[command(name = "inquire", version, about = "Diagnose / grade / evolve runs over a case corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a learning stream.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run one logged episode against its recorded calls.
    Replay {
        /// `<run>/episodes/<i>.transcript.jsonl`
        #[arg(long)]
        episode: PathBuf,
        /// Refuse to replay if this config disagrees with the run manifest.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print run metrics.
    Metrics {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, conflicts_with = "json")]
        csv: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write running-mean curves with bands to `<run>/curves.csv`.
    ExportCurves {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run a config and save every logged call as a replay script.
    RecordScript {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        script: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, out } => {
            let config = load_config(&config)?;
            let outcome = run_stream(&config, &out)?;
            match outcome.metrics {
                Some(m) => println!(
                    "{} episodes: mean S {:.2}, mean T {:.2}, mean C {:.2}; rules {}, memory {}",
                    m.episodes,
                    m.mean_s,
                    m.mean_t,
                    m.mean_c,
                    outcome.rules.len(),
                    outcome.memory.len()
                ),
                None => println!("no episodes were scored"),
            }
        }
        Command::Replay { episode, config } => {
            let check = config.as_deref().map(load_config).transpose()?;
            let report = replay_episode(&episode, check.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Metrics { run, csv, json } => {
            let results = load_results(&run)?;
            if results.is_empty() {
                bail!("{} has no episode results", run.display());
            }
            if csv {
                print!("{}", results_csv(&results)?);
            } else {
                let m = compute_metrics(&results)?;
                if json {
                    println!("{}", serde_json::to_string_pretty(&m)?);
                } else {
                    println!("episodes  {}", m.episodes);
                    println!("mean S    {:.4}", m.mean_s);
                    println!("mean T    {:.4}", m.mean_t);
                    println!("mean C    {:.4}", m.mean_c);
                    println!("diagnose  {:.3} s/episode", m.mean_diagnose_seconds);
                    println!("update    {:.3} s/episode", m.mean_update_seconds);
                }
            }
        }
        Command::ExportCurves { run } => {
            let results = load_results(&run)?;
            if results.is_empty() {
                bail!("{} has no episode results", run.display());
            }
            let path = run.join("curves.csv");
            std::fs::write(&path, curves_csv(&compute_metrics(&results)?)?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("{}", path.display());
        }
        Command::RecordScript { config, out, script } => {
            let config = load_config(&config)?;
            let name = script.file_stem().and_then(|s| s.to_str()).unwrap_or("recorded");
            let name = name.trim_end_matches(".script");
            let table = record_script(&config, &out, name)?;
            table.save(&script)?;
            println!("{} calls -> {}", table.len(), script.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
