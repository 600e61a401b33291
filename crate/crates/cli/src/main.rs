use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pulseopt_cli::preset;
use pulseopt_cli::scenario::{self, CliError, ExportKind};

/// Qubit-dynamics simulation and noise-aware pulse optimization.
#[derive(Parser)]
#[command(name = "pulseopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario: execute all stages and write result files.
    Run {
        /// Scenario TOML file (omit when using --preset)
        config: Option<PathBuf>,
        /// Output directory for result documents and CSV tables
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of multi-start runs for the first stage
        #[arg(long)]
        starts: Option<usize>,
        /// Use a built-in scenario instead of a config file
        #[arg(long)]
        preset: Option<String>,
    },
    /// Check a scenario file and report every problem found.
    Validate { config: PathBuf },
    /// Re-emit CSV data from a stored result document.
    Export {
        /// Result document (result_stage_N.json)
        result: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Export the transferred pulse samples
        #[arg(long, group = "what")]
        pulse: bool,
        /// Export the per-iteration cost trajectories
        #[arg(long, group = "what")]
        costs: bool,
        /// Export the filter functions of the final pulse
        #[arg(long, group = "what")]
        filterfn: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(_)) => ExitCode::from(1),
        Err(CliError::Runtime(_)) => ExitCode::from(2),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            starts,
            preset: preset_name,
        } => {
            let text = match (&config, &preset_name) {
                (Some(path), None) => std::fs::read_to_string(path)
                    .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?,
                (None, Some(name)) => preset::lookup(name)
                    .ok_or_else(|| {
                        runtime(format!(
                            "unknown preset '{name}'; available: {}",
                            preset::names().join(", ")
                        ))
                    })?
                    .to_string(),
                _ => {
                    return Err(runtime(
                        "give exactly one of a config file or --preset".to_string(),
                    ))
                }
            };
            let summary = scenario::run_scenario(&text, &out, seed, starts).map_err(report)?;
            for (i, stage) in summary.stages.iter().enumerate() {
                let pairs: Vec<String> = stage
                    .labels
                    .iter()
                    .zip(stage.initial_costs.iter().zip(&stage.final_costs))
                    .map(|(l, (a, b))| format!("{l}: {a:.3e} -> {b:.3e}"))
                    .collect();
                println!(
                    "stage {} done in {} iterations ({:.1} s): {}",
                    i + 1,
                    stage.n_iterations,
                    stage.wall_clock_seconds,
                    pairs.join(", ")
                );
            }
            println!("config hash {}", summary.config_hash);
            println!("results written to {}", out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| runtime(format!("cannot read {}: {e}", config.display())))?;
            match pulseopt_cli::config::parse_config(&text) {
                Ok(_) => {
                    println!("{} is valid", config.display());
                    Ok(())
                }
                Err(errors) => report_validation(errors),
            }
        }
        Command::Export {
            result,
            out,
            pulse,
            costs,
            filterfn,
        } => {
            let kind = match (pulse, costs, filterfn) {
                (true, false, false) => ExportKind::Pulse,
                (false, true, false) => ExportKind::Costs,
                (false, false, true) => ExportKind::FilterFunction,
                _ => {
                    return Err(runtime(
                        "choose exactly one of --pulse, --costs, --filterfn".to_string(),
                    ))
                }
            };
            scenario::export(&result, kind, &out).map_err(report)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn runtime(msg: String) -> CliError {
    let err = CliError::Runtime(msg);
    eprintln!("error: {err}");
    err
}

fn report(err: CliError) -> CliError {
    eprintln!("error: {err}");
    err
}

fn report_validation(errors: Vec<String>) -> Result<(), CliError> {
    let err = CliError::Validation(errors);
    eprintln!("{err}");
    Err(err)
}
