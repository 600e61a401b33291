//! Scenario execution: run the configured stages in order, each stage
//! seeded by the previous stage's final parameters, and write the result
//! documents, trajectory CSVs, pulse CSVs and filter-function CSVs.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use pulseopt::optim::{DataContainer, OptimResult, Optimizer, OptimizerKind};
use pulseopt::output;
use pulseopt::sim::{CostKind, CostProvider};

use crate::config::{build_scenario, parse_config, BuiltStage};

/// Failures split by exit code: validation problems (exit 1) versus runtime
/// failures (exit 2).
#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(errors) => {
                writeln!(f, "configuration invalid ({} problem(s)):", errors.len())?;
                for e in errors {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug)]
pub struct StageSummary {
    pub labels: Vec<String>,
    pub initial_costs: Vec<f64>,
    pub final_costs: Vec<f64>,
    pub n_iterations: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug)]
pub struct RunSummary {
    pub stages: Vec<StageSummary>,
    pub config_hash: String,
}

pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Execute every stage of a scenario and write all output files.
pub fn run_scenario(
    config_text: &str,
    out_dir: &Path,
    seed_override: Option<u64>,
    starts_override: Option<usize>,
) -> Result<RunSummary, CliError> {
    let config = parse_config(config_text).map_err(CliError::Validation)?;
    let built = build_scenario(&config, seed_override, starts_override)
        .map_err(|e| CliError::Validation(vec![e]))?;
    let hash = config_hash(config_text);
    if built.stages.is_empty() {
        eprintln!("warning: stage list is empty; nothing to do");
        return Ok(RunSummary {
            stages: Vec::new(),
            config_hash: hash,
        });
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create output directory: {e}")))?;

    let mut summaries = Vec::new();
    let mut carry: Option<OptimResult> = None;
    for (idx, stage) in built.stages.iter().enumerate() {
        let stage_no = idx + 1;
        let stage_err =
            |msg: String| CliError::Runtime(format!("stage {stage_no} failed: {msg}"));
        let result =
            run_stage(stage, built.seed, carry.as_ref(), &hash, stage_no, out_dir, config_text)
                .map_err(stage_err)?;
        let labels = result.labels.clone();
        let initial = result
            .cost_history
            .first()
            .cloned()
            .unwrap_or_default();
        summaries.push(StageSummary {
            labels,
            initial_costs: initial,
            final_costs: result.best_cost_vector.clone(),
            n_iterations: result.n_iterations,
            wall_clock_seconds: result.wall_clock_seconds,
        });
        carry = Some(result);
    }
    Ok(RunSummary {
        stages: summaries,
        config_hash: hash,
    })
}

fn run_stage(
    stage: &BuiltStage,
    seed: u64,
    previous: Option<&OptimResult>,
    hash: &str,
    stage_no: usize,
    out_dir: &Path,
    config_text: &str,
) -> Result<OptimResult, String> {
    let sim = &stage.simulator;
    let mut optimizer = Optimizer::new(sim, stage.bounds.clone(), stage.termination)
        .map_err(|e| e.to_string())?;
    if stage.least_squares {
        optimizer = optimizer.with_kind(OptimizerKind::LeastSquares);
    }
    let result = match previous {
        // later stages start from the previous stage's final parameters
        Some(prev) => {
            let initial = prev
                .final_pulse(sim.raw_dt())
                .map_err(|e| format!("previous stage parameters unusable: {e}"))?;
            optimizer.run(&initial, seed).map_err(|e| e.to_string())?
        }
        None if stage.n_starts > 1 => {
            let container = optimizer
                .run_multi_start(stage.n_starts, seed, true, hash)
                .map_err(|e| e.to_string())?;
            output::write_container_json(
                &out_dir.join(format!("container_stage_{stage_no}.json")),
                &container,
            )
            .map_err(|e| e.to_string())?;
            best_of(&container, &sim.weights()).ok_or("every start failed")?
        }
        None => {
            let initial = optimizer.random_initial(seed, 0);
            optimizer.run(&initial, seed).map_err(|e| e.to_string())?
        }
    };
    if let pulseopt::optim::TerminationReason::Failed(msg) = &result.termination {
        return Err(msg.clone());
    }

    let doc = output::ResultDocument {
        schema_version: output::SCHEMA_VERSION,
        config_hash: hash.to_string(),
        stage: stage_no,
        config_text: config_text.to_string(),
        result: result.clone(),
    };
    output::write_result_json(&out_dir.join(format!("result_stage_{stage_no}.json")), &doc)
        .map_err(|e| e.to_string())?;
    output::write_timing_json(
        &out_dir.join(format!("timing_stage_{stage_no}.json")),
        &result,
        &sim.stats(),
    )
    .map_err(|e| e.to_string())?;
    output::write_cost_csv(&out_dir.join(format!("costs_stage_{stage_no}.csv")), &result)
        .map_err(|e| e.to_string())?;

    let final_raw = result
        .final_pulse(sim.raw_dt())
        .map_err(|e| e.to_string())?;
    let transferred = sim.transferred_pulse(&final_raw).map_err(|e| e.to_string())?;
    output::write_pulse_csv(&out_dir.join(format!("pulse_stage_{stage_no}.csv")), &transferred)
        .map_err(|e| e.to_string())?;

    if let Some(grid) = sim.costs().iter().find_map(|c| match &c.kind {
        CostKind::FilterFunction { grid, .. } => Some(grid.clone()),
        _ => None,
    }) {
        let ff = sim
            .filter_function(&final_raw, &grid)
            .map_err(|e| e.to_string())?;
        output::write_filter_function_csv(
            &out_dir.join(format!("filterfn_stage_{stage_no}.csv")),
            &ff,
        )
        .map_err(|e| e.to_string())?;
    }
    Ok(result)
}

/// Pick the successful result with the lowest weighted final cost.
fn best_of(container: &DataContainer, weights: &[f64]) -> Option<OptimResult> {
    container
        .results()
        .iter()
        .filter(|r| !matches!(r.termination, pulseopt::optim::TerminationReason::Failed(_)))
        .min_by(|a, b| {
            let fa: f64 = a.best_cost_vector.iter().zip(weights).map(|(v, w)| v * w).sum();
            let fb: f64 = b.best_cost_vector.iter().zip(weights).map(|(v, w)| v * w).sum();
            fa.partial_cmp(&fb).expect("finite costs")
        })
        .cloned()
}

pub enum ExportKind {
    Pulse,
    Costs,
    FilterFunction,
}

/// Re-emit CSV data from a stored result document. The document embeds the
/// scenario text, so the pipeline can be rebuilt without the original file.
pub fn export(result_path: &Path, kind: ExportKind, out_path: &Path) -> Result<(), CliError> {
    let doc = output::read_result_json(result_path)
        .map_err(|e| CliError::Runtime(format!("cannot read result document: {e}")))?;
    match kind {
        ExportKind::Costs => {
            output::write_cost_csv(out_path, &doc.result)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        ExportKind::Pulse | ExportKind::FilterFunction => {
            let config = parse_config(&doc.config_text).map_err(CliError::Validation)?;
            let built = build_scenario(&config, None, None)
                .map_err(|e| CliError::Validation(vec![e]))?;
            let stage = built
                .stages
                .get(doc.stage.saturating_sub(1))
                .ok_or_else(|| CliError::Runtime(format!("document names stage {}", doc.stage)))?;
            let sim = &stage.simulator;
            let raw = doc
                .result
                .final_pulse(sim.raw_dt())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            match kind {
                ExportKind::Pulse => {
                    let transferred = sim
                        .transferred_pulse(&raw)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    output::write_pulse_csv(out_path, &transferred)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
                ExportKind::FilterFunction => {
                    let grid = sim
                        .costs()
                        .iter()
                        .find_map(|c| match &c.kind {
                            CostKind::FilterFunction { grid, .. } => Some(grid.clone()),
                            _ => None,
                        })
                        .ok_or_else(|| {
                            CliError::Runtime("stage has no filter-function cost".into())
                        })?;
                    let ff = sim
                        .filter_function(&raw, &grid)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    output::write_filter_function_csv(out_path, &ff)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
                ExportKind::Costs => unreachable!(),
            }
        }
    }
    Ok(())
}
