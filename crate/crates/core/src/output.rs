//! Result-file output: JSON result documents, CSV trajectory and pulse
//! tables, and a timing sidecar.
//!
//! Every file is written atomically (temp file + rename) so interrupted
//! runs never leave partial documents. The main result documents contain no
//! wall-clock data: identical (config, seed) runs produce byte-identical
//! files. Timing lives in a separate sidecar excluded from that guarantee.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::filterfn::FilterFunctionResult;
use crate::optim::{DataContainer, OptimResult};
use crate::pulse::PulseMatrix;
use crate::sim::RuntimeStats;

pub const SCHEMA_VERSION: u32 = 1;

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(dir);
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".to_string());
    tmp.push(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One structured document per run: parameters, cost history, termination
/// reason, seed, plus the configuration text that produced it (so exports
/// can rebuild the pipeline). Deterministic for fixed (config, seed).
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub config_hash: String,
    /// 1-based stage index within the scenario
    pub stage: usize,
    pub config_text: String,
    pub result: OptimResult,
}

pub fn write_result_json(path: &Path, doc: &ResultDocument) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(doc)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_result_json(path: &Path) -> Result<ResultDocument> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize)]
struct TimingDocument<'a> {
    schema_version: u32,
    wall_clock_seconds: f64,
    cost_labels: &'a [String],
    cost_seconds: &'a [f64],
    gradient_seconds: f64,
    n_evaluations: usize,
}

/// Wall-clock statistics sidecar; excluded from the byte-identical
/// reproducibility contract.
pub fn write_timing_json(
    path: &Path,
    result: &OptimResult,
    stats: &RuntimeStats,
) -> Result<()> {
    let doc = TimingDocument {
        schema_version: SCHEMA_VERSION,
        wall_clock_seconds: result.wall_clock_seconds,
        cost_labels: &result.labels,
        cost_seconds: &stats.cost_seconds,
        gradient_seconds: stats.gradient_seconds,
        n_evaluations: stats.n_evaluations,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_container_json(path: &Path, container: &DataContainer) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(container)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Per-iteration cost trajectories: `iteration,<label>,...`.
pub fn write_cost_csv(path: &Path, result: &OptimResult) -> Result<()> {
    let mut buf = Vec::new();
    write!(buf, "iteration")?;
    for label in &result.labels {
        write!(buf, ",{label}")?;
    }
    writeln!(buf)?;
    for (i, row) in result.cost_history.iter().enumerate() {
        write!(buf, "{i}")?;
        for v in row {
            write!(buf, ",{v:.17e}")?;
        }
        writeln!(buf)?;
    }
    write_atomic(path, &buf)
}

pub fn write_pulse_csv(path: &Path, pulse: &PulseMatrix) -> Result<()> {
    let mut buf = Vec::new();
    pulse.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

pub fn write_filter_function_csv(path: &Path, ff: &FilterFunctionResult) -> Result<()> {
    let mut buf = Vec::new();
    ff.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}
