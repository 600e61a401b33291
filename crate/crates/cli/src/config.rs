//! Scenario configuration: a declarative TOML mirror of the simulation
//! pipeline. Parsing is strict (unknown keys rejected); semantic validation
//! runs afterwards and reports every problem it finds, not just the first.

// negated comparisons guard against NaN bounds from the TOML
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use pulseopt::filterfn::{FrequencyGrid, SpectralDensity};
use pulseopt::linalg::{C64, Operator};
use pulseopt::noise::{ColoredNoiseGenerator, QuasiStaticGenerator};
use pulseopt::pulse::{AmplitudeFunction, TransferFunction};
use pulseopt::sim::{CostKind, CostSpec, NoiseModel};
use pulseopt::solver::{HamiltonianSpec, LindbladSpec, NoiseChannel};

pub const HERMITICITY_TOL: f64 = 1e-10;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: Option<u32>,
    pub system: Option<SystemBlock>,
    pub pulse: Option<PulseBlock>,
    pub noise: Option<NoiseBlock>,
    pub costs: Option<Vec<CostBlock>>,
    pub optimizer: Option<OptimizerBlock>,
    pub stages: Option<Vec<StageBlock>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub dimension: usize,
    pub controls: Vec<OperatorSpec>,
    #[serde(default)]
    pub drift: Vec<OperatorSpec>,
    #[serde(default)]
    pub noise_operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub lindblad: Vec<LindbladBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladBlock {
    pub operator: OperatorSpec,
    pub rate: f64,
}

/// Operator literal: a named shortcut with optional scale, or a complex
/// matrix with entries written as numbers or `[re, im]` pairs.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub name: Option<String>,
    pub scale: Option<f64>,
    pub matrix: Option<Vec<Vec<ComplexEntry>>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ComplexEntry {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexEntry {
    fn to_c64(&self) -> C64 {
        match self {
            ComplexEntry::Real(re) => C64::new(*re, 0.0),
            ComplexEntry::Pair([re, im]) => C64::new(*re, *im),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseBlock {
    pub n_steps: usize,
    pub step_duration: Option<f64>,
    pub durations: Option<Vec<f64>>,
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub transfer: TransferBlock,
    #[serde(default)]
    pub amplitude: AmplitudeBlock,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum BoundsSpec {
    Uniform([f64; 2]),
    PerChannel(Vec<[f64; 2]>),
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum TransferBlock {
    #[default]
    Identity,
    Gaussian {
        oversampling: usize,
        /// kernel standard deviation in units of coarse steps
        kernel_width: f64,
        #[serde(default)]
        pad_lead: usize,
        #[serde(default)]
        pad_trail: usize,
        #[serde(default)]
        pad_value: f64,
    },
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum AmplitudeBlock {
    #[default]
    Identity,
    Power {
        exponent: f64,
    },
    /// `(A, delta) -> A sin(w t + delta)`; needs exactly two input channels
    Rabi {
        carrier_freq: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum NoiseBlock {
    None,
    QuasiStatic {
        standard_deviations: Vec<f64>,
        n_traces: usize,
        #[serde(default = "default_sampling")]
        sampling: SamplingSpec,
    },
    Colored {
        psd: PsdSpec,
        n_traces: usize,
        #[serde(default = "default_oversampling")]
        oversampling: usize,
    },
}

fn default_sampling() -> SamplingSpec {
    SamplingSpec::MonteCarlo
}

fn default_oversampling() -> usize {
    1
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SamplingSpec {
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum PsdSpec {
    OneOverF { amplitude: f64 },
    White { level: f64 },
    Box { variance: f64, cutoff: f64 },
}

impl PsdSpec {
    pub fn build(&self) -> SpectralDensity {
        match self {
            PsdSpec::OneOverF { amplitude } => SpectralDensity::one_over_f(*amplitude),
            PsdSpec::White { level } => SpectralDensity::white(*level),
            PsdSpec::Box { variance, cutoff } => {
                SpectralDensity::low_frequency_box(*variance, *cutoff)
            }
        }
    }

    fn validate(&self, errors: &mut Vec<String>, context: &str) {
        match self {
            PsdSpec::OneOverF { amplitude } if *amplitude < 0.0 => {
                errors.push(format!("{context}: 1/f amplitude must be >= 0"));
            }
            PsdSpec::White { level } if *level < 0.0 => {
                errors.push(format!("{context}: white level must be >= 0"));
            }
            PsdSpec::Box { variance, cutoff } if *variance < 0.0 || *cutoff <= 0.0 => {
                errors.push(format!(
                    "{context}: box spectrum needs variance >= 0 and cutoff > 0"
                ));
            }
            _ => {}
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub label: String,
    pub kind: CostKindSpec,
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub target: Option<TargetSpec>,
    pub neglect_systematic: Option<bool>,
    pub psd: Option<PsdSpec>,
    pub omega: Option<OmegaSpec>,
    pub comp_indices: Option<Vec<usize>>,
    pub initial_state: Option<Vec<ComplexEntry>>,
    pub target_state: Option<Vec<ComplexEntry>>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CostKindSpec {
    EntanglementInfidelity,
    NoiseInfidelity,
    FilterFunctionInfidelity,
    Leakage,
    StateInfidelity,
    OpenSystemInfidelity,
}

/// Target gate: a rotation `exp(-i angle/2 sigma_axis)`, a named gate, or a
/// matrix literal.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub rotation: Option<String>,
    pub angle: Option<f64>,
    pub name: Option<String>,
    pub matrix: Option<Vec<Vec<ComplexEntry>>>,
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum OmegaSpec {
    Log {
        start: Option<f64>,
        end: Option<f64>,
        n: usize,
    },
    Linear {
        start: f64,
        end: f64,
        n: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    #[serde(default = "default_g_tol")]
    pub g_tol: f64,
    #[serde(default = "default_f_tol")]
    pub f_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub wall_clock_limit: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    #[serde(default)]
    pub least_squares: bool,
}

fn default_g_tol() -> f64 {
    1e-8
}

fn default_f_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    500
}

fn default_n_starts() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBlock {
    pub costs: Vec<String>,
    pub max_iter: Option<usize>,
    pub g_tol: Option<f64>,
    pub f_tol: Option<f64>,
    pub n_starts: Option<usize>,
}

/// Parse the TOML text; a syntax or unknown-key error is fatal, everything
/// after that is collected by `validate`.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, Vec<String>> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| vec![format!("TOML parse error: {e}")])?;
    let errors = validate(&config);
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(errors)
    }
}

/// Collect every semantic problem in the config.
pub fn validate(config: &ScenarioConfig) -> Vec<String> {
    let mut errors = Vec::new();
    if let Some(v) = config.schema_version {
        if v != 1 {
            errors.push(format!("unsupported schema_version {v} (this build reads 1)"));
        }
    }
    let Some(system) = &config.system else {
        errors.push("missing required [system] block".into());
        return missing_blocks(config, errors);
    };
    let Some(pulse) = &config.pulse else {
        errors.push("missing required [pulse] block".into());
        return missing_blocks(config, errors);
    };
    let Some(costs) = &config.costs else {
        errors.push("missing required [[costs]] entries".into());
        return missing_blocks(config, errors);
    };
    let _ = missing_blocks(config, Vec::new());

    let dim = system.dimension;
    if dim == 0 {
        errors.push("system.dimension must be >= 1".into());
    }
    if system.controls.is_empty() {
        errors.push("system.controls must not be empty".into());
    }
    for (i, spec) in system.controls.iter().enumerate() {
        match build_operator(spec, dim) {
            Ok(op) => {
                if !op.is_hermitian(HERMITICITY_TOL.max(1e-10 * op.max_norm())) {
                    errors.push(format!(
                        "control operator {i} ('{}') is not Hermitian within tolerance",
                        describe(spec)
                    ));
                }
            }
            Err(e) => errors.push(format!("control operator {i}: {e}")),
        }
    }
    for (i, spec) in system.drift.iter().enumerate() {
        if let Err(e) = build_operator(spec, dim) {
            errors.push(format!("drift operator {i}: {e}"));
        }
    }
    for (i, spec) in system.noise_operators.iter().enumerate() {
        if let Err(e) = build_operator(spec, dim) {
            errors.push(format!("noise operator {i}: {e}"));
        }
    }
    for (i, block) in system.lindblad.iter().enumerate() {
        if block.rate < 0.0 {
            errors.push(format!("lindblad entry {i}: rate must be >= 0"));
        }
        if let Err(e) = build_operator(&block.operator, dim) {
            errors.push(format!("lindblad operator {i}: {e}"));
        }
    }

    if pulse.n_steps == 0 {
        errors.push("pulse.n_steps must be >= 1".into());
    }
    match (&pulse.step_duration, &pulse.durations) {
        (None, None) => errors.push("pulse needs step_duration or durations".into()),
        (Some(d), None) if *d <= 0.0 => errors.push("pulse.step_duration must be > 0".into()),
        (None, Some(list)) => {
            if list.len() != pulse.n_steps {
                errors.push(format!(
                    "pulse.durations has {} entries, expected n_steps = {}",
                    list.len(),
                    pulse.n_steps
                ));
            }
            if list.iter().any(|&d| d <= 0.0) {
                errors.push("pulse.durations must all be > 0".into());
            }
        }
        (Some(_), Some(_)) => {
            errors.push("pulse: give step_duration or durations, not both".into())
        }
        _ => {}
    }
    let n_raw_ch = match pulse.amplitude {
        AmplitudeBlock::Rabi { .. } => 2,
        _ => system.controls.len(),
    };
    match &pulse.bounds {
        BoundsSpec::Uniform([lo, hi]) => {
            if !(lo < hi) {
                errors.push("pulse.bounds: lower must be below upper".into());
            }
        }
        BoundsSpec::PerChannel(list) => {
            if list.len() != n_raw_ch {
                errors.push(format!(
                    "pulse.bounds lists {} channels, expected {}",
                    list.len(),
                    n_raw_ch
                ));
            }
            for (i, [lo, hi]) in list.iter().enumerate() {
                if !(lo < hi) {
                    errors.push(format!("pulse.bounds[{i}]: lower must be below upper"));
                }
            }
        }
    }
    if let TransferBlock::Gaussian {
        oversampling,
        kernel_width,
        ..
    } = &pulse.transfer
    {
        if *oversampling == 0 {
            errors.push("pulse.transfer.oversampling must be >= 1".into());
        }
        if *kernel_width <= 0.0 {
            errors.push("pulse.transfer.kernel_width must be > 0".into());
        }
    }
    if matches!(pulse.amplitude, AmplitudeBlock::Rabi { .. }) && system.controls.len() != 1 {
        // the Rabi map folds (amplitude, phase) rows into one drive channel
        errors.push("pulse.amplitude rabi drives exactly one control operator".into());
    }

    match &config.noise {
        Some(NoiseBlock::QuasiStatic {
            standard_deviations,
            n_traces,
            ..
        }) => {
            if standard_deviations.iter().any(|&s| s < 0.0) {
                errors.push("noise.standard_deviations must be >= 0".into());
            }
            if standard_deviations.len() != system.noise_operators.len() {
                errors.push(format!(
                    "noise.standard_deviations has {} entries but the system has {} noise operators",
                    standard_deviations.len(),
                    system.noise_operators.len()
                ));
            }
            if *n_traces == 0 {
                errors.push("noise.n_traces must be >= 1".into());
            }
        }
        Some(NoiseBlock::Colored {
            psd,
            n_traces,
            oversampling,
        }) => {
            psd.validate(&mut errors, "noise.psd");
            if *n_traces == 0 {
                errors.push("noise.n_traces must be >= 1".into());
            }
            if *oversampling == 0 {
                errors.push("noise.oversampling must be >= 1".into());
            }
            if system.noise_operators.is_empty() {
                errors.push("colored noise needs at least one system noise operator".into());
            }
            if pulse.durations.is_some() {
                errors.push("colored noise requires a uniform step_duration grid".into());
            }
        }
        _ => {}
    }

    if costs.is_empty() {
        errors.push("at least one [[costs]] entry is required".into());
    }
    let mut labels = std::collections::HashSet::new();
    for cost in costs {
        if !labels.insert(cost.label.clone()) {
            errors.push(format!("duplicate cost label '{}'", cost.label));
        }
        let ctx = format!("cost '{}'", cost.label);
        match cost.kind {
            CostKindSpec::EntanglementInfidelity | CostKindSpec::OpenSystemInfidelity => {
                match &cost.target {
                    None => errors.push(format!("{ctx}: missing target")),
                    Some(t) => {
                        if let Err(e) = build_target(t, dim) {
                            errors.push(format!("{ctx}: {e}"));
                        }
                    }
                }
                if cost.kind == CostKindSpec::OpenSystemInfidelity && system.lindblad.is_empty() {
                    errors.push(format!("{ctx}: needs [[system.lindblad]] entries"));
                }
            }
            CostKindSpec::NoiseInfidelity => {
                match &cost.target {
                    None => errors.push(format!("{ctx}: missing target")),
                    Some(t) => {
                        if let Err(e) = build_target(t, dim) {
                            errors.push(format!("{ctx}: {e}"));
                        }
                    }
                }
                match &config.noise {
                    None | Some(NoiseBlock::None) => {
                        errors.push(format!("{ctx}: needs a [noise] block"))
                    }
                    _ => {}
                }
            }
            CostKindSpec::FilterFunctionInfidelity => {
                if cost.psd.is_none() {
                    errors.push(format!("{ctx}: missing psd"));
                } else if let Some(psd) = &cost.psd {
                    psd.validate(&mut errors, &ctx);
                }
                if system.noise_operators.is_empty() {
                    errors.push(format!("{ctx}: needs system noise operators"));
                }
                if let Some(OmegaSpec::Log { n, .. } | OmegaSpec::Linear { n, .. }) = &cost.omega {
                    if *n < 2 {
                        errors.push(format!("{ctx}: omega grid needs n >= 2"));
                    }
                }
            }
            CostKindSpec::Leakage => match &cost.comp_indices {
                None => errors.push(format!("{ctx}: missing comp_indices")),
                Some(idx) => {
                    if idx.is_empty() || idx.iter().any(|&i| i >= dim) {
                        errors.push(format!("{ctx}: comp_indices out of range"));
                    }
                }
            },
            CostKindSpec::StateInfidelity => {
                for (name, state) in [
                    ("initial_state", &cost.initial_state),
                    ("target_state", &cost.target_state),
                ] {
                    match state {
                        None => errors.push(format!("{ctx}: missing {name}")),
                        Some(v) if v.len() != dim => errors.push(format!(
                            "{ctx}: {name} has length {}, expected {dim}",
                            v.len()
                        )),
                        _ => {}
                    }
                }
            }
        }
        if cost.weight < 0.0 {
            errors.push(format!("{ctx}: weight must be >= 0"));
        }
    }

    if let Some(opt) = &config.optimizer {
        if opt.g_tol <= 0.0 || opt.f_tol < 0.0 {
            errors.push("optimizer tolerances must be positive".into());
        }
        if opt.n_starts == 0 {
            errors.push("optimizer.n_starts must be >= 1".into());
        }
    }

    if let Some(stages) = &config.stages {
        for (i, stage) in stages.iter().enumerate() {
            if stage.costs.is_empty() {
                errors.push(format!("stage {i}: lists no costs"));
            }
            for label in &stage.costs {
                if !costs.iter().any(|c| &c.label == label) {
                    errors.push(format!("stage {i}: unknown cost label '{label}'"));
                }
            }
        }
    }

    errors
}

fn missing_blocks(config: &ScenarioConfig, mut errors: Vec<String>) -> Vec<String> {
    if config.system.is_none() && !errors.iter().any(|e| e.contains("[system]")) {
        errors.push("missing required [system] block".into());
    }
    if config.pulse.is_none() && !errors.iter().any(|e| e.contains("[pulse]")) {
        errors.push("missing required [pulse] block".into());
    }
    if config.costs.is_none() && !errors.iter().any(|e| e.contains("[[costs]]")) {
        errors.push("missing required [[costs]] entries".into());
    }
    errors
}

fn describe(spec: &OperatorSpec) -> String {
    spec.name.clone().unwrap_or_else(|| "matrix literal".into())
}

pub fn build_operator(spec: &OperatorSpec, dim: usize) -> Result<Operator, String> {
    match (&spec.name, &spec.matrix) {
        (Some(_), Some(_)) => Err("give name or matrix, not both".into()),
        (None, None) => Err("operator needs a name or a matrix".into()),
        (Some(name), None) => {
            let base = match name.as_str() {
                "pauli_x" => Operator::pauli_x(),
                "pauli_y" => Operator::pauli_y(),
                "pauli_z" => Operator::pauli_z(),
                "sigma_plus" => Operator::sigma_plus(),
                "sigma_minus" => Operator::sigma_minus(),
                "identity" => Operator::identity(dim),
                "zero" => Operator::zeros(dim),
                other => return Err(format!("unknown operator name '{other}'")),
            };
            if base.dim() != dim {
                return Err(format!(
                    "operator '{name}' has dimension {}, system has {dim}",
                    base.dim()
                ));
            }
            Ok(base.scaled(C64::new(spec.scale.unwrap_or(1.0), 0.0)))
        }
        (None, Some(rows)) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(format!("matrix literal must be {dim}x{dim}"));
            }
            let mut m = DMatrix::<C64>::zeros(dim, dim);
            for (i, row) in rows.iter().enumerate() {
                for (j, entry) in row.iter().enumerate() {
                    m[(i, j)] = entry.to_c64();
                }
            }
            let op = Operator::new(m).map_err(|e| e.to_string())?;
            Ok(op.scaled(C64::new(spec.scale.unwrap_or(1.0), 0.0)))
        }
    }
}

pub fn build_target(spec: &TargetSpec, dim: usize) -> Result<Operator, String> {
    match (&spec.rotation, &spec.name, &spec.matrix) {
        (Some(axis), None, None) => {
            let angle = spec
                .angle
                .ok_or_else(|| "rotation target needs an angle".to_string())?;
            if dim != 2 {
                return Err("rotation targets are two-level gates".into());
            }
            let sigma = match axis.as_str() {
                "x" => Operator::pauli_x(),
                "y" => Operator::pauli_y(),
                "z" => Operator::pauli_z(),
                other => return Err(format!("unknown rotation axis '{other}'")),
            };
            // R_axis(angle) = exp(-i angle/2 sigma)
            sigma
                .matexp(C64::new(0.0, -0.5 * angle))
                .map_err(|e| e.to_string())
        }
        (None, Some(name), None) => match name.as_str() {
            "identity" => Ok(Operator::identity(dim)),
            other => Err(format!("unknown target name '{other}'")),
        },
        (None, None, Some(rows)) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(format!("target matrix must be {dim}x{dim}"));
            }
            let mut m = DMatrix::<C64>::zeros(dim, dim);
            for (i, row) in rows.iter().enumerate() {
                for (j, entry) in row.iter().enumerate() {
                    m[(i, j)] = entry.to_c64();
                }
            }
            Operator::new(m).map_err(|e| e.to_string())
        }
        _ => Err("target needs exactly one of rotation/name/matrix".into()),
    }
}

/// Everything the runner needs for one stage, built from a validated config.
pub struct BuiltStage {
    pub simulator: pulseopt::sim::Simulator,
    pub bounds: pulseopt::optim::Bounds,
    pub termination: pulseopt::optim::Termination,
    pub n_starts: usize,
    pub least_squares: bool,
}

pub struct BuiltScenario {
    pub stages: Vec<BuiltStage>,
    pub seed: u64,
    pub raw_dt: Vec<f64>,
}

/// Instantiate the pipeline objects for every stage. `seed_override` and
/// `starts_override` come from the command line.
pub fn build_scenario(
    config: &ScenarioConfig,
    seed_override: Option<u64>,
    starts_override: Option<usize>,
) -> Result<BuiltScenario, String> {
    let system_block = config.system.as_ref().ok_or("missing [system]")?;
    let pulse_block = config.pulse.as_ref().ok_or("missing [pulse]")?;
    let cost_blocks = config.costs.as_ref().ok_or("missing [[costs]]")?;
    let dim = system_block.dimension;

    let coarse_dt: Vec<f64> = match (&pulse_block.step_duration, &pulse_block.durations) {
        (Some(d), None) => vec![*d; pulse_block.n_steps],
        (None, Some(list)) => list.clone(),
        _ => return Err("pulse needs step_duration or durations".into()),
    };

    let controls: Vec<Operator> = system_block
        .controls
        .iter()
        .map(|s| build_operator(s, dim))
        .collect::<Result<_, _>>()?;
    let drift: Vec<Operator> = if system_block.drift.is_empty() {
        vec![Operator::zeros(dim)]
    } else {
        system_block
            .drift
            .iter()
            .map(|s| build_operator(s, dim))
            .collect::<Result<_, _>>()?
    };
    let noise_ops: Vec<NoiseChannel> = system_block
        .noise_operators
        .iter()
        .map(|s| build_operator(s, dim).map(NoiseChannel::new))
        .collect::<Result<_, _>>()?;
    let lindblad = if system_block.lindblad.is_empty() {
        None
    } else {
        let ops: Vec<Operator> = system_block
            .lindblad
            .iter()
            .map(|b| build_operator(&b.operator, dim))
            .collect::<Result<_, _>>()?;
        let rates: Vec<f64> = system_block.lindblad.iter().map(|b| b.rate).collect();
        Some(LindbladSpec::new(ops, rates).map_err(|e| e.to_string())?)
    };

    // raw channel count: what the optimizer sees before amplitude mapping
    let n_ctrl = controls.len();
    let n_raw_ch = match pulse_block.amplitude {
        AmplitudeBlock::Rabi { .. } => 2,
        _ => n_ctrl,
    };

    let transfer = match &pulse_block.transfer {
        TransferBlock::Identity => TransferFunction::identity(pulse_block.n_steps, n_raw_ch),
        TransferBlock::Gaussian {
            oversampling,
            kernel_width,
            pad_lead,
            pad_trail,
            pad_value,
        } => {
            let tf = TransferFunction::gaussian_smoothing(
                pulse_block.n_steps,
                n_raw_ch,
                *oversampling,
                *kernel_width,
            )
            .map_err(|e| e.to_string())?;
            if *pad_lead > 0 || *pad_trail > 0 {
                tf.with_padding(*pad_lead, *pad_trail, *pad_value)
            } else {
                tf
            }
        }
    };

    // the solver grid is the transferred grid
    let probe = pulseopt::pulse::PulseMatrix::new(
        DMatrix::zeros(pulse_block.n_steps, n_raw_ch),
        coarse_dt.clone(),
    )
    .map_err(|e| e.to_string())?;
    let solver_dt = transfer.apply(&probe).map_err(|e| e.to_string())?.dt().to_vec();

    let amplitude = match &pulse_block.amplitude {
        AmplitudeBlock::Identity => AmplitudeFunction::identity(),
        AmplitudeBlock::Power { exponent } => AmplitudeFunction::power(n_raw_ch, *exponent),
        AmplitudeBlock::Rabi { carrier_freq } => {
            let mut times = Vec::with_capacity(solver_dt.len());
            let mut t = 0.0;
            for &d in &solver_dt {
                times.push(t + 0.5 * d);
                t += d;
            }
            AmplitudeFunction::rabi(*carrier_freq, times)
        }
    };

    let seed = seed_override.unwrap_or_else(|| {
        config.optimizer.as_ref().map(|o| o.seed).unwrap_or(0)
    });

    let noise_model = || -> Result<NoiseModel, String> {
        Ok(match &config.noise {
            None | Some(NoiseBlock::None) => NoiseModel::None,
            Some(NoiseBlock::QuasiStatic {
                standard_deviations,
                n_traces,
                sampling,
            }) => match sampling {
                SamplingSpec::MonteCarlo => NoiseModel::QuasiStatic(
                    QuasiStaticGenerator::monte_carlo(standard_deviations.clone(), *n_traces, seed),
                ),
                SamplingSpec::Quadrature => NoiseModel::QuasiStatic(
                    QuasiStaticGenerator::quadrature(standard_deviations.clone(), *n_traces),
                ),
            },
            Some(NoiseBlock::Colored {
                psd,
                n_traces,
                oversampling,
            }) => {
                let fine_dt = solver_dt[0] / *oversampling as f64;
                let n_samples = solver_dt.len() * *oversampling;
                let density = psd.build();
                let psds: Vec<pulseopt::noise::SpectralDensityFn> = (0..noise_ops.len())
                    .map(|_| {
                        let d = density.clone();
                        Arc::new(move |f: f64| d.onesided(f)) as pulseopt::noise::SpectralDensityFn
                    })
                    .collect();
                NoiseModel::Colored(ColoredNoiseGenerator::new(
                    psds, *n_traces, fine_dt, n_samples, seed,
                ))
            }
        })
    };

    let total_time: f64 = solver_dt.iter().sum();
    let min_dt = solver_dt.iter().cloned().fold(f64::INFINITY, f64::min);
    let build_cost = |block: &CostBlock| -> Result<CostSpec, String> {
        let kind = match block.kind {
            CostKindSpec::EntanglementInfidelity => CostKind::Entanglement {
                target: build_target(block.target.as_ref().ok_or("missing target")?, dim)?,
            },
            CostKindSpec::NoiseInfidelity => CostKind::NoiseInfidelity {
                target: build_target(block.target.as_ref().ok_or("missing target")?, dim)?,
                neglect_systematic: block.neglect_systematic.unwrap_or(true),
            },
            CostKindSpec::FilterFunctionInfidelity => {
                let grid = match &block.omega {
                    None => FrequencyGrid::default_for_pulse(total_time, min_dt, 200),
                    Some(OmegaSpec::Log { start, end, n }) => FrequencyGrid::log_spaced(
                        start.unwrap_or(1.0 / total_time),
                        end.unwrap_or(1.0 / min_dt),
                        *n,
                    ),
                    Some(OmegaSpec::Linear { start, end, n }) => {
                        FrequencyGrid::linear(*start, *end, *n)
                    }
                }
                .map_err(|e| e.to_string())?;
                CostKind::FilterFunction {
                    psd: block.psd.as_ref().ok_or("missing psd")?.build(),
                    grid,
                }
            }
            CostKindSpec::Leakage => CostKind::Leakage {
                comp_indices: block.comp_indices.clone().ok_or("missing comp_indices")?,
            },
            CostKindSpec::StateInfidelity => {
                let state = |v: &Option<Vec<ComplexEntry>>, name: &str| {
                    v.as_ref()
                        .ok_or_else(|| format!("missing {name}"))
                        .map(|v| DVector::from_iterator(v.len(), v.iter().map(|e| e.to_c64())))
                };
                CostKind::StateTransfer {
                    initial: state(&block.initial_state, "initial_state")?,
                    target: state(&block.target_state, "target_state")?,
                }
            }
            CostKindSpec::OpenSystemInfidelity => CostKind::OpenSystem {
                target: build_target(block.target.as_ref().ok_or("missing target")?, dim)?,
            },
        };
        Ok(CostSpec::new(block.label.clone(), kind).with_weight(block.weight))
    };

    // stages default to a single stage containing every cost, in order
    let stage_blocks: Vec<Vec<String>> = match &config.stages {
        Some(stages) => stages.iter().map(|s| s.costs.clone()).collect(),
        None => vec![cost_blocks.iter().map(|c| c.label.clone()).collect()],
    };

    let opt_block = config.optimizer.as_ref();
    let base_term = pulseopt::optim::Termination {
        g_tol: opt_block.map_or(1e-8, |o| o.g_tol),
        f_tol: opt_block.map_or(1e-10, |o| o.f_tol),
        max_iter: opt_block.map_or(500, |o| o.max_iter),
        wall_clock_limit: opt_block.and_then(|o| o.wall_clock_limit),
    };
    let base_starts = starts_override.unwrap_or_else(|| opt_block.map_or(1, |o| o.n_starts));
    let least_squares = opt_block.is_some_and(|o| o.least_squares);

    let mut stages = Vec::new();
    for (i, labels) in stage_blocks.iter().enumerate() {
        let mut specs = Vec::new();
        for label in labels {
            let block = cost_blocks
                .iter()
                .find(|c| &c.label == label)
                .ok_or_else(|| format!("stage {i}: unknown cost label '{label}'"))?;
            specs.push(build_cost(block)?);
        }
        let needs_noise = specs
            .iter()
            .any(|s| matches!(s.kind, CostKind::NoiseInfidelity { .. }));
        let model = if needs_noise { noise_model()? } else { NoiseModel::None };
        let system = HamiltonianSpec::new(
            controls.clone(),
            drift.clone(),
            noise_ops.clone(),
            solver_dt.clone(),
        )
        .map_err(|e| e.to_string())?;
        let simulator = pulseopt::sim::Simulator::new(
            transfer.clone(),
            amplitude.clone(),
            system,
            lindblad.clone(),
            model,
            specs,
        )
        .map_err(|e| e.to_string())?;
        let bounds = match &pulse_block.bounds {
            BoundsSpec::Uniform([lo, hi]) => {
                pulseopt::optim::Bounds::uniform(pulse_block.n_steps, n_raw_ch, *lo, *hi)
                    .map_err(|e| e.to_string())?
            }
            BoundsSpec::PerChannel(list) => {
                let lower = DMatrix::from_fn(pulse_block.n_steps, n_raw_ch, |_, j| list[j][0]);
                let upper = DMatrix::from_fn(pulse_block.n_steps, n_raw_ch, |_, j| list[j][1]);
                pulseopt::optim::Bounds::new(lower, upper).map_err(|e| e.to_string())?
            }
        };
        let stage_cfg = config.stages.as_ref().and_then(|s| s.get(i));
        let termination = pulseopt::optim::Termination {
            g_tol: stage_cfg.and_then(|s| s.g_tol).unwrap_or(base_term.g_tol),
            f_tol: stage_cfg.and_then(|s| s.f_tol).unwrap_or(base_term.f_tol),
            max_iter: stage_cfg.and_then(|s| s.max_iter).unwrap_or(base_term.max_iter),
            wall_clock_limit: base_term.wall_clock_limit,
        };
        let n_starts = stage_cfg
            .and_then(|s| s.n_starts)
            .unwrap_or(if i == 0 { base_starts } else { 1 });
        stages.push(BuiltStage {
            simulator,
            bounds,
            termination,
            n_starts,
            least_squares,
        });
    }

    Ok(BuiltScenario {
        stages,
        seed,
        raw_dt: coarse_dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset;
    use pulseopt::sim::CostProvider;

    #[test]
    fn preset_parses_and_matches_published_numbers() {
        let config = parse_config(preset::XPI2_EXAMPLE).expect("preset must be valid");
        let system = config.system.as_ref().unwrap();
        assert_eq!(system.dimension, 2);
        let pulse = config.pulse.as_ref().unwrap();
        assert_eq!(pulse.n_steps, 20);
        let dt = pulse.step_duration.unwrap();
        assert!((dt - 0.5 * std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(config.stages.as_ref().unwrap().len(), 2);
        let built = build_scenario(&config, None, None).unwrap();
        assert_eq!(built.stages.len(), 2);
        assert_eq!(built.stages[0].simulator.labels(), vec!["I_qs".to_string()]);
        assert_eq!(
            built.stages[1].simulator.labels(),
            vec!["I_e".to_string(), "I_ff".to_string()]
        );
    }

    #[test]
    fn empty_file_lists_every_missing_block() {
        let errors = parse_config("").unwrap_err();
        let text = errors.join("\n");
        assert!(text.contains("[system]"), "{text}");
        assert!(text.contains("[pulse]"), "{text}");
        assert!(text.contains("[[costs]]"), "{text}");
        assert!(errors.len() >= 3);
    }

    #[test]
    fn non_hermitian_control_is_named() {
        let toml = r#"
[system]
dimension = 2
controls = [{ matrix = [[0.0, [1.0, 0.0]], [0.0, 0.0]] }]

[pulse]
n_steps = 2
step_duration = 1.0
bounds = [-1.0, 1.0]

[[costs]]
label = "I_e"
kind = "entanglement_infidelity"
target = { name = "identity" }
"#;
        let errors = parse_config(toml).unwrap_err();
        assert!(
            errors.iter().any(|e| e.contains("control operator 0") && e.contains("Hermitian")),
            "{errors:?}"
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let toml = "nonsense_key = 1\n";
        let errors = parse_config(toml).unwrap_err();
        assert!(errors[0].contains("TOML parse error"), "{errors:?}");
    }

    #[test]
    fn multiple_semantic_errors_collected() {
        let toml = r#"
[system]
dimension = 2
controls = [{ name = "pauli_x", scale = 0.5 }]

[pulse]
n_steps = 0
step_duration = -1.0
bounds = [1.0, -1.0]

[noise]
kind = "quasi_static"
standard_deviations = [-0.05]
n_traces = 0

[[costs]]
label = "I_qs"
kind = "noise_infidelity"
target = { rotation = "q", angle = 1.0 }

[[stages]]
costs = ["missing_label"]
"#;
        let errors = parse_config(toml).unwrap_err();
        assert!(errors.len() >= 6, "expected many errors, got {errors:#?}");
        let text = errors.join("\n");
        for needle in [
            "n_steps",
            "step_duration",
            "lower must be below upper",
            "standard_deviations",
            "n_traces",
            "rotation axis",
            "missing_label",
        ] {
            assert!(text.contains(needle), "missing '{needle}' in {text}");
        }
    }

    #[test]
    fn operator_literals_build() {
        let spec = OperatorSpec {
            name: None,
            scale: Some(2.0),
            matrix: Some(vec![
                vec![ComplexEntry::Real(0.0), ComplexEntry::Pair([0.0, -1.0])],
                vec![ComplexEntry::Pair([0.0, 1.0]), ComplexEntry::Real(0.0)],
            ]),
        };
        let op = build_operator(&spec, 2).unwrap();
        let expected = Operator::pauli_y().scaled(C64::new(2.0, 0.0));
        assert!((&op - &expected).max_norm() < 1e-15);
    }

    #[test]
    fn rotation_target_matches_expected_gate() {
        let spec = TargetSpec {
            rotation: Some("x".into()),
            angle: Some(-std::f64::consts::FRAC_PI_2),
            name: None,
            matrix: None,
        };
        let target = build_target(&spec, 2).unwrap();
        let expected = Operator::pauli_x()
            .matexp(C64::new(0.0, 0.25 * std::f64::consts::PI))
            .unwrap();
        assert!((&target - &expected).max_norm() < 1e-14);
    }

    #[test]
    fn stage_defaults_cover_all_costs() {
        let toml = r#"
[system]
dimension = 2
controls = [{ name = "pauli_x", scale = 0.5 }]

[pulse]
n_steps = 3
step_duration = 0.5
bounds = [-1.0, 1.0]

[[costs]]
label = "I_e"
kind = "entanglement_infidelity"
target = { name = "identity" }
"#;
        let config = parse_config(toml).unwrap();
        let built = build_scenario(&config, None, None).unwrap();
        assert_eq!(built.stages.len(), 1);
        assert_eq!(built.stages[0].simulator.labels(), vec!["I_e".to_string()]);
    }
}
