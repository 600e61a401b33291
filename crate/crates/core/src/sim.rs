//! The simulator: one object wiring transfer function, amplitude function,
//! system model, noise and cost functions into a cost-vector/gradient
//! interface for the optimizer, with runtime statistics.

use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::cost;
use crate::error::{Error, Result};
use crate::filterfn::{
    compute_filter_function, gradient_fd, infidelity_from_spectrum, FilterFunctionResult,
    FrequencyGrid, SpectralDensity,
};
use crate::linalg::{C64, Operator};
use crate::noise::{ColoredNoiseGenerator, NoiseTraces, QuasiStaticGenerator};
use crate::pulse::{AmplitudeFunction, PulseMatrix, TransferFunction};
use crate::solver::{
    propagate_closed, propagate_closed_with_gradients, propagate_lindblad_with_gradients,
    propagate_monte_carlo_with_gradients, HamiltonianSpec, LindbladSpec,
};

/// Noise source attached to the Monte Carlo solver path.
#[derive(Clone)]
pub enum NoiseModel {
    None,
    QuasiStatic(QuasiStaticGenerator),
    Colored(ColoredNoiseGenerator),
}

#[derive(Clone)]
pub enum CostKind {
    /// Systematic entanglement infidelity against a target gate.
    Entanglement { target: Operator },
    /// Monte-Carlo-averaged noise infidelity.
    NoiseInfidelity {
        target: Operator,
        neglect_systematic: bool,
    },
    /// Filter-function noise infidelity; gradients by central finite
    /// differences over the raw parameters.
    FilterFunction {
        psd: SpectralDensity,
        grid: FrequencyGrid,
    },
    /// Population loss out of a computational subspace.
    Leakage { comp_indices: Vec<usize> },
    /// Pure-state transfer infidelity.
    StateTransfer {
        initial: DVector<C64>,
        target: DVector<C64>,
    },
    /// Open-system (Lindblad) infidelity against a target gate.
    OpenSystem { target: Operator },
}

#[derive(Clone)]
pub struct CostSpec {
    pub label: String,
    pub weight: f64,
    pub kind: CostKind,
}

impl CostSpec {
    pub fn new(label: impl Into<String>, kind: CostKind) -> Self {
        CostSpec {
            label: label.into(),
            weight: 1.0,
            kind,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// Wall-clock accounting of the simulation side.
#[derive(Debug, Clone, Default)]
pub struct RuntimeStats {
    /// seconds spent evaluating each cost entry (values only)
    pub cost_seconds: Vec<f64>,
    /// seconds spent in gradient computation and chaining
    pub gradient_seconds: f64,
    pub n_evaluations: usize,
}

/// Interface between the simulation and the optimization algorithm.
pub trait CostProvider: Sync {
    fn labels(&self) -> Vec<String>;
    fn weights(&self) -> Vec<f64>;
    fn raw_steps(&self) -> usize;
    fn raw_channels(&self) -> usize;
    fn raw_dt(&self) -> Vec<f64>;
    /// Cost vector and per-entry gradients with respect to the raw
    /// optimization parameters.
    fn evaluate(&self, raw: &PulseMatrix) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)>;
    /// Cost vector only; line searches use this cheaper path.
    fn evaluate_values(&self, raw: &PulseMatrix) -> Result<Vec<f64>> {
        self.evaluate(raw).map(|(v, _)| v)
    }
}

pub struct Simulator {
    transfer: TransferFunction,
    amplitude: AmplitudeFunction,
    system: HamiltonianSpec,
    lindblad: Option<LindbladSpec>,
    traces: Option<NoiseTraces>,
    costs: Vec<CostSpec>,
    fd_step: f64,
    stats: Mutex<RuntimeStats>,
}

impl Simulator {
    /// Wire the pipeline together. Noise traces are generated once, here,
    /// so every later evaluation is a pure function of the parameters.
    pub fn new(
        transfer: TransferFunction,
        amplitude: AmplitudeFunction,
        system: HamiltonianSpec,
        lindblad: Option<LindbladSpec>,
        noise: NoiseModel,
        costs: Vec<CostSpec>,
    ) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::invalid("at least one cost function is required"));
        }
        let n_solver_steps = system.n_steps();
        if transfer.n_output_steps() != n_solver_steps {
            return Err(Error::DimensionMismatch {
                context: "transfer output steps vs solver grid",
                expected: n_solver_steps,
                got: transfer.n_output_steps(),
            });
        }
        let n_u = amplitude.n_output_channels(transfer.n_channels());
        if n_u != system.n_controls() {
            return Err(Error::DimensionMismatch {
                context: "amplitude output channels vs control operators",
                expected: system.n_controls(),
                got: n_u,
            });
        }
        let traces = match noise {
            NoiseModel::None => None,
            NoiseModel::QuasiStatic(gen) => Some(gen.generate(n_solver_steps)?),
            NoiseModel::Colored(gen) => {
                let t = gen.generate()?;
                if t.n_steps() % n_solver_steps != 0 {
                    return Err(Error::DimensionMismatch {
                        context: "colored noise samples vs solver grid",
                        expected: n_solver_steps,
                        got: t.n_steps(),
                    });
                }
                Some(t)
            }
        };
        let dim = system.dim();
        let n_costs = costs.len();
        for spec in &costs {
            match &spec.kind {
                CostKind::Entanglement { target } | CostKind::OpenSystem { target } => {
                    if target.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            context: "cost target dimension",
                            expected: dim,
                            got: target.dim(),
                        });
                    }
                }
                CostKind::NoiseInfidelity { target, .. } => {
                    if target.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            context: "cost target dimension",
                            expected: dim,
                            got: target.dim(),
                        });
                    }
                    if traces.is_none() {
                        return Err(Error::invalid(format!(
                            "cost '{}' needs a noise model",
                            spec.label
                        )));
                    }
                }
                CostKind::FilterFunction { .. } => {
                    if system.noise_channels().is_empty() {
                        return Err(Error::invalid(format!(
                            "cost '{}' needs noise operators on the system",
                            spec.label
                        )));
                    }
                }
                CostKind::Leakage { comp_indices } => {
                    if comp_indices.is_empty() || comp_indices.iter().any(|&i| i >= dim) {
                        return Err(Error::invalid(format!(
                            "cost '{}' has an invalid computational subspace",
                            spec.label
                        )));
                    }
                }
                CostKind::StateTransfer { initial, target } => {
                    if initial.len() != dim || target.len() != dim {
                        return Err(Error::DimensionMismatch {
                            context: "state transfer dimension",
                            expected: dim,
                            got: initial.len().min(target.len()),
                        });
                    }
                }
            }
            if let CostKind::OpenSystem { .. } = spec.kind {
                if lindblad.is_none() {
                    return Err(Error::invalid(format!(
                        "cost '{}' needs a Lindblad model",
                        spec.label
                    )));
                }
            }
        }
        Ok(Simulator {
            transfer,
            amplitude,
            system,
            lindblad,
            traces,
            costs,
            fd_step: 1e-6,
            stats: Mutex::new(RuntimeStats {
                cost_seconds: vec![0.0; n_costs],
                gradient_seconds: 0.0,
                n_evaluations: 0,
            }),
        })
    }

    pub fn costs(&self) -> &[CostSpec] {
        &self.costs
    }

    pub fn system(&self) -> &HamiltonianSpec {
        &self.system
    }

    pub fn transfer(&self) -> &TransferFunction {
        &self.transfer
    }

    pub fn amplitude(&self) -> &AmplitudeFunction {
        &self.amplitude
    }

    pub fn noise_traces(&self) -> Option<&NoiseTraces> {
        self.traces.as_ref()
    }

    pub fn stats(&self) -> RuntimeStats {
        self.stats.lock().expect("stats lock").clone()
    }

    /// The transferred-and-amplified control pulse for a raw parameter set.
    pub fn control_amplitudes(&self, raw: &PulseMatrix) -> Result<PulseMatrix> {
        let transferred = self
            .transfer
            .apply(raw)
            .map_err(|e| e.in_stage("transfer function"))?;
        self.amplitude
            .apply(&transferred)
            .map_err(|e| e.in_stage("amplitude function"))
    }

    /// Transferred pulse prior to the amplitude function (plot/export data).
    pub fn transferred_pulse(&self, raw: &PulseMatrix) -> Result<PulseMatrix> {
        self.transfer
            .apply(raw)
            .map_err(|e| e.in_stage("transfer function"))
    }

    /// Filter functions of the current pulse (for export).
    pub fn filter_function(
        &self,
        raw: &PulseMatrix,
        grid: &FrequencyGrid,
    ) -> Result<FilterFunctionResult> {
        let u = self.control_amplitudes(raw)?;
        let record = propagate_closed(&self.system, &u).map_err(|e| e.in_stage("solver"))?;
        compute_filter_function(&record, self.system.noise_channels(), grid)
            .map_err(|e| e.in_stage("filter function"))
    }

    /// Chain a gradient with respect to the control amplitudes back through
    /// the amplitude and transfer functions to the raw parameters.
    fn chain_to_raw(&self, transferred: &PulseMatrix, d_u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d_x = self
            .amplitude
            .jacobian_chain(transferred, d_u)
            .map_err(|e| e.in_stage("amplitude gradient chain"))?;
        self.transfer
            .chain_gradient(&d_x)
            .map_err(|e| e.in_stage("transfer gradient chain"))
    }

    fn filter_function_value(
        &self,
        raw: &PulseMatrix,
        psd: &SpectralDensity,
        grid: &FrequencyGrid,
    ) -> Result<f64> {
        let u = self.control_amplitudes(raw)?;
        let record = propagate_closed(&self.system, &u).map_err(|e| e.in_stage("solver"))?;
        let ff = compute_filter_function(&record, self.system.noise_channels(), grid)
            .map_err(|e| e.in_stage("filter function"))?;
        infidelity_from_spectrum(&ff, std::slice::from_ref(psd), grid)
            .map_err(|e| e.in_stage("filter-function infidelity"))
    }
}

impl CostProvider for Simulator {
    fn labels(&self) -> Vec<String> {
        self.costs.iter().map(|c| c.label.clone()).collect()
    }

    fn weights(&self) -> Vec<f64> {
        self.costs.iter().map(|c| c.weight).collect()
    }

    fn raw_steps(&self) -> usize {
        self.transfer.n_input_steps()
    }

    fn raw_channels(&self) -> usize {
        self.transfer.n_channels()
    }

    fn raw_dt(&self) -> Vec<f64> {
        // measured transfer functions pin their input grid; otherwise
        // reconstruct the coarse grid from the solver grid by skipping the
        // padding and summing the oversampled fine steps of each step
        if let Some(input) = self.transfer.fixed_input_grid() {
            return input.to_vec();
        }
        let os = self.transfer.oversampling();
        let lead = self.transfer.lead_padding();
        let solver_dt = self.system.dt();
        (0..self.transfer.n_input_steps())
            .map(|i| solver_dt[lead + i * os..lead + (i + 1) * os].iter().sum())
            .collect()
    }

    /// Run transfer -> amplitude -> solvers -> costs; return the cost vector
    /// and the per-entry gradients with respect to the raw parameters.
    fn evaluate(&self, raw: &PulseMatrix) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
        let transferred = self
            .transfer
            .apply(raw)
            .map_err(|e| e.in_stage("transfer function"))?;
        let u = self
            .amplitude
            .apply(&transferred)
            .map_err(|e| e.in_stage("amplitude function"))?;

        let needs_closed = self.costs.iter().any(|c| {
            matches!(
                c.kind,
                CostKind::Entanglement { .. }
                    | CostKind::Leakage { .. }
                    | CostKind::StateTransfer { .. }
                    | CostKind::NoiseInfidelity {
                        neglect_systematic: true,
                        ..
                    }
            )
        });
        let needs_mc = self
            .costs
            .iter()
            .any(|c| matches!(c.kind, CostKind::NoiseInfidelity { .. }));
        let needs_open = self
            .costs
            .iter()
            .any(|c| matches!(c.kind, CostKind::OpenSystem { .. }));

        let closed = if needs_closed {
            Some(propagate_closed_with_gradients(&self.system, &u).map_err(|e| e.in_stage("solver"))?)
        } else {
            None
        };
        let monte_carlo = if needs_mc {
            let traces = self.traces.as_ref().expect("validated at construction");
            Some(
                propagate_monte_carlo_with_gradients(&self.system, &u, traces)
                    .map_err(|e| e.in_stage("Monte Carlo solver"))?,
            )
        } else {
            None
        };
        let open = if needs_open {
            let lind = self.lindblad.as_ref().expect("validated at construction");
            Some(
                propagate_lindblad_with_gradients(&self.system, lind, &u)
                    .map_err(|e| e.in_stage("Lindblad solver"))?,
            )
        } else {
            None
        };

        let mut values = Vec::with_capacity(self.costs.len());
        let mut gradients = Vec::with_capacity(self.costs.len());
        let mut cost_seconds = vec![0.0; self.costs.len()];
        let mut gradient_seconds = 0.0;
        for (idx, spec) in self.costs.iter().enumerate() {
            let t0 = Instant::now();
            let stage = |e: Error| e.in_stage(format!("cost '{}'", spec.label));
            match &spec.kind {
                CostKind::Entanglement { target } => {
                    let (rec, blocks) = closed.as_ref().expect("closed record");
                    let value = cost::entanglement_infidelity(rec.total(), target).map_err(stage)?;
                    cost_seconds[idx] += t0.elapsed().as_secs_f64();
                    let tg = Instant::now();
                    let d_u = cost::entanglement_infidelity_gradient(rec, blocks, target)
                        .map_err(|e| e.in_stage(format!("cost '{}' gradient", spec.label)))?;
                    gradients.push(self.chain_to_raw(&transferred, &d_u)?);
                    gradient_seconds += tg.elapsed().as_secs_f64();
                    values.push(value);
                }
                CostKind::NoiseInfidelity {
                    target,
                    neglect_systematic,
                } => {
                    let noisy = monte_carlo.as_ref().expect("MC records");
                    let records: Vec<_> = noisy.iter().map(|(r, _)| r.clone()).collect();
                    let noiseless = closed.as_ref().map(|(r, _)| r);
                    let value = cost::noise_average_infidelity(
                        &records,
                        target,
                        *neglect_systematic,
                        noiseless,
                    )
                    .map_err(stage)?;
                    cost_seconds[idx] += t0.elapsed().as_secs_f64();
                    let tg = Instant::now();
                    let d_u = cost::noise_average_infidelity_gradient(
                        noisy,
                        target,
                        *neglect_systematic,
                        closed.as_ref().map(|(r, b)| (r, b)),
                    )
                    .map_err(|e| e.in_stage(format!("cost '{}' gradient", spec.label)))?;
                    gradients.push(self.chain_to_raw(&transferred, &d_u)?);
                    gradient_seconds += tg.elapsed().as_secs_f64();
                    values.push(value);
                }
                CostKind::FilterFunction { psd, grid } => {
                    let value = self.filter_function_value(raw, psd, grid).map_err(stage)?;
                    cost_seconds[idx] += t0.elapsed().as_secs_f64();
                    let tg = Instant::now();
                    let eval = |values: &DMatrix<f64>| -> Result<f64> {
                        let p = PulseMatrix::new(values.clone(), raw.dt().to_vec())?;
                        self.filter_function_value(&p, psd, grid)
                    };
                    let grad = gradient_fd(&eval, raw.values(), self.fd_step)
                        .map_err(|e| e.in_stage(format!("cost '{}' gradient", spec.label)))?;
                    gradients.push(grad);
                    gradient_seconds += tg.elapsed().as_secs_f64();
                    values.push(value);
                }
                CostKind::Leakage { comp_indices } => {
                    let (rec, blocks) = closed.as_ref().expect("closed record");
                    let value = cost::leakage_error(rec.total(), comp_indices).map_err(stage)?;
                    cost_seconds[idx] += t0.elapsed().as_secs_f64();
                    let tg = Instant::now();
                    let d_u = cost::leakage_error_gradient(rec, blocks, comp_indices)
                        .map_err(|e| e.in_stage(format!("cost '{}' gradient", spec.label)))?;
                    gradients.push(self.chain_to_raw(&transferred, &d_u)?);
                    gradient_seconds += tg.elapsed().as_secs_f64();
                    values.push(value);
                }
                CostKind::StateTransfer { initial, target } => {
                    let (rec, blocks) = closed.as_ref().expect("closed record");
                    let value = cost::state_transfer_infidelity(rec.total(), initial, target)
                        .map_err(stage)?;
                    cost_seconds[idx] += t0.elapsed().as_secs_f64();
                    let tg = Instant::now();
                    let d_u =
                        cost::state_transfer_infidelity_gradient(rec, blocks, initial, target)
                            .map_err(|e| e.in_stage(format!("cost '{}' gradient", spec.label)))?;
                    gradients.push(self.chain_to_raw(&transferred, &d_u)?);
                    gradient_seconds += tg.elapsed().as_secs_f64();
                    values.push(value);
                }
                CostKind::OpenSystem { target } => {
                    let (rec, blocks) = open.as_ref().expect("Lindblad record");
                    let value =
                        1.0 - cost::open_system_fidelity(target, rec.total()).map_err(stage)?;
                    cost_seconds[idx] += t0.elapsed().as_secs_f64();
                    let tg = Instant::now();
                    let d_u = cost::open_system_infidelity_gradient(rec, blocks, target)
                        .map_err(|e| e.in_stage(format!("cost '{}' gradient", spec.label)))?;
                    gradients.push(self.chain_to_raw(&transferred, &d_u)?);
                    gradient_seconds += tg.elapsed().as_secs_f64();
                    values.push(value);
                }
            }
        }
        let mut stats = self.stats.lock().expect("stats lock");
        for (acc, dt) in stats.cost_seconds.iter_mut().zip(&cost_seconds) {
            *acc += dt;
        }
        stats.gradient_seconds += gradient_seconds;
        stats.n_evaluations += 1;
        Ok((values, gradients))
    }

    fn evaluate_values(&self, raw: &PulseMatrix) -> Result<Vec<f64>> {
        let u = self.control_amplitudes(raw)?;
        let needs_closed = self.costs.iter().any(|c| {
            matches!(
                c.kind,
                CostKind::Entanglement { .. }
                    | CostKind::Leakage { .. }
                    | CostKind::StateTransfer { .. }
                    | CostKind::FilterFunction { .. }
                    | CostKind::NoiseInfidelity {
                        neglect_systematic: true,
                        ..
                    }
            )
        });
        let closed = if needs_closed {
            Some(propagate_closed(&self.system, &u).map_err(|e| e.in_stage("solver"))?)
        } else {
            None
        };
        let monte_carlo = if self
            .costs
            .iter()
            .any(|c| matches!(c.kind, CostKind::NoiseInfidelity { .. }))
        {
            let traces = self.traces.as_ref().expect("validated at construction");
            Some(
                crate::solver::propagate_monte_carlo(&self.system, &u, traces)
                    .map_err(|e| e.in_stage("Monte Carlo solver"))?,
            )
        } else {
            None
        };
        let open = if self
            .costs
            .iter()
            .any(|c| matches!(c.kind, CostKind::OpenSystem { .. }))
        {
            let lind = self.lindblad.as_ref().expect("validated at construction");
            Some(
                crate::solver::propagate_lindblad(&self.system, lind, &u)
                    .map_err(|e| e.in_stage("Lindblad solver"))?,
            )
        } else {
            None
        };
        let mut values = Vec::with_capacity(self.costs.len());
        let mut cost_seconds = vec![0.0; self.costs.len()];
        for (idx, spec) in self.costs.iter().enumerate() {
            let t0 = Instant::now();
            let stage = |e: Error| e.in_stage(format!("cost '{}'", spec.label));
            let value = match &spec.kind {
                CostKind::Entanglement { target } => {
                    cost::entanglement_infidelity(closed.as_ref().expect("closed").total(), target)
                        .map_err(stage)?
                }
                CostKind::NoiseInfidelity {
                    target,
                    neglect_systematic,
                } => cost::noise_average_infidelity(
                    monte_carlo.as_ref().expect("MC records"),
                    target,
                    *neglect_systematic,
                    closed.as_ref(),
                )
                .map_err(stage)?,
                CostKind::FilterFunction { psd, grid } => {
                    let ff = compute_filter_function(
                        closed.as_ref().expect("closed"),
                        self.system.noise_channels(),
                        grid,
                    )
                    .map_err(stage)?;
                    infidelity_from_spectrum(&ff, std::slice::from_ref(psd), grid).map_err(stage)?
                }
                CostKind::Leakage { comp_indices } => {
                    cost::leakage_error(closed.as_ref().expect("closed").total(), comp_indices)
                        .map_err(stage)?
                }
                CostKind::StateTransfer { initial, target } => cost::state_transfer_infidelity(
                    closed.as_ref().expect("closed").total(),
                    initial,
                    target,
                )
                .map_err(stage)?,
                CostKind::OpenSystem { target } => {
                    1.0 - cost::open_system_fidelity(target, open.as_ref().expect("open").total())
                        .map_err(stage)?
                }
            };
            cost_seconds[idx] += t0.elapsed().as_secs_f64();
            values.push(value);
        }
        let mut stats = self.stats.lock().expect("stats lock");
        for (acc, dt) in stats.cost_seconds.iter_mut().zip(&cost_seconds) {
            *acc += dt;
        }
        stats.n_evaluations += 1;
        Ok(values)
    }
}
