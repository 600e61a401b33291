//! Propagation of piecewise-constant dynamics.
//!
//! Closed-system Schroedinger propagation `U_l = exp(-i H(t_l) dt_l)` with
//! exact per-step derivative blocks, Monte Carlo wrapping over noise traces,
//! and vectorized Lindblad propagation where each step exponentiates the
//! superoperator generator `-i(I (x) H - H^T (x) I) + sum_n gamma_n D(L_n)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{C64, ExpAlgorithm, Operator, OPERATOR_TOL};
use crate::noise::NoiseTraces;
use crate::pulse::PulseMatrix;

pub type SusceptibilityFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;
/// Partial derivative of a susceptibility with respect to control amplitude
/// `k` at a given step: arguments are `(u_row, step, k)`.
pub type SusceptibilityGradFn = Arc<dyn Fn(&[f64], usize, usize) -> f64 + Send + Sync>;

/// Coupling strength of a noise source; may depend on the control
/// amplitudes to model noise introduced by the drive itself.
#[derive(Clone)]
pub enum Susceptibility {
    Constant(f64),
    DriveDependent {
        value: SusceptibilityFn,
        gradient: SusceptibilityGradFn,
    },
}

impl Susceptibility {
    pub fn unit() -> Self {
        Susceptibility::Constant(1.0)
    }

    pub fn value(&self, u_row: &[f64], step: usize) -> f64 {
        match self {
            Susceptibility::Constant(s) => *s,
            Susceptibility::DriveDependent { value, .. } => value(u_row, step),
        }
    }

    pub fn gradient(&self, u_row: &[f64], step: usize, ctrl: usize) -> f64 {
        match self {
            Susceptibility::Constant(_) => 0.0,
            Susceptibility::DriveDependent { gradient, .. } => gradient(u_row, step, ctrl),
        }
    }
}

impl std::fmt::Debug for Susceptibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Susceptibility::Constant(s) => write!(f, "Susceptibility::Constant({s})"),
            Susceptibility::DriveDependent { .. } => write!(f, "Susceptibility::DriveDependent"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseChannel {
    pub operator: Operator,
    pub susceptibility: Susceptibility,
}

impl NoiseChannel {
    pub fn new(operator: Operator) -> Self {
        NoiseChannel {
            operator,
            susceptibility: Susceptibility::unit(),
        }
    }

    pub fn with_susceptibility(operator: Operator, susceptibility: Susceptibility) -> Self {
        NoiseChannel {
            operator,
            susceptibility,
        }
    }
}

/// The system model: control operators `C_k`, drift, noise channels and the
/// solver time grid (the grid the transferred pulse lives on).
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    controls: Vec<Operator>,
    drift: Vec<Operator>,
    noise: Vec<NoiseChannel>,
    dt: Vec<f64>,
    exp_algorithm: ExpAlgorithm,
}

impl HamiltonianSpec {
    /// `drift` may hold a single operator (broadcast over all steps) or one
    /// operator per step.
    pub fn new(
        controls: Vec<Operator>,
        drift: Vec<Operator>,
        noise: Vec<NoiseChannel>,
        dt: Vec<f64>,
    ) -> Result<Self> {
        if dt.is_empty() {
            return Err(Error::invalid("time grid must have at least one step"));
        }
        if dt.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("all step durations must be positive"));
        }
        let dim = controls
            .first()
            .map(|c| c.dim())
            .or_else(|| drift.first().map(|d| d.dim()))
            .ok_or_else(|| Error::invalid("need at least one control or drift operator"))?;
        for (k, c) in controls.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "control operator",
                    expected: dim,
                    got: c.dim(),
                });
            }
            if !c.is_hermitian(OPERATOR_TOL.max(1e-10 * c.max_norm())) {
                return Err(Error::invalid(format!(
                    "control operator {k} is not Hermitian within tolerance"
                )));
            }
        }
        if drift.len() != 1 && drift.len() != dt.len() {
            return Err(Error::DimensionMismatch {
                context: "drift list (single operator or one per step)",
                expected: dt.len(),
                got: drift.len(),
            });
        }
        for d in &drift {
            if d.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "drift operator",
                    expected: dim,
                    got: d.dim(),
                });
            }
        }
        for ch in &noise {
            if ch.operator.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "noise operator",
                    expected: dim,
                    got: ch.operator.dim(),
                });
            }
        }
        Ok(HamiltonianSpec {
            controls,
            drift,
            noise,
            dt,
            exp_algorithm: ExpAlgorithm::Pade,
        })
    }

    pub fn with_exp_algorithm(mut self, algorithm: ExpAlgorithm) -> Self {
        self.exp_algorithm = algorithm;
        self
    }

    pub fn dim(&self) -> usize {
        self.controls
            .first()
            .map(|c| c.dim())
            .unwrap_or_else(|| self.drift[0].dim())
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn n_steps(&self) -> usize {
        self.dt.len()
    }

    pub fn dt(&self) -> &[f64] {
        &self.dt
    }

    pub fn controls(&self) -> &[Operator] {
        &self.controls
    }

    pub fn noise_channels(&self) -> &[NoiseChannel] {
        &self.noise
    }

    pub fn total_time(&self) -> f64 {
        self.dt.iter().sum()
    }

    fn drift_at(&self, coarse_step: usize) -> &Operator {
        if self.drift.len() == 1 {
            &self.drift[0]
        } else {
            &self.drift[coarse_step]
        }
    }

    /// `H(t_l) = sum_k u_k C_k + H_d + sum_a b_a s_a(u, t_l) B_a`.
    fn hamiltonian(&self, u_row: &[f64], coarse_step: usize, noise_row: Option<&[f64]>) -> Operator {
        let mut h = self.drift_at(coarse_step).clone();
        for (k, c) in self.controls.iter().enumerate() {
            h = &h + &c.scaled(C64::new(u_row[k], 0.0));
        }
        if let Some(b) = noise_row {
            for (a, ch) in self.noise.iter().enumerate() {
                let s = ch.susceptibility.value(u_row, coarse_step);
                h = &h + &ch.operator.scaled(C64::new(b[a] * s, 0.0));
            }
        }
        h
    }

    fn validate_pulse(&self, u: &PulseMatrix) -> Result<()> {
        if u.n_steps() != self.n_steps() || u.n_channels() != self.n_controls() {
            return Err(Error::ShapeMismatch {
                context: "control amplitudes vs Hamiltonian spec",
                expected_rows: self.n_steps(),
                expected_cols: self.n_controls(),
                rows: u.n_steps(),
                cols: u.n_channels(),
            });
        }
        for (a, b) in u.dt().iter().zip(self.dt.iter()) {
            if (a - b).abs() > 1e-12 * b.max(1.0) {
                return Err(Error::invalid(
                    "pulse time grid does not match the solver time grid",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Closed,
    Lindblad,
}

/// Per-step propagators plus cumulative products, retained for gradient
/// assembly and filter-function evaluation.
#[derive(Debug, Clone)]
pub struct PropagationRecord {
    kind: RecordKind,
    /// U_l for l = 0..n-1
    step_propagators: Vec<Operator>,
    /// Q_l = U_l ... U_1 at index l-1
    forward: Vec<Operator>,
    /// R_l = U_n ... U_l at index l-1
    backward: Vec<Operator>,
    /// generator of each step (H_l, or the Lindblad superoperator)
    generators: Vec<Operator>,
    /// control amplitudes the propagation used (on the propagation grid)
    amplitudes: PulseMatrix,
    /// statistical weight of this record within an ensemble
    weight: f64,
    /// noise-oversampling factor: propagation steps per control step
    substeps: usize,
}

impl PropagationRecord {
    pub fn kind(&self) -> RecordKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.step_propagators[0].dim()
    }

    pub fn n_steps(&self) -> usize {
        self.step_propagators.len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn amplitudes(&self) -> &PulseMatrix {
        &self.amplitudes
    }

    pub fn step_propagator(&self, l: usize) -> &Operator {
        &self.step_propagators[l]
    }

    pub fn generator(&self, l: usize) -> &Operator {
        &self.generators[l]
    }

    /// Total propagator `U_n ... U_1`.
    pub fn total(&self) -> &Operator {
        self.forward.last().expect("record has at least one step")
    }

    /// `Q_l = U_l ... U_1`, with `Q_0 = I`.
    pub fn forward_cumulant(&self, l: usize) -> Operator {
        if l == 0 {
            Operator::identity(self.dim())
        } else {
            self.forward[l - 1].clone()
        }
    }

    /// `R_l = U_n ... U_l`, with `R_{n+1} = I`.
    pub fn backward_cumulant(&self, l: usize) -> Operator {
        if l > self.n_steps() {
            Operator::identity(self.dim())
        } else {
            self.backward[l - 1].clone()
        }
    }

    /// Fold a gradient on the propagation grid back onto the control grid
    /// when the record was propagated with noise oversampling.
    pub fn fold_substeps(&self, fine: DMatrix<f64>) -> DMatrix<f64> {
        if self.substeps == 1 {
            return fine;
        }
        let coarse_steps = fine.nrows() / self.substeps;
        let mut out = DMatrix::<f64>::zeros(coarse_steps, fine.ncols());
        for l in 0..fine.nrows() {
            for k in 0..fine.ncols() {
                out[(l / self.substeps, k)] += fine[(l, k)];
            }
        }
        out
    }
}

/// `dU_l / du_k(t_l)` blocks, indexed `[step][control]`.
#[derive(Debug, Clone)]
pub struct DerivativeBlocks {
    blocks: Vec<Vec<Operator>>,
}

impl DerivativeBlocks {
    pub fn block(&self, step: usize, ctrl: usize) -> &Operator {
        &self.blocks[step][ctrl]
    }

    pub fn n_steps(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_controls(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.len())
    }
}

fn build_record(
    kind: RecordKind,
    step_propagators: Vec<Operator>,
    generators: Vec<Operator>,
    amplitudes: PulseMatrix,
    weight: f64,
    substeps: usize,
) -> PropagationRecord {
    let n = step_propagators.len();
    let mut forward = Vec::with_capacity(n);
    let mut acc = step_propagators[0].clone();
    forward.push(acc.clone());
    for u in &step_propagators[1..] {
        acc = u * &acc;
        forward.push(acc.clone());
    }
    let mut backward = vec![Operator::zeros(0); n];
    let mut acc = step_propagators[n - 1].clone();
    backward[n - 1] = acc.clone();
    for l in (0..n - 1).rev() {
        acc = &acc * &step_propagators[l];
        backward[l] = acc.clone();
    }
    PropagationRecord {
        kind,
        step_propagators,
        forward,
        backward,
        generators,
        amplitudes,
        weight,
        substeps,
    }
}

/// Repeat every control row `m` times on a grid of `dt/m`.
fn oversample_pulse(u: &PulseMatrix, m: usize) -> PulseMatrix {
    let fine = DMatrix::from_fn(u.n_steps() * m, u.n_channels(), |l, k| u.values()[(l / m, k)]);
    let dt: Vec<f64> = u
        .dt()
        .iter()
        .flat_map(|&t| std::iter::repeat_n(t / m as f64, m))
        .collect();
    PulseMatrix::new(fine, dt).expect("oversampled pulse is valid")
}

fn propagate_steps(
    spec: &HamiltonianSpec,
    u: &PulseMatrix,
    noise: Option<&DMatrix<f64>>,
    weight: f64,
    substeps: usize,
    with_gradients: bool,
) -> Result<(PropagationRecord, Option<DerivativeBlocks>)> {
    let n = u.n_steps();
    let mut props = Vec::with_capacity(n);
    let mut gens = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(if with_gradients { n } else { 0 });
    for l in 0..n {
        let coarse = l / substeps;
        let row = u.row(l);
        let noise_row: Option<Vec<f64>> = noise.map(|b| (0..b.ncols()).map(|a| b[(l, a)]).collect());
        let h = spec.hamiltonian(&row, coarse, noise_row.as_deref());
        let scale = C64::new(0.0, -u.dt()[l]);
        if with_gradients {
            let mut step_blocks = Vec::with_capacity(spec.n_controls());
            let mut value: Option<Operator> = None;
            for k in 0..spec.n_controls() {
                // dH/du_k = C_k plus any drive-dependent noise coupling
                let mut direction = spec.controls[k].clone();
                if let Some(b) = &noise_row {
                    for (a, ch) in spec.noise.iter().enumerate() {
                        let ds = ch.susceptibility.gradient(&row, coarse, k);
                        if ds != 0.0 {
                            direction = &direction + &ch.operator.scaled(C64::new(b[a] * ds, 0.0));
                        }
                    }
                }
                let (v, d) = h.matexp_frechet(&direction, scale)?;
                if value.is_none() {
                    value = Some(v);
                }
                step_blocks.push(d);
            }
            let u_l = match value {
                Some(v) => v,
                None => h.matexp_with(scale, spec.exp_algorithm)?,
            };
            props.push(u_l);
            blocks.push(step_blocks);
        } else {
            props.push(h.matexp_with(scale, spec.exp_algorithm)?);
        }
        gens.push(h);
    }
    let record = build_record(RecordKind::Closed, props, gens, u.clone(), weight, substeps);
    let blocks = with_gradients.then_some(DerivativeBlocks { blocks });
    Ok((record, blocks))
}

/// Noise-free Schroedinger propagation.
pub fn propagate_closed(spec: &HamiltonianSpec, u: &PulseMatrix) -> Result<PropagationRecord> {
    spec.validate_pulse(u)?;
    propagate_steps(spec, u, None, 1.0, 1, false).map(|(r, _)| r)
}

/// Noise-free propagation plus the exact per-step derivative blocks
/// `dU_l/du_k(t_l)` from the Fréchet derivative of the matrix exponential.
pub fn propagate_closed_with_gradients(
    spec: &HamiltonianSpec,
    u: &PulseMatrix,
) -> Result<(PropagationRecord, DerivativeBlocks)> {
    spec.validate_pulse(u)?;
    propagate_steps(spec, u, None, 1.0, 1, true).map(|(r, b)| (r, b.expect("requested")))
}

fn substep_factor(spec: &HamiltonianSpec, u: &PulseMatrix, traces: &NoiseTraces) -> Result<usize> {
    if traces.n_channels() != spec.noise.len() {
        return Err(Error::DimensionMismatch {
            context: "noise trace channels",
            expected: spec.noise.len(),
            got: traces.n_channels(),
        });
    }
    let nt = traces.n_steps();
    if !nt.is_multiple_of(u.n_steps()) {
        return Err(Error::DimensionMismatch {
            context: "noise trace time axis (must be a multiple of the control grid)",
            expected: u.n_steps(),
            got: nt,
        });
    }
    Ok(nt / u.n_steps())
}

/// Propagate once per noise trace; records keep the trace weights and are
/// returned in trace order so parallel and serial runs agree bit for bit.
pub fn propagate_monte_carlo(
    spec: &HamiltonianSpec,
    u: &PulseMatrix,
    traces: &NoiseTraces,
) -> Result<Vec<PropagationRecord>> {
    spec.validate_pulse(u)?;
    let m = substep_factor(spec, u, traces)?;
    let u_fine = if m > 1 { oversample_pulse(u, m) } else { u.clone() };
    (0..traces.n_traces())
        .into_par_iter()
        .map(|i| {
            propagate_steps(spec, &u_fine, Some(traces.trace(i)), traces.weights()[i], m, false)
                .map(|(r, _)| r)
        })
        .collect()
}

/// Monte Carlo propagation with derivative blocks per trace. Drive-dependent
/// susceptibilities contribute their chain term to each block.
pub fn propagate_monte_carlo_with_gradients(
    spec: &HamiltonianSpec,
    u: &PulseMatrix,
    traces: &NoiseTraces,
) -> Result<Vec<(PropagationRecord, DerivativeBlocks)>> {
    spec.validate_pulse(u)?;
    let m = substep_factor(spec, u, traces)?;
    let u_fine = if m > 1 { oversample_pulse(u, m) } else { u.clone() };
    (0..traces.n_traces())
        .into_par_iter()
        .map(|i| {
            propagate_steps(spec, &u_fine, Some(traces.trace(i)), traces.weights()[i], m, true)
                .map(|(r, b)| (r, b.expect("requested")))
        })
        .collect()
}

/// Markovian dissipation model: Lindblad operators with nonnegative decay
/// rates, the rates optionally control-dependent.
#[derive(Clone)]
pub struct LindbladSpec {
    operators: Vec<Operator>,
    rates: Vec<LindbladRate>,
}

#[derive(Clone)]
pub enum LindbladRate {
    Constant(f64),
    DriveDependent {
        value: SusceptibilityFn,
        /// derivative with respect to control `k`; defaults to zero
        gradient: SusceptibilityGradFn,
    },
}

impl LindbladRate {
    fn value(&self, u_row: &[f64], step: usize) -> f64 {
        match self {
            LindbladRate::Constant(g) => *g,
            LindbladRate::DriveDependent { value, .. } => value(u_row, step),
        }
    }

    fn gradient(&self, u_row: &[f64], step: usize, ctrl: usize) -> f64 {
        match self {
            LindbladRate::Constant(_) => 0.0,
            LindbladRate::DriveDependent { gradient, .. } => gradient(u_row, step, ctrl),
        }
    }
}

impl LindbladSpec {
    pub fn new(operators: Vec<Operator>, rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|&g| g < 0.0 || !g.is_finite()) {
            return Err(Error::invalid("Lindblad rates must be >= 0"));
        }
        let rates = rates.into_iter().map(LindbladRate::Constant).collect();
        Self::with_rates(operators, rates)
    }

    pub fn with_rates(operators: Vec<Operator>, rates: Vec<LindbladRate>) -> Result<Self> {
        if operators.len() != rates.len() {
            return Err(Error::DimensionMismatch {
                context: "Lindblad rates",
                expected: operators.len(),
                got: rates.len(),
            });
        }
        if let Some(first) = operators.first() {
            if operators.iter().any(|l| l.dim() != first.dim()) {
                return Err(Error::invalid("Lindblad operators must share one dimension"));
            }
        }
        Ok(LindbladSpec { operators, rates })
    }

    pub fn operators(&self) -> &[Operator] {
        &self.operators
    }
}

/// `D(L) = L* (x) L - 1/2 I (x) (L^dag L) - 1/2 (L^T L*) (x) I`.
pub fn dissipator(l: &Operator) -> Operator {
    let d = l.dim();
    let eye = Operator::identity(d);
    let ldl = &l.dagger() * l;
    let first = l.conjugate().kron(l);
    let second = eye.kron(&ldl).scaled(C64::new(-0.5, 0.0));
    let third = ldl.transpose().kron(&eye).scaled(C64::new(-0.5, 0.0));
    &(&first + &second) + &third
}

/// Full superoperator generator `-i H_super + G` acting on `vec(rho)`.
pub fn lindblad_superoperator(
    spec: &HamiltonianSpec,
    lind: &LindbladSpec,
    u_row: &[f64],
    step: usize,
) -> Result<Operator> {
    let d = spec.dim();
    for l in &lind.operators {
        if l.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "Lindblad operator",
                expected: d,
                got: l.dim(),
            });
        }
    }
    let h = spec.hamiltonian(u_row, step, None);
    let eye = Operator::identity(d);
    let hs = &eye.kron(&h) - &h.transpose().kron(&eye);
    let mut gen = hs.scaled(C64::new(0.0, -1.0));
    for (l, rate) in lind.operators.iter().zip(&lind.rates) {
        let g = rate.value(u_row, step);
        if g < 0.0 {
            return Err(Error::invalid("Lindblad rate evaluated negative"));
        }
        if g != 0.0 {
            gen = &gen + &dissipator(l).scaled(C64::new(g, 0.0));
        }
    }
    Ok(gen)
}

fn lindblad_generator_direction(
    spec: &HamiltonianSpec,
    lind: &LindbladSpec,
    u_row: &[f64],
    step: usize,
    ctrl: usize,
    dissipators: &[Operator],
) -> Operator {
    let d = spec.dim();
    let eye = Operator::identity(d);
    let c = &spec.controls[ctrl];
    let hs = &eye.kron(c) - &c.transpose().kron(&eye);
    let mut dir = hs.scaled(C64::new(0.0, -1.0));
    for (n, rate) in lind.rates.iter().enumerate() {
        let dg = rate.gradient(u_row, step, ctrl);
        if dg != 0.0 {
            dir = &dir + &dissipators[n].scaled(C64::new(dg, 0.0));
        }
    }
    dir
}

fn propagate_lindblad_impl(
    spec: &HamiltonianSpec,
    lind: &LindbladSpec,
    u: &PulseMatrix,
    with_gradients: bool,
) -> Result<(PropagationRecord, Option<DerivativeBlocks>)> {
    spec.validate_pulse(u)?;
    let n = u.n_steps();
    let dissipators: Vec<Operator> = lind.operators.iter().map(dissipator).collect();
    let mut props = Vec::with_capacity(n);
    let mut gens = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(if with_gradients { n } else { 0 });
    for l in 0..n {
        let row = u.row(l);
        let gen = lindblad_superoperator(spec, lind, &row, l)?;
        let scale = C64::new(u.dt()[l], 0.0);
        if with_gradients {
            let mut step_blocks = Vec::with_capacity(spec.n_controls());
            let mut value: Option<Operator> = None;
            for k in 0..spec.n_controls() {
                let dir = lindblad_generator_direction(spec, lind, &row, l, k, &dissipators);
                let (v, d) = gen.matexp_frechet(&dir, scale)?;
                if value.is_none() {
                    value = Some(v);
                }
                step_blocks.push(d);
            }
            let u_l = match value {
                Some(v) => v,
                None => gen.matexp(scale)?,
            };
            props.push(u_l);
            blocks.push(step_blocks);
        } else {
            // Lindblad generators are non-Hermitian: always Padé
            props.push(gen.matexp(scale)?);
        }
        gens.push(gen);
    }
    let record = build_record(RecordKind::Lindblad, props, gens, u.clone(), 1.0, 1);
    Ok((record, with_gradients.then_some(DerivativeBlocks { blocks })))
}

/// Open-system propagation: per-step superoperator exponentials whose
/// cumulants give the quantum process acting on `vec(rho)`.
pub fn propagate_lindblad(
    spec: &HamiltonianSpec,
    lind: &LindbladSpec,
    u: &PulseMatrix,
) -> Result<PropagationRecord> {
    propagate_lindblad_impl(spec, lind, u, false).map(|(r, _)| r)
}

pub fn propagate_lindblad_with_gradients(
    spec: &HamiltonianSpec,
    lind: &LindbladSpec,
    u: &PulseMatrix,
) -> Result<(PropagationRecord, DerivativeBlocks)> {
    propagate_lindblad_impl(spec, lind, u, true).map(|(r, b)| (r, b.expect("requested")))
}
