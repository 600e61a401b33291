//! Bounded quasi-Newton pulse optimization.
//!
//! The optimizer minimizes the weighted sum of the simulator's cost vector
//! with a limited-memory BFGS direction, gradient projection onto the box
//! bounds and an Armijo backtracking line search along the projected path.
//! Every iterate satisfies the bounds exactly. An optional Gauss-Newton
//! mode treats the cost vector as least-squares residuals instead.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::PulseMatrix;
use crate::sim::CostProvider;

/// Box bounds per raw parameter entry.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

impl Bounds {
    pub fn uniform(n_steps: usize, n_channels: usize, lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::invalid("lower bound must be below upper bound"));
        }
        Ok(Bounds {
            lower: DMatrix::from_element(n_steps, n_channels, lower),
            upper: DMatrix::from_element(n_steps, n_channels, upper),
        })
    }

    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::invalid("bound arrays must share one shape"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::invalid("each lower bound must be below its upper bound"));
        }
        Ok(Bounds { lower, upper })
    }

    fn clip(&self, x: &DVector<f64>) -> DVector<f64> {
        let lo = flatten(&self.lower);
        let hi = flatten(&self.upper);
        DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Termination {
    /// infinity norm of the projected gradient
    pub g_tol: f64,
    /// relative decrease of the scalarized cost between accepted iterates
    pub f_tol: f64,
    pub max_iter: usize,
    pub wall_clock_limit: Option<f64>,
}

impl Default for Termination {
    fn default() -> Self {
        Termination {
            g_tol: 1e-8,
            f_tol: 1e-10,
            max_iter: 500,
            wall_clock_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    WallClockLimit,
    LineSearchStalled,
    Failed(String),
}

/// Final state of one optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimResult {
    pub labels: Vec<String>,
    /// row-major (n_t x n_ch) raw parameters at the end of the run
    pub final_parameters: Vec<Vec<f64>>,
    pub best_cost_vector: Vec<f64>,
    /// cost vector at every accepted iterate (index 0 = initial point)
    pub cost_history: Vec<Vec<f64>>,
    /// infinity norm of the projected gradient per accepted iterate
    pub gradient_norm_history: Vec<f64>,
    pub termination: TerminationReason,
    pub n_iterations: usize,
    pub seed: u64,
    /// wall-clock seconds; excluded from serialized result documents so
    /// identical (config, seed) runs produce byte-identical files
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl OptimResult {
    pub fn final_pulse(&self, dt: Vec<f64>) -> Result<PulseMatrix> {
        let rows = self.final_parameters.len();
        let cols = self.final_parameters.first().map_or(0, |r| r.len());
        let values = DMatrix::from_fn(rows, cols, |i, j| self.final_parameters[i][j]);
        PulseMatrix::new(values, dt)
    }

    fn failed(labels: Vec<String>, seed: u64, message: String) -> Self {
        OptimResult {
            labels,
            final_parameters: vec![],
            best_cost_vector: vec![],
            cost_history: vec![],
            gradient_norm_history: vec![],
            termination: TerminationReason::Failed(message),
            n_iterations: 0,
            seed,
            wall_clock_seconds: 0.0,
        }
    }
}

/// Append-only collection of optimization results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataContainer {
    pub schema_version: u32,
    pub config_hash: String,
    results: Vec<OptimResult>,
}

impl DataContainer {
    pub fn new(config_hash: impl Into<String>) -> Self {
        DataContainer {
            schema_version: crate::output::SCHEMA_VERSION,
            config_hash: config_hash.into(),
            results: Vec::new(),
        }
    }

    pub fn append(&mut self, result: OptimResult) {
        self.results.push(result);
    }

    pub fn results(&self) -> &[OptimResult] {
        &self.results
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

/// Per-iteration cost series of one run: one row per accepted iterate,
/// columns are the labeled cost entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Extract the cost-trajectory tables of all runs in the container.
pub fn analyse(container: &DataContainer) -> Result<Vec<CostTable>> {
    if container.is_empty() {
        return Err(Error::invalid("data container holds no results"));
    }
    Ok(container
        .results()
        .iter()
        .map(|r| CostTable {
            labels: r.labels.clone(),
            rows: r.cost_history.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// limited-memory quasi-Newton with gradient projection (default)
    QuasiNewton,
    /// Gauss-Newton on the cost vector as least-squares residuals
    LeastSquares,
}

pub struct Optimizer<'a, P: CostProvider> {
    provider: &'a P,
    bounds: Bounds,
    term: Termination,
    kind: OptimizerKind,
    memory: usize,
}

/// cost vector, scalarized cost, scalarized gradient, per-entry gradients
type Evaluation = (Vec<f64>, f64, DVector<f64>, Vec<DMatrix<f64>>);

fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

impl<'a, P: CostProvider> Optimizer<'a, P> {
    pub fn new(provider: &'a P, bounds: Bounds, term: Termination) -> Result<Self> {
        if bounds.lower.nrows() != provider.raw_steps()
            || bounds.lower.ncols() != provider.raw_channels()
        {
            return Err(Error::ShapeMismatch {
                context: "optimizer bounds",
                expected_rows: provider.raw_steps(),
                expected_cols: provider.raw_channels(),
                rows: bounds.lower.nrows(),
                cols: bounds.lower.ncols(),
            });
        }
        Ok(Optimizer {
            provider,
            bounds,
            term,
            kind: OptimizerKind::QuasiNewton,
            memory: 10,
        })
    }

    pub fn with_kind(mut self, kind: OptimizerKind) -> Self {
        self.kind = kind;
        self
    }

    fn scalarize(&self, values: &[f64], grads: &[DMatrix<f64>]) -> (f64, DVector<f64>) {
        let weights = self.provider.weights();
        let mut f = 0.0;
        let mut g = DVector::zeros(grads[0].len());
        for ((v, grad), w) in values.iter().zip(grads).zip(&weights) {
            f += w * v;
            g += flatten(grad) * *w;
        }
        (f, g)
    }

    fn eval(&self, x: &DVector<f64>) -> Result<Evaluation> {
        let pulse = PulseMatrix::new(
            unflatten(x, self.provider.raw_steps(), self.provider.raw_channels()),
            self.provider.raw_dt(),
        )?;
        let (values, grads) = self.provider.evaluate(&pulse)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost vector"));
        }
        let (f, g) = self.scalarize(&values, &grads);
        Ok((values, f, g, grads))
    }

    fn eval_scalar(&self, x: &DVector<f64>) -> Result<f64> {
        let pulse = PulseMatrix::new(
            unflatten(x, self.provider.raw_steps(), self.provider.raw_channels()),
            self.provider.raw_dt(),
        )?;
        let values = self.provider.evaluate_values(&pulse)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost vector"));
        }
        Ok(values
            .iter()
            .zip(self.provider.weights())
            .map(|(v, w)| v * w)
            .sum())
    }

    /// Armijo backtracking with quadratic interpolation along the projected
    /// path; line-search trials use the cheap value-only evaluation.
    fn line_search(
        &self,
        x: &DVector<f64>,
        f: f64,
        g: &DVector<f64>,
        direction: &DVector<f64>,
    ) -> Result<Option<(DVector<f64>, f64)>> {
        let c1 = 1e-4;
        let mut alpha = 1.0f64;
        for _ in 0..40 {
            let candidate = self.bounds.clip(&(x + direction * alpha));
            let step = &candidate - x;
            if step.amax() == 0.0 {
                return Ok(None);
            }
            let slope = g.dot(&step);
            if slope >= 0.0 {
                // projection turned the step into non-descent
                return Ok(None);
            }
            let f_new = self.eval_scalar(&candidate)?;
            if f_new <= f + c1 * slope {
                return Ok(Some((candidate, f_new)));
            }
            // quadratic-fit backtracking, clamped to a sane window
            let denom = 2.0 * (f_new - f - slope);
            let trial = if denom > 0.0 { -slope / denom * alpha } else { 0.5 * alpha };
            alpha = trial.clamp(0.1 * alpha, 0.5 * alpha);
        }
        Ok(None)
    }

    fn projected_gradient_norm(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let stepped = self.bounds.clip(&(x - g));
        (stepped - x).amax()
    }

    /// Minimize from `initial`; `seed` is recorded in the result for
    /// reproducibility bookkeeping.
    pub fn run(&self, initial: &PulseMatrix, seed: u64) -> Result<OptimResult> {
        let start = Instant::now();
        let labels = self.provider.labels();
        let mut x = self.bounds.clip(&flatten(initial.values()));
        let (mut values, mut f, mut g, mut grads) = self
            .eval(&x)
            .map_err(|e| e.in_stage("initial cost evaluation"))?;
        let mut history = vec![values.clone()];
        let mut grad_norms = vec![self.projected_gradient_norm(&x, &g)];
        let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
        let mut reason = TerminationReason::MaxIterations;
        let mut iterations = 0;
        let mut stalled_once = false;
        if self.projected_gradient_norm(&x, &g) < self.term.g_tol {
            reason = TerminationReason::GradientTolerance;
        } else {
            for _ in 0..self.term.max_iter {
                if let Some(limit) = self.term.wall_clock_limit {
                    if start.elapsed().as_secs_f64() > limit {
                        reason = TerminationReason::WallClockLimit;
                        break;
                    }
                }
                let direction = match self.kind {
                    OptimizerKind::QuasiNewton => lbfgs_direction(&g, &pairs),
                    OptimizerKind::LeastSquares => gauss_newton_direction(&values, &grads),
                };
                let descent = g.dot(&direction);
                let direction = if descent >= 0.0 {
                    pairs.clear();
                    -&g
                } else {
                    direction
                };
                let mut accepted = self.line_search(&x, f, &g, &direction)?;
                if accepted.is_none() && !pairs.is_empty() {
                    // stale curvature: drop the memory and retry steepest
                    pairs.clear();
                    accepted = self.line_search(&x, f, &g, &(-&g))?;
                }
                let Some((x_new, f_new)) = accepted else {
                    reason = TerminationReason::LineSearchStalled;
                    break;
                };
                let (values_new, f_new2, g_new, grads_new) = self.eval(&x_new)?;
                debug_assert!((f_new - f_new2).abs() <= 1e-12 * f_new.abs().max(1.0));
                let f_new = f_new2;
                iterations += 1;
                let s = &x_new - &x;
                let y = &g_new - &g;
                let sy = s.dot(&y);
                if sy > 1e-10 * s.norm() * y.norm() {
                    if pairs.len() == self.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y));
                }
                let f_prev = f;
                x = x_new;
                values = values_new;
                f = f_new;
                g = g_new;
                grads = grads_new;
                history.push(values.clone());
                let pg = self.projected_gradient_norm(&x, &g);
                grad_norms.push(pg);
                if pg < self.term.g_tol {
                    reason = TerminationReason::GradientTolerance;
                    break;
                }
                if (f_prev - f).abs() < self.term.f_tol * f_prev.abs().max(1.0) {
                    // a tiny step on a quasi-Newton direction may just mean
                    // stale curvature: refresh once before giving up
                    if stalled_once || pairs.is_empty() {
                        reason = TerminationReason::CostTolerance;
                        break;
                    }
                    pairs.clear();
                    stalled_once = true;
                } else {
                    stalled_once = false;
                }
            }
        }
        let final_matrix = unflatten(&x, self.provider.raw_steps(), self.provider.raw_channels());
        Ok(OptimResult {
            labels,
            final_parameters: (0..final_matrix.nrows())
                .map(|i| (0..final_matrix.ncols()).map(|j| final_matrix[(i, j)]).collect())
                .collect(),
            best_cost_vector: values,
            cost_history: history,
            gradient_norm_history: grad_norms,
            termination: reason,
            n_iterations: iterations,
            seed,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Uniform random pulse within the bounds from a per-start RNG stream.
    pub fn random_initial(&self, seed: u64, start_index: u64) -> PulseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start_index);
        let values = DMatrix::from_fn(
            self.provider.raw_steps(),
            self.provider.raw_channels(),
            |i, j| {
                let lo = self.bounds.lower[(i, j)];
                let hi = self.bounds.upper[(i, j)];
                rng.gen_range(lo..hi)
            },
        );
        PulseMatrix::new(values, self.provider.raw_dt()).expect("bounds give finite values")
    }

    /// Independently seeded optimizations from random initial pulses.
    /// Results are collected in start order, so parallel and serial
    /// execution produce identical containers; failed starts are recorded
    /// with their reason instead of aborting the batch.
    pub fn run_multi_start(
        &self,
        n_starts: usize,
        seed: u64,
        parallel: bool,
        config_hash: &str,
    ) -> Result<DataContainer>
    where
        P: Sync,
    {
        if n_starts == 0 {
            return Err(Error::invalid("n_starts must be >= 1"));
        }
        let run_one = |i: usize| -> OptimResult {
            let initial = self.random_initial(seed, i as u64);
            match self.run(&initial, seed.wrapping_add(i as u64)) {
                Ok(result) => result,
                Err(e) => OptimResult::failed(self.provider.labels(), seed, e.to_string()),
            }
        };
        let results: Vec<OptimResult> = if parallel {
            (0..n_starts).into_par_iter().map(run_one).collect()
        } else {
            (0..n_starts).map(run_one).collect()
        };
        let mut container = DataContainer::new(config_hash);
        for r in results {
            container.append(r);
        }
        Ok(container)
    }
}

/// Two-loop recursion; returns `-H g`.
fn lbfgs_direction(g: &DVector<f64>, pairs: &VecDeque<(DVector<f64>, DVector<f64>)>) -> DVector<f64> {
    if pairs.is_empty() {
        return -g;
    }
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push((a, rho));
    }
    let (s_last, y_last) = pairs.back().expect("nonempty");
    let gamma = s_last.dot(y_last) / y_last.dot(y_last);
    let mut r = q * gamma;
    for ((s, y), (a, rho)) in pairs.iter().zip(alphas.iter().rev()) {
        let beta = rho * y.dot(&r);
        r += s * (*a - beta);
    }
    -r
}

/// Levenberg-damped Gauss-Newton step on residuals `r_i = cost_i`.
fn gauss_newton_direction(values: &[f64], grads: &[DMatrix<f64>]) -> DVector<f64> {
    let n = grads[0].len();
    let m = values.len();
    let mut jt_j = DMatrix::<f64>::zeros(n, n);
    let mut jt_r = DVector::<f64>::zeros(n);
    for i in 0..m {
        let ji = flatten(&grads[i]);
        jt_j += &ji * ji.transpose();
        jt_r += ji * values[i];
    }
    let damping = 1e-8 + 1e-3 * jt_j.diagonal().amax();
    for i in 0..n {
        jt_j[(i, i)] += damping;
    }
    jt_j
        .lu()
        .solve(&(-jt_r))
        .unwrap_or_else(|| DVector::zeros(n))
}
