//! Mapping from raw optimization parameters to control amplitudes.
//!
//! The pipeline order is fixed: the (linear, possibly time-nonlocal)
//! transfer function runs first, then the (nonlinear, strictly time-local)
//! amplitude function. Both expose exact gradient chaining.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Real matrix of pulse samples: rows = time steps, columns = channels,
/// together with the step durations.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseMatrix {
    values: DMatrix<f64>,
    dt: Vec<f64>,
}

impl PulseMatrix {
    pub fn new(values: DMatrix<f64>, dt: Vec<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::invalid("pulse must have at least one time step"));
        }
        if dt.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                context: "PulseMatrix durations",
                expected: values.nrows(),
                got: dt.len(),
            });
        }
        if dt.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("all step durations must be positive and finite"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pulse values"));
        }
        Ok(PulseMatrix { values, dt })
    }

    /// Uniform grid of `n_steps` steps of length `dt`.
    pub fn constant(n_steps: usize, n_channels: usize, value: f64, dt: f64) -> Result<Self> {
        PulseMatrix::new(
            DMatrix::from_element(n_steps, n_channels, value),
            vec![dt; n_steps],
        )
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: Vec<f64>) -> Result<Self> {
        let n_ch = rows.first().map_or(0, |r| r.len());
        let values = DMatrix::from_fn(rows.len(), n_ch, |i, j| rows[i][j]);
        PulseMatrix::new(values, dt)
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dt(&self) -> &[f64] {
        &self.dt
    }

    pub fn total_time(&self) -> f64 {
        self.dt.iter().sum()
    }

    /// Start time of step `l` (steps are contiguous from t = 0).
    pub fn t_start(&self, l: usize) -> f64 {
        self.dt[..l].iter().sum()
    }

    pub fn row(&self, l: usize) -> Vec<f64> {
        self.values.row(l).iter().copied().collect()
    }

    /// CSV export with columns `t_start, dt, ch_0, ..., ch_{n-1}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t_start,dt")?;
        for ch in 0..self.n_channels() {
            write!(out, ",ch_{ch}")?;
        }
        writeln!(out)?;
        let mut t = 0.0;
        for l in 0..self.n_steps() {
            write!(out, "{:.17e},{:.17e}", t, self.dt[l])?;
            for ch in 0..self.n_channels() {
                write!(out, ",{:.17e}", self.values[(l, ch)])?;
            }
            writeln!(out)?;
            t += self.dt[l];
        }
        Ok(())
    }
}

/// Output time grid produced by a transfer function.
#[derive(Debug, Clone, PartialEq)]
enum OutputGrid {
    /// Subdivide each input step into `factor` samples; padding samples
    /// reuse the adjacent fine step duration.
    Oversampled { factor: usize },
    /// Explicit input and output durations (measured device responses).
    Fixed {
        input_dt: Vec<f64>,
        output_dt: Vec<f64>,
    },
}

/// Linear, pulse-independent map from raw parameters to transferred
/// parameters, materialized as an explicit matrix plus a fixed offset.
/// Boundary padding lives inside the matrix as output rows with zero
/// input sensitivity.
#[derive(Clone)]
pub struct TransferFunction {
    /// (n_out * n_ch) x (n_in * n_ch), acting on column-stacked values.
    matrix: DMatrix<f64>,
    /// n_out x n_ch fixed offset added after the linear map.
    offset: DMatrix<f64>,
    n_in: usize,
    n_out: usize,
    n_ch: usize,
    pad_lead: usize,
    pad_trail: usize,
    grid: OutputGrid,
}

impl fmt::Debug for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransferFunction")
            .field("n_in", &self.n_in)
            .field("n_out", &self.n_out)
            .field("n_ch", &self.n_ch)
            .field("pad_lead", &self.pad_lead)
            .field("pad_trail", &self.pad_trail)
            .finish()
    }
}

impl TransferFunction {
    pub fn identity(n_steps: usize, n_channels: usize) -> Self {
        TransferFunction {
            matrix: DMatrix::identity(n_steps * n_channels, n_steps * n_channels),
            offset: DMatrix::zeros(n_steps, n_channels),
            n_in: n_steps,
            n_out: n_steps,
            n_ch: n_channels,
            pad_lead: 0,
            pad_trail: 0,
            grid: OutputGrid::Oversampled { factor: 1 },
        }
    }

    /// Identity scaled by a constant gain.
    pub fn scaled_identity(n_steps: usize, n_channels: usize, gain: f64) -> Self {
        let mut tf = Self::identity(n_steps, n_channels);
        tf.matrix *= gain;
        tf
    }

    /// Oversample each coarse step by `oversampling` and smooth with a
    /// normalized Gaussian kernel. `kernel_width` is the kernel standard
    /// deviation in units of coarse steps; the kernel is truncated at
    /// +-4 sigma and renormalized to unit sum.
    pub fn gaussian_smoothing(
        n_steps: usize,
        n_channels: usize,
        oversampling: usize,
        kernel_width: f64,
    ) -> Result<Self> {
        if oversampling == 0 {
            return Err(Error::invalid("oversampling factor must be >= 1"));
        }
        if !(kernel_width > 0.0) {
            return Err(Error::invalid("kernel width must be positive"));
        }
        let n_fine = n_steps * oversampling;
        // oversampling: hold each coarse value across its fine samples
        let mut hold = DMatrix::<f64>::zeros(n_fine, n_steps);
        for fine in 0..n_fine {
            hold[(fine, fine / oversampling)] = 1.0;
        }
        // discrete Gaussian on the fine grid, sigma in fine samples
        let sigma = kernel_width * oversampling as f64;
        let half = (4.0 * sigma).ceil() as i64;
        let mut kernel: Vec<f64> = (-half..=half)
            .map(|m| (-0.5 * (m as f64 / sigma).powi(2)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);
        let mut conv = DMatrix::<f64>::zeros(n_fine, n_fine);
        for j in 0..n_fine {
            for (idx, &k) in kernel.iter().enumerate() {
                let shifted = j as i64 + idx as i64 - half;
                if (0..n_fine as i64).contains(&shifted) {
                    conv[(shifted as usize, j)] = k;
                }
            }
        }
        let per_channel = conv * hold;
        Ok(TransferFunction {
            matrix: block_diagonal(&per_channel, n_channels),
            offset: DMatrix::zeros(n_fine, n_channels),
            n_in: n_steps,
            n_out: n_fine,
            n_ch: n_channels,
            pad_lead: 0,
            pad_trail: 0,
            grid: OutputGrid::Oversampled {
                factor: oversampling,
            },
        })
    }

    /// Wrap an arbitrary measured response matrix. `matrix` must act on
    /// column-stacked `(n_in x n_ch)` values; input and output grid
    /// durations are given explicitly.
    pub fn from_matrix(
        matrix: DMatrix<f64>,
        offset: DMatrix<f64>,
        n_channels: usize,
        input_dt: Vec<f64>,
        output_dt: Vec<f64>,
    ) -> Result<Self> {
        if n_channels == 0
            || !matrix.ncols().is_multiple_of(n_channels)
            || !matrix.nrows().is_multiple_of(n_channels)
        {
            return Err(Error::invalid(
                "transfer matrix shape must be divisible by the channel count",
            ));
        }
        let n_in = matrix.ncols() / n_channels;
        let n_out = matrix.nrows() / n_channels;
        if offset.nrows() != n_out || offset.ncols() != n_channels {
            return Err(Error::ShapeMismatch {
                context: "transfer offset",
                expected_rows: n_out,
                expected_cols: n_channels,
                rows: offset.nrows(),
                cols: offset.ncols(),
            });
        }
        if input_dt.len() != n_in {
            return Err(Error::DimensionMismatch {
                context: "transfer input grid",
                expected: n_in,
                got: input_dt.len(),
            });
        }
        if output_dt.len() != n_out {
            return Err(Error::DimensionMismatch {
                context: "transfer output grid",
                expected: n_out,
                got: output_dt.len(),
            });
        }
        Ok(TransferFunction {
            matrix,
            offset,
            n_in,
            n_out,
            n_ch: n_channels,
            pad_lead: 0,
            pad_trail: 0,
            grid: OutputGrid::Fixed { input_dt, output_dt },
        })
    }

    /// Append boundary padding: `lead`/`trail` extra output samples pinned
    /// to `value` on every channel, insensitive to the input.
    pub fn with_padding(self, lead: usize, trail: usize, value: f64) -> Self {
        let n_out_new = self.n_out + lead + trail;
        let mut matrix = DMatrix::<f64>::zeros(n_out_new * self.n_ch, self.n_in * self.n_ch);
        let mut offset = DMatrix::<f64>::from_element(n_out_new, self.n_ch, value);
        for ch in 0..self.n_ch {
            for row in 0..self.n_out {
                offset[(lead + row, ch)] = self.offset[(row, ch)];
                for col in 0..self.n_in * self.n_ch {
                    matrix[(ch * n_out_new + lead + row, col)] =
                        self.matrix[(ch * self.n_out + row, col)];
                }
            }
        }
        let grid = match self.grid {
            OutputGrid::Oversampled { factor } => OutputGrid::Oversampled { factor },
            OutputGrid::Fixed { input_dt, output_dt } => {
                // padding samples reuse the boundary durations
                let mut dt = Vec::with_capacity(n_out_new);
                dt.extend(std::iter::repeat(output_dt[0]).take(lead));
                dt.extend_from_slice(&output_dt);
                dt.extend(std::iter::repeat(output_dt[output_dt.len() - 1]).take(trail));
                OutputGrid::Fixed {
                    input_dt,
                    output_dt: dt,
                }
            }
        };
        TransferFunction {
            matrix,
            offset,
            n_in: self.n_in,
            n_out: n_out_new,
            n_ch: self.n_ch,
            pad_lead: self.pad_lead + lead,
            pad_trail: self.pad_trail + trail,
            grid,
        }
    }

    pub fn n_input_steps(&self) -> usize {
        self.n_in
    }

    pub fn n_output_steps(&self) -> usize {
        self.n_out
    }

    pub fn n_channels(&self) -> usize {
        self.n_ch
    }

    pub fn oversampling(&self) -> usize {
        match self.grid {
            OutputGrid::Oversampled { factor } => factor,
            OutputGrid::Fixed { .. } => 1,
        }
    }

    /// Input durations, when the transfer function pins them explicitly.
    pub fn fixed_input_grid(&self) -> Option<&[f64]> {
        match &self.grid {
            OutputGrid::Oversampled { .. } => None,
            OutputGrid::Fixed { input_dt, .. } => Some(input_dt),
        }
    }

    pub fn lead_padding(&self) -> usize {
        self.pad_lead
    }

    pub fn trail_padding(&self) -> usize {
        self.pad_trail
    }

    fn output_dt(&self, input_dt: &[f64]) -> Vec<f64> {
        match &self.grid {
            OutputGrid::Oversampled { factor } => {
                let mut dt = Vec::with_capacity(self.n_out);
                let fine_first = input_dt[0] / *factor as f64;
                dt.extend(std::iter::repeat_n(fine_first, self.pad_lead));
                for &coarse in input_dt {
                    let fine = coarse / *factor as f64;
                    dt.extend(std::iter::repeat_n(fine, *factor));
                }
                let fine_last = input_dt[input_dt.len() - 1] / *factor as f64;
                dt.extend(std::iter::repeat_n(fine_last, self.pad_trail));
                dt
            }
            OutputGrid::Fixed { output_dt, .. } => output_dt.clone(),
        }
    }

    /// `T vec(raw) + offset`, reshaped onto the oversampled output grid.
    pub fn apply(&self, raw: &PulseMatrix) -> Result<PulseMatrix> {
        if raw.n_steps() != self.n_in || raw.n_channels() != self.n_ch {
            return Err(Error::ShapeMismatch {
                context: "apply_transfer input",
                expected_rows: self.n_in,
                expected_cols: self.n_ch,
                rows: raw.n_steps(),
                cols: raw.n_channels(),
            });
        }
        let stacked = DVector::from_column_slice(raw.values().as_slice());
        let out = &self.matrix * stacked;
        let mut values = DMatrix::<f64>::zeros(self.n_out, self.n_ch);
        for ch in 0..self.n_ch {
            for row in 0..self.n_out {
                values[(row, ch)] = out[ch * self.n_out + row] + self.offset[(row, ch)];
            }
        }
        PulseMatrix::new(values, self.output_dt(raw.dt()))
    }

    /// Chain-rule contraction through the linear map: given the gradient of
    /// a cost with respect to the transferred pulse, return the gradient
    /// with respect to the raw parameters. Padding rows contribute zero.
    pub fn chain_gradient(&self, d_cost_d_transferred: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if d_cost_d_transferred.nrows() != self.n_out || d_cost_d_transferred.ncols() != self.n_ch {
            return Err(Error::ShapeMismatch {
                context: "transfer_chain_gradient",
                expected_rows: self.n_out,
                expected_cols: self.n_ch,
                rows: d_cost_d_transferred.nrows(),
                cols: d_cost_d_transferred.ncols(),
            });
        }
        let stacked = DVector::from_column_slice(d_cost_d_transferred.as_slice());
        let back = self.matrix.transpose() * stacked;
        let mut grad = DMatrix::<f64>::zeros(self.n_in, self.n_ch);
        for ch in 0..self.n_ch {
            for row in 0..self.n_in {
                grad[(row, ch)] = back[ch * self.n_in + row];
            }
        }
        Ok(grad)
    }
}

fn block_diagonal(block: &DMatrix<f64>, n_blocks: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::<f64>::zeros(r * n_blocks, c * n_blocks);
    for b in 0..n_blocks {
        out.view_mut((b * r, b * c), (r, c)).copy_from(block);
    }
    out
}

type AmplitudeMap = Arc<dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync>;
type AmplitudeJacobian = Arc<dyn Fn(&[f64], usize) -> DMatrix<f64> + Send + Sync>;

/// Possibly nonlinear but strictly time-local map from transferred
/// parameters to the control amplitudes seen by the Hamiltonian.
#[derive(Clone)]
pub enum AmplitudeFunction {
    Identity,
    Custom {
        n_in: usize,
        n_out: usize,
        /// row-wise forward map; the second argument is the step index
        forward: AmplitudeMap,
        /// d u_k / d x_i per step, shape (n_out x n_in)
        jacobian: AmplitudeJacobian,
    },
}

impl fmt::Debug for AmplitudeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmplitudeFunction::Identity => f.write_str("AmplitudeFunction::Identity"),
            AmplitudeFunction::Custom { n_in, n_out, .. } => f
                .debug_struct("AmplitudeFunction::Custom")
                .field("n_in", n_in)
                .field("n_out", n_out)
                .finish(),
        }
    }
}

impl AmplitudeFunction {
    pub fn identity() -> Self {
        AmplitudeFunction::Identity
    }

    pub fn custom(n_in: usize, n_out: usize, forward: AmplitudeMap, jacobian: AmplitudeJacobian) -> Self {
        AmplitudeFunction::Custom {
            n_in,
            n_out,
            forward,
            jacobian,
        }
    }

    /// Elementwise power map `u = v^p` on every channel.
    pub fn power(n_channels: usize, exponent: f64) -> Self {
        AmplitudeFunction::Custom {
            n_in: n_channels,
            n_out: n_channels,
            forward: Arc::new(move |row, _| row.iter().map(|&v| v.powf(exponent)).collect()),
            jacobian: Arc::new(move |row, _| {
                DMatrix::from_fn(row.len(), row.len(), |k, i| {
                    if k == i {
                        exponent * row[i].powf(exponent - 1.0)
                    } else {
                        0.0
                    }
                })
            }),
        }
    }

    /// Rabi drive map `(A, delta) -> A sin(w t + delta)` evaluated at fixed
    /// per-step sample times.
    pub fn rabi(carrier_freq: f64, sample_times: Vec<f64>) -> Self {
        let times = Arc::new(sample_times);
        let t1 = Arc::clone(&times);
        let t2 = Arc::clone(&times);
        AmplitudeFunction::Custom {
            n_in: 2,
            n_out: 1,
            forward: Arc::new(move |row, step| {
                vec![row[0] * (carrier_freq * t1[step] + row[1]).sin()]
            }),
            jacobian: Arc::new(move |row, step| {
                let phase = carrier_freq * t2[step] + row[1];
                DMatrix::from_row_slice(1, 2, &[phase.sin(), row[0] * phase.cos()])
            }),
        }
    }

    pub fn n_output_channels(&self, n_in: usize) -> usize {
        match self {
            AmplitudeFunction::Identity => n_in,
            AmplitudeFunction::Custom { n_out, .. } => *n_out,
        }
    }

    /// Row-wise application of the forward map.
    pub fn apply(&self, transferred: &PulseMatrix) -> Result<PulseMatrix> {
        match self {
            AmplitudeFunction::Identity => Ok(transferred.clone()),
            AmplitudeFunction::Custom {
                n_in,
                n_out,
                forward,
                ..
            } => {
                if transferred.n_channels() != *n_in {
                    return Err(Error::DimensionMismatch {
                        context: "apply_amplitude channels",
                        expected: *n_in,
                        got: transferred.n_channels(),
                    });
                }
                let mut values = DMatrix::<f64>::zeros(transferred.n_steps(), *n_out);
                for l in 0..transferred.n_steps() {
                    let row = transferred.row(l);
                    let u = forward(&row, l);
                    if u.len() != *n_out {
                        return Err(Error::DimensionMismatch {
                            context: "amplitude function output arity",
                            expected: *n_out,
                            got: u.len(),
                        });
                    }
                    if u.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("amplitude function output"));
                    }
                    for k in 0..*n_out {
                        values[(l, k)] = u[k];
                    }
                }
                PulseMatrix::new(values, transferred.dt().to_vec())
            }
        }
    }

    /// Per-step Jacobian contraction:
    /// `dCost/dx_{l,i} = sum_k dCost/du_{l,k} * du_k/dx_i (l)`.
    pub fn jacobian_chain(
        &self,
        transferred: &PulseMatrix,
        d_cost_d_u: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        match self {
            AmplitudeFunction::Identity => Ok(d_cost_d_u.clone()),
            AmplitudeFunction::Custom {
                n_in,
                n_out,
                jacobian,
                ..
            } => {
                if d_cost_d_u.nrows() != transferred.n_steps() || d_cost_d_u.ncols() != *n_out {
                    return Err(Error::ShapeMismatch {
                        context: "amplitude_jacobian_chain",
                        expected_rows: transferred.n_steps(),
                        expected_cols: *n_out,
                        rows: d_cost_d_u.nrows(),
                        cols: d_cost_d_u.ncols(),
                    });
                }
                let mut grad = DMatrix::<f64>::zeros(transferred.n_steps(), *n_in);
                for l in 0..transferred.n_steps() {
                    let row = transferred.row(l);
                    let jac = jacobian(&row, l);
                    if jac.nrows() != *n_out || jac.ncols() != *n_in {
                        return Err(Error::ShapeMismatch {
                            context: "amplitude jacobian shape",
                            expected_rows: *n_out,
                            expected_cols: *n_in,
                            rows: jac.nrows(),
                            cols: jac.ncols(),
                        });
                    }
                    for i in 0..*n_in {
                        let mut acc = 0.0;
                        for k in 0..*n_out {
                            acc += d_cost_d_u[(l, k)] * jac[(k, i)];
                        }
                        grad[(l, i)] = acc;
                    }
                }
                Ok(grad)
            }
        }
    }

    /// Self-check: compare the provided Jacobian against central finite
    /// differences of the forward map on the given pulse.
    pub fn verify_jacobian(&self, transferred: &PulseMatrix, tol: f64) -> Result<()> {
        let (n_in, n_out, forward, jacobian) = match self {
            AmplitudeFunction::Identity => return Ok(()),
            AmplitudeFunction::Custom {
                n_in,
                n_out,
                forward,
                jacobian,
            } => (*n_in, *n_out, forward, jacobian),
        };
        let h = 1e-6;
        for l in 0..transferred.n_steps() {
            let row = transferred.row(l);
            let jac = jacobian(&row, l);
            for i in 0..n_in {
                let mut plus = row.clone();
                plus[i] += h;
                let mut minus = row.clone();
                minus[i] -= h;
                let up = forward(&plus, l);
                let um = forward(&minus, l);
                for k in 0..n_out {
                    let fd = (up[k] - um[k]) / (2.0 * h);
                    let scale = jac[(k, i)].abs().max(fd.abs()).max(1.0);
                    if (jac[(k, i)] - fd).abs() > tol * scale {
                        return Err(Error::invalid(format!(
                            "amplitude Jacobian inconsistent with forward map at step {l}, \
                             output {k}, input {i}: analytic {} vs finite-difference {fd}",
                            jac[(k, i)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
