//! First-order generalized filter functions for piecewise-constant pulses.
//!
//! The toggling-frame noise operator of channel `a` within step `l` is
//! `B~(t) = Q(t)^dag s_a B_a Q(t)` with `Q(t) = exp(-i H_l tau) Q_{l-1}`.
//! Eigendecomposing each step Hamiltonian turns the Fourier integral per
//! segment into closed form. Expanding the frequency-domain control matrix
//! `R(w) = int B~(t) e^{iwt} dt` in an orthonormal Hermitian basis
//! `{s_j}` with `tr(s_i s_j) = d delta_ij` gives
//! `F(w) = sum_{j>0} |tr(s_j R(w))/d|^2` (the identity component carries no
//! infidelity), and the noise infidelity is the two-sided integral
//! `I_ff = int dw/2pi S(w) F(w)`.
//!
//! Spectral-density convention: user-facing densities are one-sided in
//! ordinary frequency f; internally they convert to two-sided angular
//! densities via `S_two(w) = S_one(|w|/2pi) / 2`, which preserves
//! `variance = int_0^inf S_one(f) df`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_basis, C64, Operator};
use crate::noise::SpectralDensityFn;
use crate::solver::{NoiseChannel, PropagationRecord, RecordKind};

/// Positive, strictly ascending angular-frequency samples with integration
/// weights (trapezoid by default).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    omega: Vec<f64>,
    weights: Vec<f64>,
}

impl FrequencyGrid {
    pub fn from_points(omega: Vec<f64>) -> Result<Self> {
        if omega.len() < 2 {
            return Err(Error::invalid("frequency grid needs at least two samples"));
        }
        if omega[0] <= 0.0 {
            return Err(Error::invalid("frequency samples must be positive"));
        }
        if omega.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequency samples must be strictly ascending"));
        }
        let n = omega.len();
        let mut weights = vec![0.0; n];
        weights[0] = 0.5 * (omega[1] - omega[0]);
        weights[n - 1] = 0.5 * (omega[n - 1] - omega[n - 2]);
        for i in 1..n - 1 {
            weights[i] = 0.5 * (omega[i + 1] - omega[i - 1]);
        }
        Ok(FrequencyGrid { omega, weights })
    }

    pub fn log_spaced(omega_min: f64, omega_max: f64, n: usize) -> Result<Self> {
        if !(omega_min > 0.0) || !(omega_max > omega_min) {
            return Err(Error::invalid("log grid needs 0 < omega_min < omega_max"));
        }
        let l0 = omega_min.ln();
        let l1 = omega_max.ln();
        let omega = (0..n)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
            .collect();
        Self::from_points(omega)
    }

    pub fn linear(omega_min: f64, omega_max: f64, n: usize) -> Result<Self> {
        if !(omega_min > 0.0) || !(omega_max > omega_min) {
            return Err(Error::invalid("linear grid needs 0 < omega_min < omega_max"));
        }
        let omega = (0..n)
            .map(|i| omega_min + (omega_max - omega_min) * i as f64 / (n - 1) as f64)
            .collect();
        Self::from_points(omega)
    }

    /// Default pulse-adapted grid: log-spaced between `1/T_total` and
    /// `1/dt`.
    pub fn default_for_pulse(total_time: f64, dt: f64, n: usize) -> Result<Self> {
        Self::log_spaced(1.0 / total_time, 1.0 / dt, n)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// One-sided spectral density in ordinary frequency, with the documented
/// conversion to the two-sided angular-frequency density used in the
/// infidelity integral.
#[derive(Clone)]
pub struct SpectralDensity {
    onesided: SpectralDensityFn,
}

impl SpectralDensity {
    pub fn from_onesided(onesided: SpectralDensityFn) -> Self {
        SpectralDensity { onesided }
    }

    /// Pink noise `S(f) = amplitude / f`.
    pub fn one_over_f(amplitude: f64) -> Self {
        SpectralDensity {
            onesided: Arc::new(move |f| amplitude / f),
        }
    }

    /// Flat one-sided density.
    pub fn white(level: f64) -> Self {
        SpectralDensity {
            onesided: Arc::new(move |_| level),
        }
    }

    /// Low-frequency box of total weight `variance` below `cutoff` (Hz-like
    /// units); the quasi-static limit of a narrow-band spectrum.
    pub fn low_frequency_box(variance: f64, cutoff: f64) -> Self {
        SpectralDensity {
            onesided: Arc::new(move |f| if f <= cutoff { variance / cutoff } else { 0.0 }),
        }
    }

    pub fn onesided(&self, f: f64) -> f64 {
        (self.onesided)(f)
    }

    /// `S_two(w) = S_one(|w| / 2pi) / 2`.
    pub fn two_sided_angular(&self, omega: f64) -> f64 {
        (self.onesided)(omega.abs() / (2.0 * std::f64::consts::PI)) / 2.0
    }
}

/// Filter functions per noise channel on a frequency grid, plus the operator
/// basis used for the control-matrix expansion.
#[derive(Clone)]
pub struct FilterFunctionResult {
    omega: Vec<f64>,
    /// values[channel][frequency]
    values: Vec<Vec<f64>>,
    basis: Vec<Operator>,
}

impl FilterFunctionResult {
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn n_channels(&self) -> usize {
        self.values.len()
    }

    pub fn channel(&self, a: usize) -> &[f64] {
        &self.values[a]
    }

    pub fn basis(&self) -> &[Operator] {
        &self.basis
    }

    /// CSV export: `omega, F_0, F_1, ...`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        write!(out, "omega")?;
        for a in 0..self.n_channels() {
            write!(out, ",F_{a}")?;
        }
        writeln!(out)?;
        for (i, w) in self.omega.iter().enumerate() {
            write!(out, "{w:.17e}")?;
            for ch in &self.values {
                write!(out, ",{:.17e}", ch[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// First-order filter functions of a closed-system propagation for each
/// noise channel.
pub fn compute_filter_function(
    record: &PropagationRecord,
    channels: &[NoiseChannel],
    grid: &FrequencyGrid,
) -> Result<FilterFunctionResult> {
    if record.kind() != RecordKind::Closed {
        return Err(Error::invalid(
            "filter functions require a closed-system propagation record",
        ));
    }
    if channels.is_empty() {
        return Err(Error::invalid("at least one noise channel is required"));
    }
    let d = record.dim();
    for ch in channels {
        if ch.operator.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "filter-function noise operator",
                expected: d,
                got: ch.operator.dim(),
            });
        }
    }
    let n = record.n_steps();
    let basis = hermitian_basis(d);
    let u = record.amplitudes();

    // per-step caches: eigenvalue gaps, frame transforms, start times;
    // everything laid out column-major for an allocation-free hot loop
    struct StepCache {
        /// exp(i (l_i - l_j) dt), flat [i + j*d]
        gap_phase: Vec<C64>,
        /// i (l_i - l_j), flat [i + j*d]
        gap: Vec<f64>,
        /// Q_{l-1}^dag W_l, column-major
        frame: Vec<C64>,
        /// W_l^dag (s_a B_a) W_l per channel, column-major
        noise_eig: Vec<Vec<C64>>,
        t_start: f64,
        dt: f64,
    }
    let mut t = 0.0;
    let mut steps = Vec::with_capacity(n);
    for l in 0..n {
        let (vals, vecs) = record.generator(l).eigh();
        let frame = &record.forward_cumulant(l).dagger() * &vecs;
        let row = u.row(l);
        let coarse = l / record.substeps();
        let dt = u.dt()[l];
        let noise_eig = channels
            .iter()
            .map(|ch| {
                let s = ch.susceptibility.value(&row, coarse);
                let scaled = ch.operator.scaled(C64::new(s, 0.0));
                (&(&vecs.dagger() * &scaled) * &vecs).into_data().as_slice().to_vec()
            })
            .collect();
        let mut gap = vec![0.0; d * d];
        let mut gap_phase = vec![C64::new(0.0, 0.0); d * d];
        for j in 0..d {
            for i in 0..d {
                let lam = vals[i] - vals[j];
                gap[i + j * d] = lam;
                gap_phase[i + j * d] = C64::new(0.0, lam * dt).exp();
            }
        }
        steps.push(StepCache {
            gap_phase,
            gap,
            frame: frame.data().as_slice().to_vec(),
            noise_eig,
            t_start: t,
            dt,
        });
        t += dt;
    }

    let n_ch = channels.len();
    let basis_flat: Vec<Vec<C64>> = basis
        .iter()
        .skip(1)
        .map(|b| b.data().as_slice().to_vec())
        .collect();
    let values: Vec<Vec<f64>> = grid
        .omega()
        .par_iter()
        .map(|&omega| {
            let mut r_total = vec![C64::new(0.0, 0.0); d * d];
            let mut inner = vec![C64::new(0.0, 0.0); d * d];
            let mut tmp = vec![C64::new(0.0, 0.0); d * d];
            let mut out = Vec::with_capacity(n_ch);
            for a in 0..n_ch {
                r_total.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for step in &steps {
                    // exp(i x dt) = exp(i w dt) * gap_phase with x = w + gap
                    let omega_phase = C64::new(0.0, omega * step.dt).exp();
                    let b = &step.noise_eig[a];
                    for idx in 0..d * d {
                        let x = omega + step.gap[idx];
                        let xd = x * step.dt;
                        let integral = if xd.abs() < 1e-6 {
                            C64::new(
                                step.dt * (1.0 - xd * xd / 6.0),
                                step.dt * (0.5 * xd - xd * xd * xd / 24.0),
                            )
                        } else {
                            (omega_phase * step.gap_phase[idx] - C64::new(1.0, 0.0))
                                / C64::new(0.0, x)
                        };
                        inner[idx] = b[idx] * integral;
                    }
                    // tmp = frame * inner
                    for j in 0..d {
                        for i in 0..d {
                            let mut acc = C64::new(0.0, 0.0);
                            for k in 0..d {
                                acc += step.frame[i + k * d] * inner[k + j * d];
                            }
                            tmp[i + j * d] = acc;
                        }
                    }
                    // r_total += phase * tmp * frame^dag
                    let phase = C64::new(0.0, omega * step.t_start).exp();
                    for j in 0..d {
                        for i in 0..d {
                            let mut acc = C64::new(0.0, 0.0);
                            for k in 0..d {
                                acc += tmp[i + k * d] * step.frame[j + k * d].conj();
                            }
                            r_total[i + j * d] += phase * acc;
                        }
                    }
                }
                // expand in the traceless part of the basis
                let mut f = 0.0;
                for sigma in &basis_flat {
                    let mut proj = C64::new(0.0, 0.0);
                    for j in 0..d {
                        for i in 0..d {
                            // tr(sigma R) = sum_ij sigma[i,j] R[j,i]
                            proj += sigma[i + j * d] * r_total[j + i * d];
                        }
                    }
                    f += proj.norm_sqr() / (d * d) as f64;
                }
                out.push(f);
            }
            out
        })
        .collect();

    // transpose to values[channel][frequency]
    let mut per_channel = vec![Vec::with_capacity(grid.len()); n_ch];
    for freq_slice in values {
        for (a, v) in freq_slice.into_iter().enumerate() {
            per_channel[a].push(v);
        }
    }
    Ok(FilterFunctionResult {
        omega: grid.omega().to_vec(),
        values: per_channel,
        basis,
    })
}

/// Eq.-style noise infidelity `I_ff = int dw/2pi S(w) F(w)` over the
/// two-sided spectrum; with `F` even and `S` symmetrized this is
/// `(1/pi) sum_i w_i S_two(w_i) F(w_i)` on the positive grid.
///
/// `psds` must hold one density per channel, or a single density applied to
/// all channels.
pub fn infidelity_from_spectrum(
    result: &FilterFunctionResult,
    psds: &[SpectralDensity],
    grid: &FrequencyGrid,
) -> Result<f64> {
    if grid.omega() != result.omega() {
        return Err(Error::invalid(
            "frequency grid does not match the filter-function samples",
        ));
    }
    if psds.len() != result.n_channels() && psds.len() != 1 {
        return Err(Error::DimensionMismatch {
            context: "spectral densities vs noise channels",
            expected: result.n_channels(),
            got: psds.len(),
        });
    }
    let mut total = 0.0;
    for a in 0..result.n_channels() {
        let psd = &psds[if psds.len() == 1 { 0 } else { a }];
        let f = result.channel(a);
        for (i, (&w, &weight)) in grid.omega().iter().zip(grid.weights()).enumerate() {
            let s = psd.two_sided_angular(w);
            if s < 0.0 {
                return Err(Error::invalid(format!(
                    "spectral density negative at omega = {w}"
                )));
            }
            total += weight * s * f[i];
        }
    }
    Ok(total / std::f64::consts::PI)
}

/// Central finite differences of a scalar cost over a raw parameter matrix;
/// the step is relative (`h = rel_step * max(|v|, 1)` per entry).
/// Perturbed evaluations run in parallel and are reduced in a fixed order.
pub fn gradient_fd<F>(eval: &F, raw: &DMatrix<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64> + Sync,
{
    let entries: Vec<(usize, usize)> = (0..raw.ncols())
        .flat_map(|k| (0..raw.nrows()).map(move |l| (l, k)))
        .collect();
    let parts: Vec<Result<f64>> = entries
        .par_iter()
        .map(|&(l, k)| {
            let h = rel_step * raw[(l, k)].abs().max(1.0);
            let mut plus = raw.clone();
            plus[(l, k)] += h;
            let mut minus = raw.clone();
            minus[(l, k)] -= h;
            let fp = eval(&plus)?;
            let fm = eval(&minus)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite("finite-difference cost evaluation"));
            }
            Ok((fp - fm) / (2.0 * h))
        })
        .collect();
    let mut grad = DMatrix::<f64>::zeros(raw.nrows(), raw.ncols());
    for (&(l, k), value) in entries.iter().zip(parts) {
        grad[(l, k)] = value?;
    }
    Ok(grad)
}
