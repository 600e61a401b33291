//! Noise-amplitude trace generation.
//!
//! Two regimes: quasi-static noise (one amplitude per trace, constant over
//! the pulse, sampled from a Gaussian either by Monte Carlo or by
//! Gauss-Hermite quadrature) and fast colored noise (frequency-domain
//! shaping of white Gaussian spectra so the ensemble periodogram converges
//! to a prescribed one-sided spectral density).

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};

/// Sampled noise amplitudes: one `n_t x n_channels` matrix per trace plus
/// normalized trace weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTraces {
    traces: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
}

impl NoiseTraces {
    pub fn new(traces: Vec<DMatrix<f64>>, weights: Vec<f64>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::invalid("at least one noise trace is required"));
        }
        if weights.len() != traces.len() {
            return Err(Error::DimensionMismatch {
                context: "noise trace weights",
                expected: traces.len(),
                got: weights.len(),
            });
        }
        let shape = traces[0].shape();
        if traces.iter().any(|t| t.shape() != shape) {
            return Err(Error::invalid("all noise traces must share one shape"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "trace weights must sum to 1, got {total}"
            )));
        }
        Ok(NoiseTraces { traces, weights })
    }

    pub fn n_traces(&self) -> usize {
        self.traces.len()
    }

    pub fn n_steps(&self) -> usize {
        self.traces[0].nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.traces[0].ncols()
    }

    pub fn trace(&self, i: usize) -> &DMatrix<f64> {
        &self.traces[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DMatrix<f64>, f64)> {
        self.traces.iter().zip(self.weights.iter().copied())
    }

    /// Weighted mean of `f` over traces.
    pub fn weighted_mean<F: Fn(&DMatrix<f64>) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(t, w)| w * f(t)).sum()
    }

    /// Debug dump of one channel, trace-major: row i = trace i over time.
    pub fn write_channel_csv<W: Write>(&self, channel: usize, mut out: W) -> Result<()> {
        if channel >= self.n_channels() {
            return Err(Error::invalid(format!("channel {channel} out of range")));
        }
        for t in &self.traces {
            let row: Vec<String> = (0..t.nrows()).map(|l| format!("{:.17e}", t[(l, channel)])).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    MonteCarlo,
    DeterministicQuadrature,
}

/// Gaussian noise assumed static over one pulse.
#[derive(Debug, Clone)]
pub struct QuasiStaticGenerator {
    pub std_devs: Vec<f64>,
    pub n_traces: usize,
    pub mode: SamplingMode,
    pub seed: u64,
}

impl QuasiStaticGenerator {
    pub fn monte_carlo(std_devs: Vec<f64>, n_traces: usize, seed: u64) -> Self {
        QuasiStaticGenerator {
            std_devs,
            n_traces,
            mode: SamplingMode::MonteCarlo,
            seed,
        }
    }

    pub fn quadrature(std_devs: Vec<f64>, nodes_per_channel: usize) -> Self {
        QuasiStaticGenerator {
            std_devs,
            n_traces: nodes_per_channel,
            mode: SamplingMode::DeterministicQuadrature,
            seed: 0,
        }
    }

    /// Produce traces on an `n_t`-step grid. Every trace is constant along
    /// the time axis by construction.
    ///
    /// In quadrature mode `n_traces` counts nodes per channel; multiple
    /// channels are combined as a tensor grid with product weights.
    pub fn generate(&self, n_t: usize) -> Result<NoiseTraces> {
        if n_t == 0 {
            return Err(Error::invalid("n_t must be >= 1"));
        }
        if self.n_traces == 0 {
            return Err(Error::invalid("n_traces must be >= 1"));
        }
        if self.std_devs.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::invalid("standard deviations must be >= 0"));
        }
        let n_ch = self.std_devs.len();
        if n_ch == 0 {
            return Err(Error::invalid("at least one noise channel is required"));
        }
        match self.mode {
            SamplingMode::MonteCarlo => {
                let mut traces = Vec::with_capacity(self.n_traces);
                for idx in 0..self.n_traces {
                    // per-trace RNG stream keeps fan-out deterministic
                    let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                    rng.set_stream(idx as u64);
                    let draws: Vec<f64> = self
                        .std_devs
                        .iter()
                        .map(|&s| s * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    traces.push(DMatrix::from_fn(n_t, n_ch, |_, ch| draws[ch]));
                }
                let w = 1.0 / self.n_traces as f64;
                NoiseTraces::new(traces, vec![w; self.n_traces])
            }
            SamplingMode::DeterministicQuadrature => {
                let (nodes, weights) = gauss_hermite(self.n_traces);
                // per-channel scaled nodes: b = sqrt(2) sigma x, weight w/sqrt(pi)
                let mut combos: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
                for &sigma in &self.std_devs {
                    let mut next = Vec::with_capacity(combos.len() * nodes.len());
                    for (prefix, w0) in &combos {
                        for (&x, &w) in nodes.iter().zip(weights.iter()) {
                            let mut amps = prefix.clone();
                            amps.push(std::f64::consts::SQRT_2 * sigma * x);
                            next.push((amps, w0 * w / std::f64::consts::PI.sqrt()));
                        }
                    }
                    combos = next;
                }
                let mut traces = Vec::with_capacity(combos.len());
                let mut w = Vec::with_capacity(combos.len());
                for (amps, weight) in combos {
                    traces.push(DMatrix::from_fn(n_t, n_ch, |_, ch| amps[ch]));
                    w.push(weight);
                }
                // quadrature weights are positive and sum to 1 up to round-off
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= total);
                NoiseTraces::new(traces, w)
            }
        }
    }
}

pub type SpectralDensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Fast colored noise from a one-sided spectral density `S(f)` in ordinary
/// frequency (units amplitude^2 / frequency), one density per channel.
#[derive(Clone)]
pub struct ColoredNoiseGenerator {
    pub psds: Vec<SpectralDensityFn>,
    pub n_traces: usize,
    pub dt: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl ColoredNoiseGenerator {
    pub fn new(psds: Vec<SpectralDensityFn>, n_traces: usize, dt: f64, n_samples: usize, seed: u64) -> Self {
        ColoredNoiseGenerator {
            psds,
            n_traces,
            dt,
            n_samples,
            seed,
        }
    }

    /// Frequency-domain synthesis: Hermitian-symmetric complex Gaussian
    /// spectrum shaped by sqrt(S), zero DC component, inverse FFT. The
    /// ensemble-averaged periodogram converges to `S` in expectation.
    pub fn generate(&self) -> Result<NoiseTraces> {
        let n = self.n_samples;
        if n < 2 {
            return Err(Error::invalid("colored noise needs n_samples >= 2"));
        }
        if self.n_traces == 0 {
            return Err(Error::invalid("n_traces must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("sample spacing must be positive"));
        }
        let n_ch = self.psds.len();
        if n_ch == 0 {
            return Err(Error::invalid("at least one spectral density is required"));
        }
        let df = 1.0 / (n as f64 * self.dt);
        // amplitude per bin, from the one-sided density
        let mut bin_amp = vec![vec![0.0f64; n / 2 + 1]; n_ch];
        for (ch, psd) in self.psds.iter().enumerate() {
            for m in 1..=n / 2 {
                let s = psd(m as f64 * df);
                if s < 0.0 {
                    return Err(Error::invalid(format!(
                        "spectral density negative at f = {}",
                        m as f64 * df
                    )));
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite("spectral density on FFT grid"));
                }
                bin_amp[ch][m] = (s * n as f64 / (2.0 * self.dt)).sqrt();
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(n);
        let mut traces = Vec::with_capacity(self.n_traces);
        for idx in 0..self.n_traces {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(idx as u64);
            let mut values = DMatrix::<f64>::zeros(n, n_ch);
            let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
            for ch in 0..n_ch {
                spectrum.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for m in 1..=n / 2 {
                    let amp = bin_amp[ch][m];
                    if 2 * m == n {
                        // Nyquist bin must stay real
                        let x: f64 = rng.sample(StandardNormal);
                        spectrum[m] = Complex64::new(amp * x, 0.0);
                    } else {
                        let x: f64 = rng.sample(StandardNormal);
                        let y: f64 = rng.sample(StandardNormal);
                        let z = Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2;
                        spectrum[m] = amp * z;
                        spectrum[n - m] = amp * z.conj();
                    }
                }
                ifft.process(&mut spectrum);
                for l in 0..n {
                    values[(l, ch)] = spectrum[l].re / n as f64;
                }
            }
            traces.push(values);
        }
        let w = 1.0 / self.n_traces as f64;
        NoiseTraces::new(traces, vec![w; self.n_traces])
    }

    /// One-sided periodogram of a single channel of one trace, matching the
    /// synthesis convention: `P(f_m) = 2 dt / N * |FFT(b)|^2`.
    pub fn periodogram(trace: &DMatrix<f64>, channel: usize, dt: f64) -> Vec<f64> {
        let n = trace.nrows();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex64> = (0..n)
            .map(|l| Complex64::new(trace[(l, channel)], 0.0))
            .collect();
        fft.process(&mut buf);
        (0..=n / 2)
            .map(|m| 2.0 * dt / n as f64 * buf[m].norm_sqr())
            .collect()
    }
}

/// Gauss-Hermite nodes and weights for weight function exp(-x^2) via
/// Golub-Welsch on the symmetric tridiagonal companion matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for k in 0..n - 1 {
        let off = ((k as f64 + 1.0) / 2.0).sqrt();
        companion[(k, k + 1)] = off;
        companion[(k + 1, k)] = off;
    }
    let eig = companion.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2) * std::f64::consts::PI.sqrt();
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_hermite_three_nodes() {
        let (x, w) = gauss_hermite(3);
        assert_abs_diff_eq!(x[0], -1.224_744_871_391_589, epsilon = 1e-13);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x[2], 1.224_744_871_391_589, epsilon = 1e-13);
        assert_abs_diff_eq!(w[1], 1.181_635_900_603_677_4, epsilon = 1e-13);
        assert_abs_diff_eq!(w[0], 0.295_408_975_150_919_35, epsilon = 1e-13);
    }

    #[test]
    fn zero_sigma_gives_zero_traces() {
        let gen = QuasiStaticGenerator::monte_carlo(vec![0.0], 5, 42);
        let traces = gen.generate(8).unwrap();
        for (t, _) in traces.iter() {
            assert!(t.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn monte_carlo_std_matches_sigma() {
        let sigma = 0.05;
        let n = 10_000;
        let gen = QuasiStaticGenerator::monte_carlo(vec![sigma], n, 7);
        let traces = gen.generate(3).unwrap();
        let mean: f64 = traces.iter().map(|(t, _)| t[(0, 0)]).sum::<f64>() / n as f64;
        let var: f64 = traces.iter().map(|(t, _)| (t[(0, 0)] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - sigma).abs() / sigma < 0.03, "std {std}");
        // zero-mean within 5 standard errors
        assert!(mean.abs() < 5.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn traces_constant_along_time_axis() {
        let gen = QuasiStaticGenerator::monte_carlo(vec![0.3, 0.1], 20, 3);
        let traces = gen.generate(16).unwrap();
        for (t, _) in traces.iter() {
            for ch in 0..2 {
                for l in 1..16 {
                    assert_eq!(t[(l, ch)], t[(0, ch)]);
                }
            }
        }
    }

    #[test]
    fn quadrature_moments() {
        let sigma = 0.05;
        let gen = QuasiStaticGenerator::quadrature(vec![sigma], 5);
        let traces = gen.generate(2).unwrap();
        assert_eq!(traces.n_traces(), 5);
        let w_sum: f64 = traces.weights().iter().sum();
        assert_abs_diff_eq!(w_sum, 1.0, epsilon = 1e-12);
        let mean = traces.weighted_mean(|t| t[(0, 0)]);
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        let second = traces.weighted_mean(|t| t[(0, 0)].powi(2));
        assert_abs_diff_eq!(second, sigma * sigma, epsilon = 1e-12);
        // node set symmetric about zero
        let mut nodes: Vec<f64> = (0..5).map(|i| traces.trace(i)[(0, 0)]).collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 0..5 {
            assert_abs_diff_eq!(nodes[i], -nodes[4 - i], epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_tensor_grid_over_channels() {
        let gen = QuasiStaticGenerator::quadrature(vec![0.1, 0.2], 3);
        let traces = gen.generate(1).unwrap();
        assert_eq!(traces.n_traces(), 9);
        let w_sum: f64 = traces.weights().iter().sum();
        assert_abs_diff_eq!(w_sum, 1.0, epsilon = 1e-12);
        let second_ch1 = traces.weighted_mean(|t| t[(0, 1)].powi(2));
        assert_abs_diff_eq!(second_ch1, 0.04, epsilon = 1e-12);
    }

    #[test]
    fn negative_sigma_rejected() {
        let gen = QuasiStaticGenerator::monte_carlo(vec![-0.1], 2, 0);
        assert!(gen.generate(4).is_err());
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let gen = QuasiStaticGenerator::monte_carlo(vec![0.2], 6, 99);
        assert_eq!(gen.generate(4).unwrap(), gen.generate(4).unwrap());
        let cg = ColoredNoiseGenerator::new(vec![Arc::new(|_| 1.0)], 3, 0.1, 32, 5);
        assert_eq!(cg.generate().unwrap(), cg.generate().unwrap());
    }

    #[test]
    fn zero_psd_gives_zero_traces() {
        let cg = ColoredNoiseGenerator::new(vec![Arc::new(|_| 0.0)], 4, 0.1, 64, 1);
        let traces = cg.generate().unwrap();
        for (t, _) in traces.iter() {
            assert!(t.iter().all(|&v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn negative_psd_rejected() {
        let cg = ColoredNoiseGenerator::new(vec![Arc::new(|f| 0.1 - f)], 1, 1.0, 16, 1);
        assert!(cg.generate().is_err());
    }

    #[test]
    fn white_noise_variance_matches_nyquist_band() {
        let s0 = 0.4;
        let dt = 0.25;
        let n_samples = 64;
        let n_traces = 10_000;
        let cg = ColoredNoiseGenerator::new(vec![Arc::new(move |_| s0)], n_traces, dt, n_samples, 11);
        let traces = cg.generate().unwrap();
        let mut acc = 0.0;
        let mut count = 0usize;
        for (t, _) in traces.iter() {
            for l in 0..n_samples {
                acc += t[(l, 0)].powi(2);
                count += 1;
            }
        }
        let var = acc / count as f64;
        let f_nyquist = 0.5 / dt;
        let expected = s0 * f_nyquist;
        assert!(
            (var - expected).abs() / expected < 0.05,
            "var {var} vs expected {expected}"
        );
    }

    #[test]
    fn ensemble_periodogram_converges_to_psd() {
        let dt = 0.5;
        let n_samples = 64;
        let n_traces = 10_000;
        let psd = |f: f64| 1e-3 / f;
        let cg = ColoredNoiseGenerator::new(vec![Arc::new(psd)], n_traces, dt, n_samples, 2);
        let traces = cg.generate().unwrap();
        let mut avg = vec![0.0f64; n_samples / 2 + 1];
        for (t, w) in traces.iter() {
            let p = ColoredNoiseGenerator::periodogram(t, 0, dt);
            for (a, v) in avg.iter_mut().zip(p.iter()) {
                *a += w * v;
            }
        }
        let df = 1.0 / (n_samples as f64 * dt);
        // interior bins: skip DC (zeroed) and the Nyquist edge
        for m in 1..n_samples / 2 {
            let want = psd(m as f64 * df);
            let rel = (avg[m] - want).abs() / want;
            assert!(rel < 0.10, "bin {m}: rel {rel}");
        }
    }

    #[test]
    fn colored_mean_within_confidence_band() {
        let s0 = 1.0;
        let dt = 0.1;
        let n_samples = 32;
        for &n_traces in &[100usize, 1600] {
            let cg = ColoredNoiseGenerator::new(vec![Arc::new(move |_| s0)], n_traces, dt, n_samples, 13);
            let traces = cg.generate().unwrap();
            let mean: f64 =
                traces.iter().map(|(t, _)| t[(0, 0)]).sum::<f64>() / n_traces as f64;
            let sigma_single = (s0 * 0.5 / dt).sqrt();
            let band = 5.0 * sigma_single / (n_traces as f64).sqrt();
            assert!(mean.abs() < band, "n={n_traces}: mean {mean} band {band}");
        }
    }

    #[test]
    fn channel_dump_is_trace_major() {
        let gen = QuasiStaticGenerator::monte_carlo(vec![1.0], 3, 1);
        let traces = gen.generate(2).unwrap();
        let mut buf = Vec::new();
        traces.write_channel_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 2);
    }
}
