#![allow(clippy::needless_range_loop)]

//! Acceptance suite: every release criterion in one target, one pass/fail
//! line per criterion. Run with `cargo test --test acceptance`.

use std::fs;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pulseopt::cost;
use pulseopt::filterfn::{
    compute_filter_function, infidelity_from_spectrum, FrequencyGrid, SpectralDensity,
};
use pulseopt::linalg::{C64, Operator};
use pulseopt::noise::{ColoredNoiseGenerator, QuasiStaticGenerator};
use pulseopt::optim::{Bounds, Optimizer, Termination};
use pulseopt::pulse::{AmplitudeFunction, PulseMatrix, TransferFunction};
use pulseopt::sim::{CostKind, CostProvider, CostSpec, NoiseModel, Simulator};
use pulseopt::solver::{
    propagate_closed, propagate_lindblad, propagate_monte_carlo, HamiltonianSpec, LindbladSpec,
    NoiseChannel,
};
use pulseopt_cli::preset;
use pulseopt_cli::scenario::run_scenario;

fn report(criterion: usize, name: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("[acceptance] criterion {criterion} ({name}): PASS — {detail}"),
        Err(detail) => {
            println!("[acceptance] criterion {criterion} ({name}): FAIL — {detail}");
            panic!("criterion {criterion} failed: {detail}");
        }
    }
}

fn half(op: Operator) -> Operator {
    op.scaled(C64::new(0.5, 0.0))
}

#[test]
fn criterion_1_xpi2_reproduction() {
    let outcome = (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let start = Instant::now();
        run_scenario(preset::XPI2_EXAMPLE, dir.path(), Some(0), None)
            .map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        let doc: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("result_stage_2.json")).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let labels: Vec<String> = doc["result"]["labels"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        let ff_idx = labels.iter().position(|l| l == "I_ff").ok_or("no I_ff entry")?;
        let initial = doc["result"]["cost_history"][0][ff_idx].as_f64().unwrap();
        let final_ = doc["result"]["best_cost_vector"][ff_idx].as_f64().unwrap();
        let factor = initial / final_;
        if factor < 3.0 {
            return Err(format!(
                "filter-function infidelity reduced only {factor:.2}x (need >= 3)"
            ));
        }
        if elapsed >= 60.0 {
            return Err(format!("runtime {elapsed:.1} s exceeds 60 s"));
        }
        // stage-1 pulse: 20 rows x 2 channels, all within the [-1, 1] bounds
        let pulse = fs::read_to_string(dir.path().join("pulse_stage_1.csv"))
            .map_err(|e| e.to_string())?;
        let rows: Vec<&str> = pulse.lines().skip(1).collect();
        if rows.len() != 20 {
            return Err(format!("stage-1 pulse has {} rows, expected 20", rows.len()));
        }
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            if cols.len() != 4 {
                return Err("stage-1 pulse must have 2 channels".into());
            }
            for v in &cols[2..] {
                let x: f64 = v.parse().map_err(|e| format!("{e}"))?;
                if !(-1.0..=1.0).contains(&x) {
                    return Err(format!("pulse sample {x} violates the bounds"));
                }
            }
        }
        Ok(format!(
            "I_ff {initial:.3e} -> {final_:.3e} ({factor:.1}x) in {elapsed:.1} s"
        ))
    })();
    report(1, "xpi2 two-stage reproduction", outcome);
}

#[test]
fn criterion_2_gradient_exactness() {
    let outcome = (|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for &dim in &[2usize, 4] {
            for &n_t in &[1usize, 4, 8] {
                for &shaped in &[false, true] {
                    if n_t == 1 && shaped {
                        continue; // a one-step Gaussian kernel is degenerate
                    }
                    for _repeat in 0..2 {
                    count += 1;
                    let target = Operator::random_unitary(dim, &mut rng);
                    let c1 = Operator::random_hermitian(dim, &mut rng);
                    let c2 = Operator::random_hermitian(dim, &mut rng);
                    let drift = Operator::random_hermitian(dim, &mut rng);
                    let dt_coarse = 0.4;
                    let (transfer, amplitude, solver_steps, solver_dt) = if shaped {
                        let os = 2;
                        (
                            TransferFunction::gaussian_smoothing(n_t, 2, os, 0.7)
                                .map_err(|e| e.to_string())?,
                            AmplitudeFunction::custom(
                                2,
                                2,
                                Arc::new(|row: &[f64], _| {
                                    vec![row[0].tanh(), row[1] + 0.25 * row[0] * row[0]]
                                }),
                                Arc::new(|row: &[f64], _| {
                                    DMatrix::from_row_slice(
                                        2,
                                        2,
                                        &[1.0 - row[0].tanh().powi(2), 0.0, 0.5 * row[0], 1.0],
                                    )
                                }),
                            ),
                            n_t * os,
                            dt_coarse / os as f64,
                        )
                    } else {
                        (
                            TransferFunction::identity(n_t, 2),
                            AmplitudeFunction::identity(),
                            n_t,
                            dt_coarse,
                        )
                    };
                    let system = HamiltonianSpec::new(
                        vec![c1, c2],
                        vec![drift],
                        vec![],
                        vec![solver_dt; solver_steps],
                    )
                    .map_err(|e| e.to_string())?;
                    let sim = Simulator::new(
                        transfer,
                        amplitude,
                        system,
                        None,
                        NoiseModel::None,
                        vec![CostSpec::new("I_e", CostKind::Entanglement { target })],
                    )
                    .map_err(|e| e.to_string())?;
                    let raw = PulseMatrix::new(
                        DMatrix::from_fn(n_t, 2, |_, _| rng.gen_range(-0.9..0.9)),
                        vec![dt_coarse; n_t],
                    )
                    .map_err(|e| e.to_string())?;
                    let (_, grads) = sim.evaluate(&raw).map_err(|e| e.to_string())?;
                    let h = 1e-5;
                    let mut fd = DMatrix::<f64>::zeros(n_t, 2);
                    for l in 0..n_t {
                        for k in 0..2 {
                            let mut vp = raw.values().clone();
                            vp[(l, k)] += h;
                            let mut vm = raw.values().clone();
                            vm[(l, k)] -= h;
                            let cp = sim
                                .evaluate_values(
                                    &PulseMatrix::new(vp, raw.dt().to_vec()).unwrap(),
                                )
                                .map_err(|e| e.to_string())?[0];
                            let cm = sim
                                .evaluate_values(
                                    &PulseMatrix::new(vm, raw.dt().to_vec()).unwrap(),
                                )
                                .map_err(|e| e.to_string())?[0];
                            fd[(l, k)] = (cp - cm) / (2.0 * h);
                        }
                    }
                    let rel = (&grads[0] - &fd).abs().max() / fd.abs().max().max(1e-12);
                    worst = worst.max(rel);
                    if rel >= 1e-6 {
                        return Err(format!(
                            "instance dim={dim} n_t={n_t} shaped={shaped}: relative error {rel:.2e}"
                        ));
                    }
                    }
                }
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        if count < 20 {
            return Err(format!("only {count} instances"));
        }
        if elapsed >= 30.0 {
            return Err(format!("runtime {elapsed:.1} s exceeds 30 s"));
        }
        Ok(format!(
            "{count} instances, worst relative error {worst:.2e}, {elapsed:.1} s"
        ))
    })();
    report(2, "gradient exactness", outcome);
}

#[test]
fn criterion_3_lindblad_amplitude_damping() {
    let outcome = (|| {
        let gamma = 1.0;
        for &t in &[0.1f64, 1.0, 5.0] {
            let n = 5usize;
            let dt = t / n as f64;
            let spec = HamiltonianSpec::new(vec![], vec![Operator::zeros(2)], vec![], vec![dt; n])
                .map_err(|e| e.to_string())?;
            let lind = LindbladSpec::new(vec![Operator::sigma_minus()], vec![gamma])
                .map_err(|e| e.to_string())?;
            let u = PulseMatrix::new(DMatrix::zeros(n, 0), vec![dt; n]).map_err(|e| e.to_string())?;
            let rec = propagate_lindblad(&spec, &lind, &u).map_err(|e| e.to_string())?;
            let excited = Operator::from_row_slice(
                2,
                &[
                    C64::new(0., 0.),
                    C64::new(0., 0.),
                    C64::new(0., 0.),
                    C64::new(1., 0.),
                ],
            );
            for l in 1..=n {
                let process = rec.forward_cumulant(l);
                let rho = process
                    .apply_to_vec(&excited.vectorize())
                    .map_err(|e| e.to_string())?
                    .devectorize();
                let trace_err = (rho.trace().re - 1.0).abs().max(rho.trace().im.abs());
                if trace_err > 1e-10 {
                    return Err(format!("trace drifted by {trace_err:.2e} at step {l}"));
                }
                let pop = rho.data()[(1, 1)].re;
                let want = (-gamma * (l as f64 * dt)).exp();
                if (pop - want).abs() > 1e-10 {
                    return Err(format!(
                        "population {pop} vs analytic {want} at t = {}",
                        l as f64 * dt
                    ));
                }
            }
        }
        // gamma = 0 reduces to the closed-system channel V* (x) V
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let spec = HamiltonianSpec::new(
            vec![half(Operator::pauli_x()), half(Operator::pauli_y())],
            vec![Operator::zeros(2)],
            vec![],
            vec![0.5; 4],
        )
        .map_err(|e| e.to_string())?;
        let lind = LindbladSpec::new(vec![Operator::sigma_minus()], vec![0.0])
            .map_err(|e| e.to_string())?;
        let u = PulseMatrix::new(
            DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0)),
            vec![0.5; 4],
        )
        .map_err(|e| e.to_string())?;
        let open = propagate_lindblad(&spec, &lind, &u).map_err(|e| e.to_string())?;
        let closed = propagate_closed(&spec, &u).map_err(|e| e.to_string())?;
        let v = closed.total();
        let err = (&open.total().clone() - &v.conjugate().kron(v)).max_norm();
        if err > 1e-10 {
            return Err(format!("gamma=0 channel deviates by {err:.2e}"));
        }
        Ok(format!(
            "population matches e^(-gamma t) to 1e-10 at t in {{0.1, 1, 5}}, gamma=0 channel error {err:.1e}"
        ))
    })();
    report(3, "Lindblad correctness", outcome);
}

#[test]
fn criterion_4_cross_formalism_consistency() {
    let outcome = (|| {
        // free evolution, sigma_z/2 dephasing, sigma small enough that the
        // infidelity stays below 1e-2
        let n = 5usize;
        let dt = 1.2;
        let total = n as f64 * dt;
        let sigma = 0.02;
        let spec = HamiltonianSpec::new(
            vec![half(Operator::pauli_x())],
            vec![Operator::zeros(2)],
            vec![NoiseChannel::new(half(Operator::pauli_z()))],
            vec![dt; n],
        )
        .map_err(|e| e.to_string())?;
        let u = PulseMatrix::constant(n, 1, 0.0, dt).map_err(|e| e.to_string())?;
        let closed = propagate_closed(&spec, &u).map_err(|e| e.to_string())?;

        let infidelity = |traces| -> Result<f64, String> {
            let records = propagate_monte_carlo(&spec, &u, &traces).map_err(|e| e.to_string())?;
            cost::noise_average_infidelity(&records, closed.total(), true, Some(&closed))
                .map_err(|e| e.to_string())
        };
        let i_mc = infidelity(
            QuasiStaticGenerator::monte_carlo(vec![sigma], 10_000, 17)
                .generate(n)
                .map_err(|e| e.to_string())?,
        )?;
        let i_quad = infidelity(
            QuasiStaticGenerator::quadrature(vec![sigma], 5)
                .generate(n)
                .map_err(|e| e.to_string())?,
        )?;

        // narrow-band filter-function limit
        let cutoff_f = 1e-4 / total;
        let grid = FrequencyGrid::linear(
            2.0 * std::f64::consts::PI * cutoff_f * 1e-3,
            2.0 * std::f64::consts::PI * cutoff_f,
            200,
        )
        .map_err(|e| e.to_string())?;
        let ff = compute_filter_function(&closed, spec.noise_channels(), &grid)
            .map_err(|e| e.to_string())?;
        let psd = SpectralDensity::low_frequency_box(sigma * sigma, cutoff_f);
        let i_ff = infidelity_from_spectrum(&ff, &[psd], &grid).map_err(|e| e.to_string())?;

        if i_mc >= 1e-2 {
            return Err(format!("test point too noisy: I = {i_mc:.2e}"));
        }
        for (a, b, pair) in [
            (i_mc, i_quad, "MC vs quadrature"),
            (i_mc, i_ff, "MC vs filter function"),
            (i_quad, i_ff, "quadrature vs filter function"),
        ] {
            let rel = (a - b).abs() / (0.5 * (a + b));
            if rel >= 0.10 {
                return Err(format!("{pair}: {a:.3e} vs {b:.3e} ({rel:.2e} apart)"));
            }
        }
        Ok(format!(
            "I_mc = {i_mc:.3e}, I_quad = {i_quad:.3e}, I_ff = {i_ff:.3e} (pairwise < 10%)"
        ))
    })();
    report(4, "cross-formalism consistency", outcome);
}

#[test]
fn criterion_5_unitarity_and_positivity() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for trial in 0..10 {
            let dim = if trial % 2 == 0 { 2 } else { 4 };
            let c1 = Operator::random_hermitian(dim, &mut rng);
            let c2 = Operator::random_hermitian(dim, &mut rng);
            let drift = Operator::random_hermitian(dim, &mut rng);
            let spec = HamiltonianSpec::new(vec![c1, c2], vec![drift], vec![], vec![0.4; 5])
                .map_err(|e| e.to_string())?;
            let u = PulseMatrix::new(
                DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0)),
                vec![0.4; 5],
            )
            .map_err(|e| e.to_string())?;
            let rec = propagate_closed(&spec, &u).map_err(|e| e.to_string())?;
            for l in 0..rec.n_steps() {
                if !rec.step_propagator(l).is_unitary(1e-12) {
                    return Err(format!("trial {trial}: step {l} propagator not unitary"));
                }
            }
            if !rec.total().is_unitary(1e-12) {
                return Err(format!("trial {trial}: total propagator not unitary"));
            }
        }
        // Lindblad positivity on randomized qubit instances
        for trial in 0..10 {
            let spec = HamiltonianSpec::new(
                vec![half(Operator::pauli_x()), half(Operator::pauli_y())],
                vec![Operator::random_hermitian(2, &mut rng)],
                vec![],
                vec![0.3; 5],
            )
            .map_err(|e| e.to_string())?;
            let lind = LindbladSpec::new(
                vec![Operator::sigma_minus(), half(Operator::pauli_z())],
                vec![rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8)],
            )
            .map_err(|e| e.to_string())?;
            let u = PulseMatrix::new(
                DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0)),
                vec![0.3; 5],
            )
            .map_err(|e| e.to_string())?;
            let rec = propagate_lindblad(&spec, &lind, &u).map_err(|e| e.to_string())?;
            let psi = Operator::random_unitary(2, &mut rng);
            let ground = Operator::from_row_slice(
                2,
                &[
                    C64::new(1., 0.),
                    C64::new(0., 0.),
                    C64::new(0., 0.),
                    C64::new(0., 0.),
                ],
            );
            let rho0 = &(&psi * &ground) * &psi.dagger();
            for l in 0..=rec.n_steps() {
                let rho = rec
                    .forward_cumulant(l)
                    .apply_to_vec(&rho0.vectorize())
                    .map_err(|e| e.to_string())?
                    .devectorize();
                if !rho.is_hermitian(1e-10) {
                    return Err(format!("trial {trial}: rho not Hermitian at step {l}"));
                }
                let (vals, _) = rho.eigh();
                if vals.iter().any(|&v| v < -1e-10) {
                    return Err(format!(
                        "trial {trial}: negative eigenvalue {:?} at step {l}",
                        vals
                    ));
                }
            }
        }
        Ok("10 closed instances unitary to 1e-12; 10 Lindblad instances positive to -1e-10".into())
    })();
    report(5, "unitarity/positivity suite", outcome);
}

#[test]
fn criterion_6_fidelity_identities() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        // global-phase invariance
        for _ in 0..20 {
            let u = Operator::random_unitary(3, &mut rng);
            let v = Operator::random_unitary(3, &mut rng);
            let base = cost::entanglement_infidelity(&u, &v).map_err(|e| e.to_string())?;
            let phased = cost::entanglement_infidelity(
                &u.scaled(C64::from_polar(1.0, rng.gen_range(-3.0..3.0))),
                &v,
            )
            .map_err(|e| e.to_string())?;
            if (base - phased).abs() > 1e-12 {
                return Err(format!("phase invariance violated: {base} vs {phased}"));
            }
        }
        // open-system identity channel
        for i in 0..50 {
            let v = Operator::random_unitary(2, &mut rng);
            let f = cost::open_system_fidelity(&v, &v.conjugate().kron(&v))
                .map_err(|e| e.to_string())?;
            if (f - 1.0).abs() > 1e-10 {
                return Err(format!("unitary {i}: open-system fidelity {f}"));
            }
        }
        // block-diagonal leakage
        for _ in 0..10 {
            let u2 = Operator::random_unitary(2, &mut rng);
            let mut block = DMatrix::<C64>::zeros(3, 3);
            for i in 0..2 {
                for j in 0..2 {
                    block[(i, j)] = u2.data()[(i, j)];
                }
            }
            block[(2, 2)] = C64::from_polar(1.0, rng.gen_range(-3.0..3.0));
            let leak = cost::leakage_error(&Operator::new(block).unwrap(), &[0, 1])
                .map_err(|e| e.to_string())?;
            if leak.abs() > 1e-12 {
                return Err(format!("block-diagonal leakage {leak:.2e}"));
            }
        }
        // the 1 <-> 2 swap loses exactly half the subspace weight
        let mut swap = DMatrix::<C64>::zeros(3, 3);
        swap[(0, 0)] = C64::new(1., 0.);
        swap[(1, 2)] = C64::new(1., 0.);
        swap[(2, 1)] = C64::new(1., 0.);
        let leak = cost::leakage_error(&Operator::new(swap).unwrap(), &[0, 1])
            .map_err(|e| e.to_string())?;
        if (leak - 0.5).abs() > 1e-15 {
            return Err(format!("swap leakage {leak} instead of 1/2"));
        }
        Ok("phase invariance <= 1e-12, 50 identity channels at 1e-10, leakage identities exact".into())
    })();
    report(6, "fidelity identities", outcome);
}

#[test]
fn criterion_7_noise_generator_statistics() {
    let outcome = (|| {
        // colored generator: ensemble periodogram vs target on interior bins
        let dt = 0.5;
        let n_samples = 64;
        let n_traces = 10_000;
        let psd = |f: f64| 1e-3 / f;
        let gen = ColoredNoiseGenerator::new(vec![Arc::new(psd)], n_traces, dt, n_samples, 7);
        let traces = gen.generate().map_err(|e| e.to_string())?;
        let mut avg = vec![0.0f64; n_samples / 2 + 1];
        for (t, w) in traces.iter() {
            let p = ColoredNoiseGenerator::periodogram(t, 0, dt);
            for (a, v) in avg.iter_mut().zip(p.iter()) {
                *a += w * v;
            }
        }
        let df = 1.0 / (n_samples as f64 * dt);
        let mut worst: f64 = 0.0;
        for m in 1..n_samples / 2 {
            let want = psd(m as f64 * df);
            let rel = (avg[m] - want).abs() / want;
            worst = worst.max(rel);
            if rel >= 0.10 {
                return Err(format!("periodogram bin {m} off by {rel:.1}%"));
            }
        }
        // quadrature reproduces Gaussian moments exactly
        let sigma = 0.05;
        let q = QuasiStaticGenerator::quadrature(vec![sigma], 5)
            .generate(3)
            .map_err(|e| e.to_string())?;
        let m0: f64 = q.weights().iter().sum();
        let m1 = q.weighted_mean(|t| t[(0, 0)]);
        let m2 = q.weighted_mean(|t| t[(0, 0)].powi(2));
        if (m0 - 1.0).abs() > 1e-12 || m1.abs() > 1e-12 || (m2 - sigma * sigma).abs() > 1e-12 {
            return Err(format!("moments: m0 = {m0}, m1 = {m1}, m2 = {m2}"));
        }
        Ok(format!(
            "periodogram within {:.1}% on interior bins at 1e4 traces; quadrature moments exact to 1e-12",
            100.0 * worst
        ))
    })();
    report(7, "noise-generator statistics", outcome);
}

#[test]
fn criterion_8_reproducibility() {
    let outcome = (|| {
        let scenario = r#"
[system]
dimension = 2
controls = [
    { name = "pauli_x", scale = 0.5 },
    { name = "pauli_y", scale = 0.5 },
]
noise_operators = [{ name = "pauli_z", scale = 0.5 }]

[pulse]
n_steps = 8
step_duration = 1.0
bounds = [-1.0, 1.0]

[noise]
kind = "quasi_static"
standard_deviations = [0.05]
n_traces = 5

[[costs]]
label = "I_qs"
kind = "noise_infidelity"
target = { rotation = "x", angle = -1.5707963267948966 }
neglect_systematic = false

[optimizer]
seed = 11
max_iter = 40
"#;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        run_scenario(scenario, &out_a, None, None).map_err(|e| e.to_string())?;
        run_scenario(scenario, &out_b, None, None).map_err(|e| e.to_string())?;
        for name in ["result_stage_1.json", "costs_stage_1.csv", "pulse_stage_1.csv"] {
            let a = fs::read(out_a.join(name)).map_err(|e| e.to_string())?;
            let b = fs::read(out_b.join(name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{name} differs between identical runs"));
            }
        }
        // multi-start: parallel and serial containers must serialize equal
        let system = HamiltonianSpec::new(
            vec![half(Operator::pauli_x()), half(Operator::pauli_y())],
            vec![Operator::zeros(2)],
            vec![NoiseChannel::new(half(Operator::pauli_z()))],
            vec![1.0; 8],
        )
        .map_err(|e| e.to_string())?;
        let target = Operator::pauli_x()
            .matexp(C64::new(0.0, 0.25 * std::f64::consts::PI))
            .map_err(|e| e.to_string())?;
        let sim = Simulator::new(
            TransferFunction::identity(8, 2),
            AmplitudeFunction::identity(),
            system,
            None,
            NoiseModel::QuasiStatic(QuasiStaticGenerator::monte_carlo(vec![0.05], 5, 11)),
            vec![CostSpec::new(
                "I_qs",
                CostKind::NoiseInfidelity {
                    target,
                    neglect_systematic: false,
                },
            )],
        )
        .map_err(|e| e.to_string())?;
        let term = Termination {
            max_iter: 25,
            ..Termination::default()
        };
        let opt = Optimizer::new(&sim, Bounds::uniform(8, 2, -1.0, 1.0).unwrap(), term)
            .map_err(|e| e.to_string())?;
        let serial = opt
            .run_multi_start(4, 11, false, "hash")
            .map_err(|e| e.to_string())?;
        let parallel = opt
            .run_multi_start(4, 11, true, "hash")
            .map_err(|e| e.to_string())?;
        let s = serde_json::to_string(&serial).map_err(|e| e.to_string())?;
        let p = serde_json::to_string(&parallel).map_err(|e| e.to_string())?;
        if s != p {
            return Err("parallel and serial multi-start containers differ".into());
        }
        Ok("byte-identical result files across reruns; parallel == serial containers".into())
    })();
    report(8, "reproducibility", outcome);
}
