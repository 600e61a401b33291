//! Integration tests across the optimization stack: pipeline, simulator,
//! optimizer and result bookkeeping working together.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pulseopt::linalg::{C64, Operator};
use pulseopt::noise::QuasiStaticGenerator;
use pulseopt::optim::{Bounds, Optimizer, Termination, TerminationReason};
use pulseopt::pulse::{AmplitudeFunction, PulseMatrix, TransferFunction};
use pulseopt::sim::{CostKind, CostProvider, CostSpec, NoiseModel, Simulator};
use pulseopt::solver::{HamiltonianSpec, NoiseChannel};

fn half(op: Operator) -> Operator {
    op.scaled(C64::new(0.5, 0.0))
}

fn target_x_half_pi() -> Operator {
    Operator::pauli_x()
        .matexp(C64::new(0.0, 0.25 * std::f64::consts::PI))
        .unwrap()
}

fn quasi_static_sim(n: usize, dt: f64, n_traces: usize, seed: u64) -> Simulator {
    let system = HamiltonianSpec::new(
        vec![half(Operator::pauli_x()), half(Operator::pauli_y())],
        vec![Operator::zeros(2)],
        vec![NoiseChannel::new(half(Operator::pauli_z()))],
        vec![dt; n],
    )
    .unwrap();
    Simulator::new(
        TransferFunction::identity(n, 2),
        AmplitudeFunction::identity(),
        system,
        None,
        NoiseModel::QuasiStatic(QuasiStaticGenerator::monte_carlo(vec![0.05], n_traces, seed)),
        vec![CostSpec::new(
            "I_qs",
            CostKind::NoiseInfidelity {
                target: target_x_half_pi(),
                neglect_systematic: false,
            },
        )],
    )
    .unwrap()
}

#[test]
fn quasi_static_stage_drops_two_orders_of_magnitude() {
    // 20 x 2 parameters in [-1, 1], random start, fixed seed
    let n = 20;
    let dt = 0.5 * std::f64::consts::PI;
    let sim = quasi_static_sim(n, dt, 10, 0);
    let bounds = Bounds::uniform(n, 2, -1.0, 1.0).unwrap();
    let term = Termination {
        max_iter: 150,
        ..Termination::default()
    };
    let opt = Optimizer::new(&sim, bounds, term).unwrap();
    let initial = opt.random_initial(0, 0);
    let result = opt.run(&initial, 0).unwrap();
    let start = result.cost_history[0][0];
    let end = result.best_cost_vector[0];
    assert!(
        end < 1e-2 * start,
        "I_qs only went from {start:.3e} to {end:.3e}"
    );
    // iterates respected the box
    for row in &result.final_parameters {
        for &v in row {
            assert!((-1.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn best_of_multi_start_beats_single_start_median() {
    let n = 8;
    let sim = quasi_static_sim(n, 1.0, 5, 23);
    let bounds = Bounds::uniform(n, 2, -1.0, 1.0).unwrap();
    let term = Termination {
        max_iter: 30,
        ..Termination::default()
    };
    let opt = Optimizer::new(&sim, bounds, term).unwrap();
    let container = opt.run_multi_start(8, 23, false, "hash").unwrap();
    let mut finals: Vec<f64> = container
        .results()
        .iter()
        .map(|r| r.best_cost_vector[0])
        .collect();
    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let best = finals[0];
    let median = finals[finals.len() / 2];
    assert!(best <= median, "best {best} vs median {median}");
}

#[test]
fn simulator_statistics_bounded_by_wall_clock() {
    let n = 6;
    let sim = quasi_static_sim(n, 1.0, 5, 7);
    let bounds = Bounds::uniform(n, 2, -1.0, 1.0).unwrap();
    let term = Termination {
        max_iter: 15,
        ..Termination::default()
    };
    let opt = Optimizer::new(&sim, bounds, term).unwrap();
    let result = opt.run(&opt.random_initial(7, 0), 7).unwrap();
    let stats = sim.stats();
    let cost_total: f64 = stats.cost_seconds.iter().sum();
    assert!(
        cost_total <= result.wall_clock_seconds,
        "cost seconds {cost_total} exceed wall clock {}",
        result.wall_clock_seconds
    );
    assert!(stats.n_evaluations > 0);
}

#[test]
fn identical_seed_and_params_give_bit_identical_evaluations() {
    let sim_a = quasi_static_sim(6, 1.0, 8, 99);
    let sim_b = quasi_static_sim(6, 1.0, 8, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let raw = PulseMatrix::new(
        DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0)),
        vec![1.0; 6],
    )
    .unwrap();
    let (va, ga) = sim_a.evaluate(&raw).unwrap();
    let (vb, gb) = sim_b.evaluate(&raw).unwrap();
    assert_eq!(va, vb);
    assert_eq!(ga, gb);
}

#[test]
fn stage_chaining_improves_second_objective() {
    // stage 1 shapes against quasi-static noise; reusing its pulse as the
    // stage-2 start must begin below a random pulse's systematic error
    let n = 10;
    let dt = 0.5 * std::f64::consts::PI;
    let sim1 = quasi_static_sim(n, dt, 5, 3);
    let bounds = Bounds::uniform(n, 2, -1.0, 1.0).unwrap();
    let term = Termination {
        max_iter: 60,
        ..Termination::default()
    };
    let opt1 = Optimizer::new(&sim1, bounds.clone(), term).unwrap();
    let res1 = opt1.run(&opt1.random_initial(3, 0), 3).unwrap();

    let system = HamiltonianSpec::new(
        vec![half(Operator::pauli_x()), half(Operator::pauli_y())],
        vec![Operator::zeros(2)],
        vec![NoiseChannel::new(half(Operator::pauli_z()))],
        vec![dt; n],
    )
    .unwrap();
    let sim2 = Simulator::new(
        TransferFunction::identity(n, 2),
        AmplitudeFunction::identity(),
        system,
        None,
        NoiseModel::None,
        vec![CostSpec::new(
            "I_e",
            CostKind::Entanglement {
                target: target_x_half_pi(),
            },
        )],
    )
    .unwrap();
    let initial2 = res1.final_pulse(sim2.raw_dt()).unwrap();
    let (start_cost, _) = sim2.evaluate(&initial2).unwrap();
    assert!(
        start_cost[0] < 0.1,
        "chained stage starts at {:.3e}",
        start_cost[0]
    );
    let opt2 = Optimizer::new(&sim2, bounds, Termination::default()).unwrap();
    let res2 = opt2.run(&initial2, 3).unwrap();
    assert!(res2.best_cost_vector[0] <= start_cost[0]);
    assert!(matches!(
        res2.termination,
        TerminationReason::GradientTolerance | TerminationReason::CostTolerance
    ));
}
