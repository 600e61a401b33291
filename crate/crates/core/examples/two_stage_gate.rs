//! Two-stage optimization of an X_{pi/2} gate on a driven qubit: first
//! against quasi-static detuning noise, then against pink noise via filter
//! functions, reusing the first stage's pulse as the starting point.

use pulseopt::filterfn::{FrequencyGrid, SpectralDensity};
use pulseopt::linalg::{C64, Operator};
use pulseopt::noise::QuasiStaticGenerator;
use pulseopt::optim::{Bounds, Optimizer, Termination};
use pulseopt::pulse::{AmplitudeFunction, TransferFunction};
use pulseopt::sim::{CostKind, CostProvider, CostSpec, NoiseModel, Simulator};
use pulseopt::solver::{HamiltonianSpec, NoiseChannel};

fn main() -> pulseopt::Result<()> {
    let half = |op: Operator| op.scaled(C64::new(0.5, 0.0));
    let n = 20;
    let dt = 0.5 * std::f64::consts::PI;
    let target = Operator::pauli_x().matexp(C64::new(0.0, 0.25 * std::f64::consts::PI))?;
    let system = || {
        HamiltonianSpec::new(
            vec![half(Operator::pauli_x()), half(Operator::pauli_y())],
            vec![Operator::zeros(2)],
            vec![NoiseChannel::new(half(Operator::pauli_z()))],
            vec![dt; n],
        )
    };
    let bounds = Bounds::uniform(n, 2, -1.0, 1.0)?;

    // stage 1: Monte Carlo average over quasi-static detuning draws
    let sim1 = Simulator::new(
        TransferFunction::identity(n, 2),
        AmplitudeFunction::identity(),
        system()?,
        None,
        NoiseModel::QuasiStatic(QuasiStaticGenerator::monte_carlo(vec![0.05], 10, 0)),
        vec![CostSpec::new(
            "I_qs",
            CostKind::NoiseInfidelity {
                target: target.clone(),
                neglect_systematic: false,
            },
        )],
    )?;
    let opt1 = Optimizer::new(&sim1, bounds.clone(), Termination::default())?;
    let res1 = opt1.run(&opt1.random_initial(0, 0), 0)?;
    println!(
        "stage 1: I_qs {:.3e} -> {:.3e} in {} iterations",
        res1.cost_history[0][0], res1.best_cost_vector[0], res1.n_iterations
    );

    // stage 2: systematic error plus pink-noise filter-function infidelity
    let grid = FrequencyGrid::default_for_pulse(n as f64 * dt, dt, 200)?;
    let sim2 = Simulator::new(
        TransferFunction::identity(n, 2),
        AmplitudeFunction::identity(),
        system()?,
        None,
        NoiseModel::None,
        vec![
            CostSpec::new("I_e", CostKind::Entanglement { target }),
            CostSpec::new(
                "I_ff",
                CostKind::FilterFunction {
                    psd: SpectralDensity::one_over_f(1e-3),
                    grid,
                },
            ),
        ],
    )?;
    let term = Termination {
        max_iter: 160,
        ..Termination::default()
    };
    let opt2 = Optimizer::new(&sim2, bounds, term)?;
    let res2 = opt2.run(&res1.final_pulse(sim2.raw_dt())?, 0)?;
    println!(
        "stage 2: I_e {:.3e} -> {:.3e}, I_ff {:.3e} -> {:.3e} in {} iterations",
        res2.cost_history[0][0],
        res2.best_cost_vector[0],
        res2.cost_history[0][1],
        res2.best_cost_vector[1],
        res2.n_iterations
    );
    Ok(())
}
