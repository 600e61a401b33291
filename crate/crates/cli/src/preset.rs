//! Built-in scenario presets.

/// Single-qubit X_{pi/2} gate under Rabi driving: stage 1 optimizes against
/// quasi-static detuning noise (Monte Carlo, sigma = 0.05, 10 traces), stage
/// 2 refines the result against pink detuning noise via filter functions.
pub const XPI2_EXAMPLE: &str = r#"schema_version = 1

[system]
dimension = 2
controls = [
    { name = "pauli_x", scale = 0.5 },
    { name = "pauli_y", scale = 0.5 },
]
drift = [{ name = "zero" }]
noise_operators = [{ name = "pauli_z", scale = 0.5 }]

[pulse]
n_steps = 20
step_duration = 1.5707963267948966
bounds = [-1.0, 1.0]

[pulse.transfer]
kind = "identity"

[pulse.amplitude]
kind = "identity"

[noise]
kind = "quasi_static"
standard_deviations = [0.05]
n_traces = 10
sampling = "monte_carlo"

[[costs]]
label = "I_qs"
kind = "noise_infidelity"
target = { rotation = "x", angle = -1.5707963267948966 }
neglect_systematic = false

[[costs]]
label = "I_e"
kind = "entanglement_infidelity"
target = { rotation = "x", angle = -1.5707963267948966 }

[[costs]]
label = "I_ff"
kind = "filter_function_infidelity"
psd = { kind = "one_over_f", amplitude = 1e-3 }
omega = { kind = "log", n = 200 }

[optimizer]
seed = 0
max_iter = 500

[[stages]]
costs = ["I_qs"]

[[stages]]
costs = ["I_e", "I_ff"]
max_iter = 160
"#;

pub fn lookup(name: &str) -> Option<&'static str> {
    match name {
        "xpi2_example" => Some(XPI2_EXAMPLE),
        _ => None,
    }
}

pub fn names() -> &'static [&'static str] {
    &["xpi2_example"]
}
