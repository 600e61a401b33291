//! Qubit dynamics simulation and noise-aware quantum optimal control.
//!
//! The crate models driven qubit systems under classical noise and control
//! hardware limitations, and optimizes piecewise-constant control pulses
//! against noise-aware fidelity metrics using exact analytic gradients.
//!
//! The layers, bottom to top:
//! * [`linalg`] — dense operator algebra and matrix exponentials;
//! * [`pulse`] — parameter-to-amplitude mapping (transfer and amplitude
//!   functions) with exact gradient chaining;
//! * [`noise`] — quasi-static and colored noise trace generation;
//! * [`solver`] — closed-system, Monte Carlo and Lindblad propagation;
//! * [`filterfn`] — first-order generalized filter functions;
//! * [`cost`] — fidelity metrics and their gradients;
//! * [`sim`] / [`optim`] — the simulator interface, bounded quasi-Newton
//!   optimization, multi-start driver and result containers.

// negated comparisons are deliberate NaN guards; frequency-bin loops read
// better indexed
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cost;
pub mod error;
pub mod filterfn;
pub mod linalg;
pub mod noise;
pub mod optim;
pub mod output;
pub mod pulse;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{hermitian_basis, C64, ExpAlgorithm, Operator, Pauli, VectorizedState};
pub use pulse::{AmplitudeFunction, PulseMatrix, TransferFunction};
