//! Cycle-level model of an LSTM accelerator built from racetrack memory.
//!
//! Q8.8 arithmetic, racetrack chains and weight tracks, shift-based
//! activations, network mapping, a discrete-cycle simulator with an energy
//! ledger, overshift fault injection and a floating-point reference.

pub mod energy;
pub mod error_model;
pub mod fixedpoint;
pub mod lstm;
pub mod mapping;
pub mod nonlinear;
pub mod oracle;
pub mod racetrack;
pub mod sim;

pub use fixedpoint::{FixedQ8_8, WideAccumulator};
pub use lstm::{CellKind, GateWeights, LayerWeights, Matrix};
pub use mapping::{map_network, HardwareConfig, NetworkSpec, Placement};
pub use sim::{analytic_cycles, simulate, RunResult};

/// The hardware word type.
pub type Q8_8 = FixedQ8_8;
/// Layer weights in hardware format.
pub type FixedWeights = LayerWeights<FixedQ8_8>;
/// Layer weights for the double-precision reference.
pub type FloatWeights = LayerWeights<f64>;
/// Layer weights for a single-precision reference.
pub type Float32Weights = LayerWeights<f32>;
