//! Nonlinear consensus protocols, distributed PI control and swing-equation frequency
//! control on undirected networks, with the closed-form predictions and stability tests
//! that go with them.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases below fix it
//! to `f64`. Power-system and scenario code is `f64` only.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
mod error;
pub mod functions;
pub mod graph;
pub mod invariants;
pub mod numerics;
pub mod power;
pub mod protocols;
mod scalar;
pub mod scenarios;
pub mod simulate;
pub mod stability;

pub use error::{Error, EXIT_ASSERTION, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};
pub use scalar::Real;

pub type Graph = graph::Graph<f64>;
pub type Matrix = numerics::Matrix<f64>;
pub type ScalarFn = functions::ScalarFn<f64>;
pub type ProtocolSpec = protocols::ProtocolSpec<f64>;
pub type AgentState = protocols::AgentState<f64>;
pub type Trajectory = simulate::Trajectory<f64>;
pub type StabilityReport = stability::StabilityReport<f64>;
pub type EquilibriumPrediction = equilibrium::EquilibriumPrediction<f64>;
