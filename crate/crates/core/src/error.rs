use thiserror::Error;

use crate::equilibrium::EquilibriumError;
use crate::functions::FunctionError;
use crate::graph::GraphError;
use crate::numerics::NumericsError;
use crate::power::PowerError;
use crate::protocols::ProtocolError;
use crate::scenarios::ScenarioError;
use crate::simulate::SimulateError;
use crate::stability::StabilityError;

/// Any failure surfaced by the library, with the process exit code it maps to.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl Error {
    /// 2 for bad input, 3 for a numerical failure on valid input.
    pub fn exit_code(&self) -> i32 {
        let input = match self {
            Self::Graph(_) | Self::Protocol(_) | Self::Scenario(_) => true,
            Self::Function(e) => !matches!(e, FunctionError::Numerics(_)),
            Self::Numerics(_) => false,
            Self::Equilibrium(e) => matches!(e, EquilibriumError::Dimension { .. } | EquilibriumError::Empty),
            Self::Simulate(e) => !matches!(e, SimulateError::Numerics(_)),
            Self::Stability(e) => !matches!(e, StabilityError::Numerics(_) | StabilityError::RouteDisagreement { .. }),
            Self::Power(e) => e.is_input_error(),
        };
        if input {
            EXIT_INPUT
        } else {
            EXIT_NUMERICAL
        }
    }
}
