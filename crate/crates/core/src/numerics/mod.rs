//! Numerical building blocks: quadrature, monotone root finding, dense linear
//! algebra, eigenvalues, matrix exponential, ODE integration and Routh–Hurwitz tests.

mod eigen;
mod expm;
mod linsolve;
mod matrix;
mod ode;
mod quad;
mod roots;
mod routh;

pub use eigen::{eigenvalues_general, symmetric_eigen, symmetric_eigenvalues_jacobi, SymmetricEigen};
pub use expm::expm;
pub use linsolve::{solve_linear, LuFactors};
pub use matrix::Matrix;
pub use ode::{
    integrate_adaptive, integrate_ode, integrate_with, AdaptiveOptions, Integrator, Monitor,
    OdeOptions, DEFAULT_DIVERGENCE_CAP, DEFAULT_RECORD_EVERY, DEFAULT_STEP, OdeSolution, OdeStatus, StepControl,
};
pub use quad::{quad_adaptive, quad_adaptive_with_depth, DEFAULT_QUAD_TOL};
pub use roots::{solve_monotone, solve_monotone_bracketed};
pub use routh::{
    classify_margin, cubic_roots, quadratic_roots, routh_hurwitz_2, routh_hurwitz_3, Polynomial2,
    Polynomial3, StabilityClass, StabilityVerdict, DEFAULT_MARGINAL_TOL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("adaptive quadrature did not converge on [{lo}, {hi}] within depth {depth}")]
    QuadratureDepth { lo: f64, hi: f64, depth: usize },
    #[error("quadrature integrand returned a non-finite value at {at}")]
    QuadratureNonFinite { at: f64 },
    #[error("root bracket expansion failed after {doublings} doublings (target {target})")]
    BracketExpansion { target: f64, doublings: usize },
    #[error("monotone solve returned residual {residual} above tolerance {tolerance}")]
    RootResidual { residual: f64, tolerance: f64 },
    #[error("matrix is singular to working precision (pivot {pivot} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not symmetric (max asymmetry {asymmetry})")]
    NotSymmetric { asymmetry: f64 },
    #[error("QR iteration failed to converge after {iterations} iterations")]
    QrNoConvergence { iterations: usize },
    #[error("Jacobi iteration failed to converge after {sweeps} sweeps")]
    JacobiNoConvergence { sweeps: usize },
    #[error("ODE right-hand side produced a non-finite value at t = {t_last_valid}")]
    OdeNonFinite { t_last_valid: f64 },
    #[error("adaptive step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
