//! Consensus values predicted from the conserved quantities, before simulating.

use serde::Serialize;
use thiserror::Error;

use crate::functions::{FunctionError, Method, ScalarFn};
use crate::numerics::{solve_monotone_bracketed, NumericsError};
use crate::Real;

pub use crate::power::power_steady_state;

const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("no agents")]
    Empty,
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("integral equation residual {residual} exceeds {tolerance}")]
    Residual { residual: f64, tolerance: f64 },
}

/// A root of the conservation law together with its certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumPrediction<T> {
    pub value: T,
    /// `|LHS - RHS|` of the integral equation at `value`.
    pub residual: T,
    pub method: Method,
}

fn check_len<T>(what: &'static str, v: &[T], n: usize) -> Result<(), EquilibriumError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(EquilibriumError::Dimension { what, expected: n, got: v.len() })
    }
}

fn hull<T: Real>(v: &[T]) -> (T, T) {
    v.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Solves `sum_i P_i(s) = lhs` for a strictly increasing sum of primitives.
fn solve_sum<T: Real>(
    primitive: impl Fn(T) -> Result<(T, Method), FunctionError>,
    lhs: T,
    seed: (T, T),
    lhs_method: Method,
) -> Result<EquilibriumPrediction<T>, EquilibriumError> {
    // The closure cannot return errors through the root finder; remember the first one.
    let failure = std::cell::RefCell::new(None);
    let f = |s: T| match primitive(s) {
        Ok((v, _)) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            T::nan()
        }
    };
    let root = solve_monotone_bracketed(f, lhs, seed.0, seed.1);
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    let value = root?;
    let (rhs, rhs_method) = primitive(value)?;
    let residual = (rhs - lhs).abs();
    let tolerance = T::tol_floor(RESIDUAL_TOL, 64.0) * (T::one() + lhs.abs());
    if residual > tolerance {
        return Err(EquilibriumError::Residual { residual: residual.to_f64_lossy(), tolerance: tolerance.to_f64_lossy() });
    }
    Ok(EquilibriumPrediction { value, residual, method: lhs_method.and(rhs_method) })
}

/// Sum over agents of `int_0^s 1/gamma_i`.
fn reciprocal_sum<T: Real>(gains: &[ScalarFn<T>], s: T) -> Result<(T, Method), FunctionError> {
    let mut total = T::zero();
    let mut method = Method::ClosedForm;
    for g in gains {
        let (v, m) = g.reciprocal_antiderivative(T::zero(), s)?;
        total += v;
        method = method.and(m);
    }
    Ok((total, method))
}

fn reciprocal_lhs<T: Real>(gains: &[ScalarFn<T>], y0: &[T]) -> Result<(T, Method), FunctionError> {
    let mut total = T::zero();
    let mut method = Method::ClosedForm;
    for (g, &y) in gains.iter().zip(y0) {
        let (v, m) = g.reciprocal_antiderivative(T::zero(), y)?;
        total += v;
        method = method.and(m);
    }
    Ok((total, method))
}

/// Consensus point of the first-order nonlinear protocol:
/// `sum_i int_0^{x0_i} 1/gamma_i = int_0^{x*} sum_i 1/gamma_i`.
pub fn predict_first_order<T: Real>(
    gains: &[ScalarFn<T>],
    x0: &[T],
) -> Result<EquilibriumPrediction<T>, EquilibriumError> {
    if x0.is_empty() {
        return Err(EquilibriumError::Empty);
    }
    check_len("gains", gains, x0.len())?;
    let (lhs, method) = reciprocal_lhs(gains, x0)?;
    solve_sum(|s| reciprocal_sum(gains, s), lhs, hull(x0), method)
}

/// Consensus velocity of the second-order nonlinear protocol; same law in `v`.
pub fn predict_second_order_velocity<T: Real>(
    gains: &[ScalarFn<T>],
    v0: &[T],
) -> Result<EquilibriumPrediction<T>, EquilibriumError> {
    predict_first_order(gains, v0)
}

/// Rest point of the damped protocol:
/// `sum_i (int_0^{x0_i} kappa_i + v0_i) = int_0^{x*} sum_i kappa_i`.
pub fn predict_damped_position<T: Real>(
    dampings: &[ScalarFn<T>],
    x0: &[T],
    v0: &[T],
) -> Result<EquilibriumPrediction<T>, EquilibriumError> {
    if x0.is_empty() {
        return Err(EquilibriumError::Empty);
    }
    check_len("dampings", dampings, x0.len())?;
    check_len("v0", v0, x0.len())?;
    let mut lhs = T::zero();
    let mut method = Method::ClosedForm;
    for ((k, &x), &v) in dampings.iter().zip(x0).zip(v0) {
        let (p, m) = k.antiderivative_with_method(T::zero(), x)?;
        lhs += p + v;
        method = method.and(m);
    }
    let sum = |s: T| -> Result<(T, Method), FunctionError> {
        let mut total = T::zero();
        let mut method = Method::ClosedForm;
        for k in dampings {
            let (p, m) = k.antiderivative_with_method(T::zero(), s)?;
            total += p;
            method = method.and(m);
        }
        Ok((total, method))
    };
    solve_sum(sum, lhs, hull(x0), method)
}

/// Average of the initial positions, the PI consensus value without disturbance.
pub fn predict_pi_average<T: Real>(x0: &[T]) -> T {
    x0.iter().copied().sum::<T>() / T::from_usize_lossy(x0.len().max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_gain_gives_mean() {
        let p = predict_first_order(&vec![ScalarFn::constant(1.0f64); 2], &[1.0, 3.0]).unwrap();
        assert!((p.value - 2.0).abs() < 1e-12);
        assert_eq!(p.method, Method::ClosedForm);
    }

    #[test]
    fn heterogeneous_constants() {
        // LHS = 0/1 + 3/2 = 1.5 = x*(1 + 1/2)
        let p = predict_first_order(&[ScalarFn::constant(1.0f64), ScalarFn::constant(2.0)], &[0.0, 3.0]).unwrap();
        assert!((p.value - 1.0).abs() < 1e-12);
        assert!(p.residual <= 1e-8 * 2.5);
    }

    #[test]
    fn satellite_velocity_against_quadratic_oracle() {
        let v0: [f64; 5] = [-3.0, -7.0, 3.0, -1.0, 0.0];
        let uniform = predict_second_order_velocity(&vec![ScalarFn::constant(1.0f64); 5], &v0).unwrap();
        assert!((uniform.value + 1.6).abs() < 1e-12);

        let c: f64 = 0.1;
        // sum_i (v_i |v_i| / 2 + c v_i) = 5 (v |v| / 2 + c v); the sum is negative so v* < 0
        // and -v^2/2 + c v = lhs / 5.
        let lhs: f64 = v0.iter().map(|v| v * v.abs() / 2.0 + c * v).sum();
        assert!((lhs + 25.8).abs() < 1e-12);
        let rhs = lhs / 5.0;
        let oracle = (c - (c * c - 2.0 * rhs).sqrt()) / 1.0;
        assert!((oracle + 3.114).abs() < 1e-3);
        let p = predict_second_order_velocity(&vec![ScalarFn::reciprocal_abs_shift(c); 5], &v0).unwrap();
        assert!((p.value - oracle).abs() < 1e-10, "{} vs {oracle}", p.value);
        assert_eq!(p.method, Method::ClosedForm);
        let zero = predict_second_order_velocity(&vec![ScalarFn::reciprocal_abs_shift(c); 5], &[0.0; 5]).unwrap();
        assert!(zero.value.abs() < 1e-12);
    }

    #[test]
    fn damped_examples() {
        let p = predict_damped_position(&vec![ScalarFn::constant(1.0f64); 3], &[1.0, 2.0, 6.0], &[0.0; 3]).unwrap();
        assert!((p.value - 3.0).abs() < 1e-12);
        let p = predict_damped_position(&vec![ScalarFn::constant(1.0f64); 2], &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((p.value - 1.0).abs() < 1e-12);
        let p = predict_damped_position(&[ScalarFn::constant(2.0), ScalarFn::constant(1.0f64)], &[3.0, 0.0], &[0.0, 0.0])
            .unwrap();
        assert!((p.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pi_average() {
        assert!((predict_pi_average(&[5.0f64, -6.0, 8.0, 4.0, 5.0]) - 3.2).abs() < 1e-15);
        assert_eq!(predict_pi_average(&[2.5; 4]), 2.5);
    }

    #[test]
    fn bump_gain_uses_quadrature_and_stays_in_hull() {
        let gains: Vec<ScalarFn<f64>> = (0..3)
            .map(|i| if i == 1 { ScalarFn::bump_reciprocal(5e4, 5e5, 23.0, 0.4) } else { ScalarFn::constant(2e-5) })
            .collect();
        let x0 = [20.0, 24.0, 29.0];
        let p = predict_first_order(&gains, &x0).unwrap();
        assert_eq!(p.method, Method::Quadrature);
        assert!(p.value > 20.0 && p.value < 29.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            predict_first_order(&[ScalarFn::constant(1.0f64)], &[1.0, 2.0]),
            Err(EquilibriumError::Dimension { .. })
        ));
        assert_eq!(predict_first_order::<f64>(&[], &[]), Err(EquilibriumError::Empty));
    }
}
