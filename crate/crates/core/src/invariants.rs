//! Conserved quantities and Lyapunov functions of the nonlinear laws, evaluated pointwise
//! so the simulator can record them as monitor channels.

use serde::Serialize;

use crate::functions::{FunctionError, ScalarFn};
use crate::graph::Graph;
use crate::numerics::solve_monotone_bracketed;
use crate::Real;

/// A named scalar recorded at every trajectory sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorChannel<T> {
    pub name: String,
    pub samples: Vec<T>,
}

impl<T: Real> MonitorChannel<T> {
    pub fn new(name: impl Into<String>, samples: Vec<T>) -> Self {
        Self { name: name.into(), samples }
    }

    /// `max_k |s_k - s_0|`.
    pub fn max_drift(&self) -> T {
        let Some(&first) = self.samples.first() else { return T::zero() };
        self.samples.iter().fold(T::zero(), |m, &s| m.max((s - first).abs()))
    }

    /// Largest increase `s_{k+1} - s_k - rel (1 + |s_k|)` over consecutive samples; `<= 0`
    /// means the channel is non-increasing at relative tolerance `rel`.
    pub fn worst_increase(&self, rel: T) -> T {
        self.samples
            .windows(2)
            .map(|w| w[1] - w[0] - rel * (T::one() + w[0].abs()))
            .fold(T::neg_infinity(), T::max)
    }

    pub fn is_non_increasing(&self, rel: T) -> bool {
        self.samples.len() < 2 || self.worst_increase(rel) <= T::zero()
    }
}

fn reciprocal_sum<T: Real>(gains: &[ScalarFn<T>], y: &[T]) -> Result<T, FunctionError> {
    let mut total = T::zero();
    for (g, &yi) in gains.iter().zip(y) {
        total += g.reciprocal_antiderivative(T::zero(), yi)?.0;
    }
    Ok(total)
}

/// `E(x) = sum_i int_0^{x_i} 1/gamma_i`.
pub fn conserved_e_first<T: Real>(gains: &[ScalarFn<T>], x: &[T]) -> Result<T, FunctionError> {
    reciprocal_sum(gains, x)
}

/// `p(v) = sum_i int_0^{v_i} 1/gamma_i`.
pub fn conserved_p_second<T: Real>(gains: &[ScalarFn<T>], v: &[T]) -> Result<T, FunctionError> {
    reciprocal_sum(gains, v)
}

/// `E(x, v) = sum_i (int_0^{x_i} kappa_i + v_i)`.
pub fn conserved_e_damped<T: Real>(dampings: &[ScalarFn<T>], x: &[T], v: &[T]) -> Result<T, FunctionError> {
    let mut total = T::zero();
    for ((k, &xi), &vi) in dampings.iter().zip(x).zip(v) {
        total += k.antiderivative(T::zero(), xi)? + vi;
    }
    Ok(total)
}

/// `V(x) = sum_i int_{x*}^{x_i} (y - x*) / gamma_i(y) dy`.
pub fn lyapunov_first<T: Real>(gains: &[ScalarFn<T>], x: &[T], x_star: T) -> Result<T, FunctionError> {
    let mut total = T::zero();
    for (g, &xi) in gains.iter().zip(x) {
        total += g.weighted_reciprocal_antiderivative(x_star, xi)?.0;
    }
    Ok(total)
}

/// `sum_{(i,j) in E} int_0^{x_i - x_j} a_ij`, each undirected edge counted once.
pub fn edge_potential<T: Real>(interactions_a: &[ScalarFn<T>], graph: &Graph<T>, x: &[T]) -> Result<T, FunctionError> {
    let mut total = T::zero();
    for (a, &(i, j)) in interactions_a.iter().zip(graph.edges()) {
        total += a.antiderivative(T::zero(), x[i] - x[j])?;
    }
    Ok(total)
}

/// `V(xbar, v) = sum_i int_{v*}^{v_i} (y - v*) / gamma_i + sum_{(i,j)} int_0^{x_i - x_j} a_ij`.
pub fn lyapunov_second<T: Real>(
    gains: &[ScalarFn<T>],
    interactions_a: &[ScalarFn<T>],
    graph: &Graph<T>,
    x: &[T],
    v: &[T],
    v_star: T,
) -> Result<T, FunctionError> {
    Ok(lyapunov_first(gains, v, v_star)? + edge_potential(interactions_a, graph, x)?)
}

/// `V(x, v) = sum_i v_i^2 / 2 + sum_{(i,j)} int_0^{x_i - x_j} a_ij`.
///
/// The potential counts each undirected edge once. With the ordered-pair double sum the
/// derivative along the damped law picks up an indefinite `sum a(xbar) (v_i - v_j)` term,
/// so only this normalisation is non-increasing.
pub fn lyapunov_damped<T: Real>(
    interactions_a: &[ScalarFn<T>],
    graph: &Graph<T>,
    x: &[T],
    v: &[T],
) -> Result<T, FunctionError> {
    let kinetic = v.iter().map(|&vi| vi * vi).sum::<T>() / T::lit(2.0);
    Ok(kinetic + edge_potential(interactions_a, graph, x)?)
}

/// A priori bound on `||x(t)||_inf` for the damped law.
///
/// Since `V` is non-increasing, `|v_i| <= M = sqrt(2 V0)` and every edge potential stays
/// below `V0`, so `|x_i - x_j| <= M'` on each edge and `<= (n - 1) M'` across the graph.
/// The conserved `E` gives `|sum_i int_0^{x_i} kappa_i| <= |E0| + n M`; if all `x_i`
/// share a sign this forces `min |x_i| <= (|E0| + n M) / (n kappa_lower)`.
///
/// Returns `None` when some interaction has a bounded primitive (no finite `M'`).
pub fn lemma1_bound<T: Real>(
    dampings: &[ScalarFn<T>],
    interactions_a: &[ScalarFn<T>],
    graph: &Graph<T>,
    x0: &[T],
    v0: &[T],
    kappa_lower: T,
) -> Result<Option<T>, FunctionError> {
    let n = graph.n();
    if n == 0 || !(kappa_lower > T::zero()) {
        return Ok(None);
    }
    let v_init = lyapunov_damped(interactions_a, graph, x0, v0)?;
    let e_init = conserved_e_damped(dampings, x0, v0)?;
    let m = (T::lit(2.0) * v_init).sqrt();
    let mut m_edge = T::zero();
    for a in interactions_a {
        if !a.has_unbounded_primitive() {
            return Ok(None);
        }
        // The primitive is even, so solving on the positive half-line suffices.
        let p = |s: T| a.antiderivative(T::zero(), s).unwrap_or(T::nan());
        let r = if v_init > T::zero() { solve_monotone_bracketed(p, v_init, T::zero(), T::one())? } else { T::zero() };
        m_edge = m_edge.max(r.abs());
    }
    let nf = T::from_usize_lossy(n);
    let spread = T::from_usize_lossy(n - 1) * m_edge;
    let centre = (e_init.abs() + nf * m) / (nf * kappa_lower);
    // A few ulps of slack so trajectories touching the bound exactly are not flagged.
    Ok(Some((centre + spread) * (T::one() + T::tol_floor(1e-9, 64.0))))
}

/// `lemma1_bound` with `kappa_lower` taken from each damping's sampled lower bound.
pub fn lemma1_bound_sampled<T: Real>(
    dampings: &[ScalarFn<T>],
    interactions_a: &[ScalarFn<T>],
    graph: &Graph<T>,
    x0: &[T],
    v0: &[T],
) -> Result<Option<T>, FunctionError> {
    let kappa_lower =
        dampings.iter().map(|k| k.validate_gain_default().gamma_lower).fold(T::infinity(), T::min);
    lemma1_bound(dampings, interactions_a, graph, x0, v0, kappa_lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> ScalarFn<f64> {
        ScalarFn::constant(v)
    }

    #[test]
    fn conserved_first_examples() {
        assert_eq!(conserved_e_first(&vec![c(1.0); 3], &[1.0, -2.0, 4.0]).unwrap(), 3.0);
        assert!((conserved_e_first(&[c(1.0), c(2.0)], &[2.0, 2.0]).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(conserved_e_first(&[c(1.0), c(2.0)], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((conserved_p_second(&[c(1.0), c(2.0)], &[2.0, 2.0]).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn conserved_damped_examples() {
        assert_eq!(conserved_e_damped(&vec![c(1.0); 2], &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert_eq!(conserved_e_damped(&vec![c(1.0); 2], &[0.0, 0.0], &[2.0, -2.0]).unwrap(), 0.0);
        assert_eq!(conserved_e_damped(&[c(2.0), c(1.0)], &[3.0, 0.0], &[1.0, 0.0]).unwrap(), 7.0);
    }

    #[test]
    fn lyapunov_first_examples() {
        assert_eq!(lyapunov_first(&vec![c(1.0); 3], &[2.5; 3], 2.5).unwrap(), 0.0);
        assert!((lyapunov_first(&vec![c(1.0); 2], &[1.0, -1.0], 0.0).unwrap() - 1.0).abs() < 1e-15);
        let g = [ScalarFn::reciprocal_abs_shift(0.1), c(3.0)];
        assert!(lyapunov_first(&g, &[0.3, 0.2], 0.2).unwrap() > 0.0);
    }

    #[test]
    fn lyapunov_second_examples() {
        let g = Graph::<f64>::path(2);
        let a = [ScalarFn::linear(1.0)];
        assert_eq!(lyapunov_second(&vec![c(1.0); 2], &a, &g, &[0.0, 0.0], &[0.7, 0.7], 0.7).unwrap(), 0.0);
        assert!((lyapunov_second(&vec![c(1.0); 2], &a, &g, &[2.0, 0.0], &[0.7, 0.7], 0.7).unwrap() - 2.0).abs() < 1e-15);
        assert!((lyapunov_second(&vec![c(1.0); 2], &a, &g, &[0.0, 0.0], &[1.0, 0.0], 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_damped_examples() {
        let g = Graph::<f64>::path(3);
        let a = [ScalarFn::linear(1.0), ScalarFn::linear(1.0)];
        assert_eq!(lyapunov_damped(&a, &g, &[1.0; 3], &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(lyapunov_damped(&a, &g, &[1.0; 3], &[1.0, 0.0, 0.0]).unwrap(), 0.5);
        let g = Graph::<f64>::path(2);
        assert_eq!(lyapunov_damped(&[ScalarFn::linear(1.0)], &g, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn lemma1_bound_for_linear_pair() {
        // V0 = 1/2 (x1 - x2)^2 = 2, E0 = 2 + 0 = 2, M = 2, M' = 2.
        let g = Graph::<f64>::path(2);
        let b = lemma1_bound(&vec![c(1.0); 2], &[ScalarFn::linear(1.0)], &g, &[2.0, 0.0], &[0.0, 0.0], 1.0)
            .unwrap()
            .unwrap();
        // (|E0| + n M) / (n kappa) + (n - 1) M' = (2 + 4) / 2 + 2 = 5
        assert!((b - 5.0).abs() < 1e-6);
        assert!(b >= 2.0);
        let none = lemma1_bound(&vec![c(1.0); 2], &[c(1.0)], &g, &[2.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn channel_helpers() {
        let ch = MonitorChannel::new("V", vec![3.0, 2.0, 2.0, 1.0]);
        assert!(ch.is_non_increasing(1e-8));
        assert_eq!(ch.max_drift(), 2.0);
        let up = MonitorChannel::new("V", vec![1.0, 1.1]);
        assert!(!up.is_non_increasing(1e-8));
    }
}
