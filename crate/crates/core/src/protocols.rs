//! Right-hand sides of the five control laws.
//!
//! States are flat vectors laid out per kind:
//!
//! | kind | layout |
//! |---|---|
//! | first order | `[x]` |
//! | second order, damped | `[x, v]` |
//! | PI single integrator | `[z, x]` |
//! | PI double integrator | `[z, x, v]` |

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{FunctionError, GainReport, ScalarFn};
use crate::graph::{Graph, GraphError};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    FirstOrderNonlinear,
    SecondOrderNonlinear,
    SecondOrderDamped,
    PiSingle,
    PiDouble,
}

impl ProtocolKind {
    pub fn is_pi(self) -> bool {
        matches!(self, Self::PiSingle | Self::PiDouble)
    }

    pub fn has_velocity(self) -> bool {
        matches!(self, Self::SecondOrderNonlinear | Self::SecondOrderDamped | Self::PiDouble)
    }

    pub fn layout(self, n: usize) -> StateLayout {
        StateLayout { kind: self, n }
    }
}

/// Index ranges of the `x`, `v` and `z` blocks inside a flat state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub kind: ProtocolKind,
    pub n: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        self.n * (1 + usize::from(self.kind.has_velocity()) + usize::from(self.kind.is_pi()))
    }

    pub fn z(&self) -> Option<Range<usize>> {
        self.kind.is_pi().then_some(0..self.n)
    }

    pub fn x(&self) -> Range<usize> {
        let off = if self.kind.is_pi() { self.n } else { 0 };
        off..off + self.n
    }

    pub fn v(&self) -> Option<Range<usize>> {
        self.kind.has_velocity().then(|| {
            let off = self.x().end;
            off..off + self.n
        })
    }

    pub fn pack<T: Real>(&self, state: &AgentState<T>) -> Result<Vec<T>, ProtocolError> {
        let mut out = vec![T::zero(); self.dim()];
        let check = |name: &'static str, len: usize| {
            if len == self.n {
                Ok(())
            } else {
                Err(ProtocolError::Dimension { what: name, expected: self.n, got: len })
            }
        };
        check("x", state.x.len())?;
        out[self.x()].copy_from_slice(&state.x);
        match (self.v(), &state.v) {
            (Some(r), Some(v)) => {
                check("v", v.len())?;
                out[r].copy_from_slice(v);
            }
            (Some(_), None) => {}
            (None, Some(_)) => return Err(ProtocolError::Dimension { what: "v", expected: 0, got: self.n }),
            (None, None) => {}
        }
        match (self.z(), &state.z) {
            (Some(r), Some(z)) => {
                check("z", z.len())?;
                out[r].copy_from_slice(z);
            }
            (None, Some(_)) => return Err(ProtocolError::Dimension { what: "z", expected: 0, got: self.n }),
            _ => {}
        }
        Ok(out)
    }

    pub fn unpack<T: Real>(&self, flat: &[T]) -> AgentState<T> {
        AgentState {
            x: flat[self.x()].to_vec(),
            v: self.v().map(|r| flat[r].to_vec()),
            z: self.z().map(|r| flat[r].to_vec()),
        }
    }
}

/// Per-agent positions, optional velocities and optional integral states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState<T> {
    pub x: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<T>>,
}

/// Gains of the PI protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains<T> {
    /// Integral gain.
    pub a: T,
    /// Proportional gain.
    pub b: T,
    /// Absolute-position feedback.
    #[serde(default)]
    pub delta: T,
    /// Velocity damping (double integrator only).
    #[serde(default)]
    pub gamma: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("gain at vertex {vertex} fails the positivity check (lower bound {lower})")]
    InvalidGain { vertex: usize, lower: f64 },
    #[error("interaction on edge {edge} is not odd and sign-preserving")]
    InvalidInteraction { edge: usize },
    #[error("function parameters: {0}")]
    Function(#[from] FunctionError),
    #[error("disturbances are only supported by the PI protocols")]
    DisturbanceNotAllowed,
    #[error("invalid PI gains: {0}")]
    InvalidPiGains(String),
}

/// Which law to run, on which graph, with which functions and gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec<T: Real> {
    kind: ProtocolKind,
    graph: Graph<T>,
    /// `gamma_i` for the nonlinear laws, `kappa_i` for the damped law, empty for PI.
    gains: Vec<ScalarFn<T>>,
    interactions_a: Vec<ScalarFn<T>>,
    interactions_b: Vec<ScalarFn<T>>,
    pi: Option<PiGains<T>>,
    disturbance: Vec<T>,
    /// `None` means "the run's initial positions"; resolved by the simulator.
    x_anchor: Option<Vec<T>>,
}

impl<T: Real> ProtocolSpec<T> {
    pub fn first_order(graph: Graph<T>, gains: Vec<ScalarFn<T>>, a: Vec<ScalarFn<T>>) -> Result<Self, ProtocolError> {
        Self::nonlinear(ProtocolKind::FirstOrderNonlinear, graph, gains, a, Vec::new())
    }

    pub fn second_order(
        graph: Graph<T>,
        gains: Vec<ScalarFn<T>>,
        a: Vec<ScalarFn<T>>,
        b: Vec<ScalarFn<T>>,
    ) -> Result<Self, ProtocolError> {
        Self::nonlinear(ProtocolKind::SecondOrderNonlinear, graph, gains, a, b)
    }

    pub fn damped(graph: Graph<T>, dampings: Vec<ScalarFn<T>>, a: Vec<ScalarFn<T>>) -> Result<Self, ProtocolError> {
        Self::nonlinear(ProtocolKind::SecondOrderDamped, graph, dampings, a, Vec::new())
    }

    fn nonlinear(
        kind: ProtocolKind,
        graph: Graph<T>,
        gains: Vec<ScalarFn<T>>,
        a: Vec<ScalarFn<T>>,
        b: Vec<ScalarFn<T>>,
    ) -> Result<Self, ProtocolError> {
        let (n, m) = (graph.n(), graph.edge_count());
        if gains.len() != n {
            return Err(ProtocolError::Dimension { what: "gains", expected: n, got: gains.len() });
        }
        if a.len() != m {
            return Err(ProtocolError::Dimension { what: "interactions a", expected: m, got: a.len() });
        }
        if kind == ProtocolKind::SecondOrderNonlinear && b.len() != m {
            return Err(ProtocolError::Dimension { what: "interactions b", expected: m, got: b.len() });
        }
        for (vertex, g) in gains.iter().enumerate() {
            g.check()?;
            let GainReport { gamma_lower, ok, .. } = g.validate_gain_default();
            if !ok {
                return Err(ProtocolError::InvalidGain { vertex, lower: gamma_lower.to_f64_lossy() });
            }
        }
        for (edge, f) in a.iter().chain(&b).enumerate() {
            f.check()?;
            if !f.validate_interaction_default().ok() {
                return Err(ProtocolError::InvalidInteraction { edge: edge % m.max(1) });
            }
        }
        Ok(Self {
            kind,
            graph,
            gains,
            interactions_a: a,
            interactions_b: b,
            pi: None,
            disturbance: vec![T::zero(); n],
            x_anchor: None,
        })
    }

    pub fn pi_single(graph: Graph<T>, a: T, b: T, delta: T) -> Result<Self, ProtocolError> {
        Self::pi(ProtocolKind::PiSingle, graph, PiGains { a, b, delta, gamma: T::zero() })
    }

    pub fn pi_double(graph: Graph<T>, a: T, b: T, gamma: T, delta: T) -> Result<Self, ProtocolError> {
        Self::pi(ProtocolKind::PiDouble, graph, PiGains { a, b, delta, gamma })
    }

    /// `a = 0` (no integral action) is accepted so the proportional-only regime can be run.
    fn pi(kind: ProtocolKind, graph: Graph<T>, gains: PiGains<T>) -> Result<Self, ProtocolError> {
        let PiGains { a, b, delta, gamma } = gains;
        let finite = [a, b, delta, gamma].iter().all(|v| v.is_finite());
        if !finite || a < T::zero() || !(b > T::zero()) || delta < T::zero() {
            return Err(ProtocolError::InvalidPiGains(format!("need a >= 0, b > 0, delta >= 0 (got a={a}, b={b}, delta={delta})")));
        }
        if kind == ProtocolKind::PiDouble && !(gamma > T::zero()) {
            return Err(ProtocolError::InvalidPiGains(format!("need gamma > 0 (got {gamma})")));
        }
        let n = graph.n();
        Ok(Self {
            kind,
            graph,
            gains: Vec::new(),
            interactions_a: Vec::new(),
            interactions_b: Vec::new(),
            pi: Some(gains),
            disturbance: vec![T::zero(); n],
            x_anchor: None,
        })
    }

    pub fn with_disturbance(mut self, d: Vec<T>) -> Result<Self, ProtocolError> {
        if d.len() != self.graph.n() {
            return Err(ProtocolError::Dimension { what: "disturbance", expected: self.graph.n(), got: d.len() });
        }
        if !self.kind.is_pi() && d.iter().any(|v| *v != T::zero()) {
            return Err(ProtocolError::DisturbanceNotAllowed);
        }
        self.disturbance = d;
        Ok(self)
    }

    pub fn with_anchor(mut self, anchor: Vec<T>) -> Result<Self, ProtocolError> {
        if anchor.len() != self.graph.n() {
            return Err(ProtocolError::Dimension { what: "x_anchor", expected: self.graph.n(), got: anchor.len() });
        }
        self.x_anchor = Some(anchor);
        Ok(self)
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn layout(&self) -> StateLayout {
        self.kind.layout(self.n())
    }

    pub fn gains(&self) -> &[ScalarFn<T>] {
        &self.gains
    }

    pub fn interactions_a(&self) -> &[ScalarFn<T>] {
        &self.interactions_a
    }

    pub fn interactions_b(&self) -> &[ScalarFn<T>] {
        &self.interactions_b
    }

    pub fn pi_gains(&self) -> Option<PiGains<T>> {
        self.pi
    }

    pub fn disturbance(&self) -> &[T] {
        &self.disturbance
    }

    pub fn x_anchor(&self) -> Option<&[T]> {
        self.x_anchor.as_deref()
    }

    /// `out_i = sum_j f_ij(y_i - y_j)`, each edge evaluated once and applied with
    /// opposite signs at its endpoints.
    fn edge_sum(&self, fns: &[ScalarFn<T>], y: &[T], out: &mut [T]) {
        for (k, &(i, j)) in self.graph.edges().iter().enumerate() {
            let flow = fns[k].eval(y[i] - y[j]);
            out[i] += flow;
            out[j] -= flow;
        }
    }

    /// `out += w * L_w y` with the weighted Laplacian.
    fn add_laplacian(&self, w: T, y: &[T], out: &mut [T]) {
        if w == T::zero() {
            return;
        }
        for (k, &(i, j)) in self.graph.edges().iter().enumerate() {
            let flow = w * self.graph.weight(k) * (y[i] - y[j]);
            out[i] += flow;
            out[j] -= flow;
        }
    }

    /// Writes the time derivative of the flat `state` into `out`.
    pub fn rhs(&self, state: &[T], out: &mut [T]) {
        let n = self.n();
        let lay = self.layout();
        debug_assert_eq!(state.len(), lay.dim());
        out.fill(T::zero());
        let x = &state[lay.x()];
        match self.kind {
            ProtocolKind::FirstOrderNonlinear => {
                let dx = &mut out[lay.x()];
                self.edge_sum(&self.interactions_a, x, dx);
                for i in 0..n {
                    dx[i] = -self.gains[i].eval(x[i]) * dx[i];
                }
            }
            ProtocolKind::SecondOrderNonlinear => {
                let v = &state[lay.v().expect("velocity block")];
                let (dx, dv) = out.split_at_mut(n);
                dx.copy_from_slice(v);
                self.edge_sum(&self.interactions_a, x, dv);
                self.edge_sum(&self.interactions_b, v, dv);
                for i in 0..n {
                    dv[i] = -self.gains[i].eval(v[i]) * dv[i];
                }
            }
            ProtocolKind::SecondOrderDamped => {
                let v = &state[lay.v().expect("velocity block")];
                let (dx, dv) = out.split_at_mut(n);
                dx.copy_from_slice(v);
                self.edge_sum(&self.interactions_a, x, dv);
                for i in 0..n {
                    dv[i] = -self.gains[i].eval(x[i]) * v[i] - dv[i];
                }
            }
            ProtocolKind::PiSingle => {
                let pi = self.pi.expect("PI gains");
                let z = &state[0..n];
                let (dz, dx) = out.split_at_mut(n);
                dz.copy_from_slice(x);
                self.pi_force(pi, z, x, dx);
            }
            ProtocolKind::PiDouble => {
                let pi = self.pi.expect("PI gains");
                let z = &state[0..n];
                let v = &state[2 * n..3 * n];
                let (dz, rest) = out.split_at_mut(n);
                let (dx, dv) = rest.split_at_mut(n);
                dz.copy_from_slice(x);
                dx.copy_from_slice(v);
                self.pi_force(pi, z, x, dv);
                for i in 0..n {
                    dv[i] -= pi.gamma * v[i];
                }
            }
        }
    }

    /// `d - b L x - a L z - delta (x - anchor)` written into `out`.
    fn pi_force(&self, pi: PiGains<T>, z: &[T], x: &[T], out: &mut [T]) {
        let mut lap = vec![T::zero(); x.len()];
        self.add_laplacian(pi.b, x, &mut lap);
        self.add_laplacian(pi.a, z, &mut lap);
        for i in 0..x.len() {
            let anchor = self.x_anchor.as_ref().map_or(T::zero(), |a| a[i]);
            out[i] = self.disturbance[i] - lap[i] - pi.delta * (x[i] - anchor);
        }
    }

    pub fn derivative(&self, state: &AgentState<T>) -> Result<AgentState<T>, ProtocolError> {
        let lay = self.layout();
        let mut flat = lay.pack(state)?;
        if lay.v().is_some() && state.v.is_none() {
            return Err(ProtocolError::Dimension { what: "v", expected: lay.n, got: 0 });
        }
        if lay.z().is_some() && state.z.is_none() {
            flat[lay.z().expect("z block")].fill(T::zero());
        }
        let mut out = vec![T::zero(); flat.len()];
        self.rhs(&flat, &mut out);
        Ok(lay.unpack(&out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn two_agents_linear() -> ProtocolSpec<f64> {
        let g = Graph::path(2);
        ProtocolSpec::first_order(g, vec![ScalarFn::constant(1.0); 2], vec![ScalarFn::linear(1.0)]).unwrap()
    }

    #[test]
    fn first_order_hand_evaluation() {
        let spec = two_agents_linear();
        let mut out = vec![0.0; 2];
        spec.rhs(&[1.0, 0.0], &mut out);
        assert_eq!(out, vec![-1.0, 1.0]);
        spec.rhs(&[4.0, 4.0], &mut out);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn second_order_hand_evaluation() {
        let spec = ProtocolSpec::second_order(
            Graph::path(2),
            vec![ScalarFn::constant(1.0); 2],
            vec![ScalarFn::linear(1.0)],
            vec![ScalarFn::linear(1.0)],
        )
        .unwrap();
        let d = spec.derivative(&AgentState { x: vec![1.0, 0.0], v: Some(vec![0.0, 0.0]), z: None }).unwrap();
        assert_eq!(d.v.unwrap(), vec![-1.0, 1.0]);
        let d = spec.derivative(&AgentState { x: vec![2.0, 2.0], v: Some(vec![3.0, 3.0]), z: None }).unwrap();
        assert_eq!(d.x, vec![3.0, 3.0]);
        assert_eq!(d.v.unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn damped_hand_evaluation() {
        let spec =
            ProtocolSpec::damped(Graph::path(2), vec![ScalarFn::constant(1.0); 2], vec![ScalarFn::linear(1.0)]).unwrap();
        let d = spec.derivative(&AgentState { x: vec![1.0, 0.0], v: Some(vec![1.0, 1.0]), z: None }).unwrap();
        assert_eq!(d.v.unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn satellite_gain_keeps_acceleration_bounded() {
        let g = Graph::new(5, vec![(0, 1), (2, 1), (2, 3), (2, 4)]).unwrap();
        let a = ScalarFn::exp_sgn(20.0);
        let b = ScalarFn::exp_sgn(10.0);
        let spec = ProtocolSpec::second_order(
            g,
            vec![ScalarFn::reciprocal_abs_shift(0.1); 5],
            vec![a; 4],
            vec![b; 4],
        )
        .unwrap();
        let mut out = vec![0.0f64; 10];
        let state = [-4.0, 0.0, 3.0, -1.0, -5.0, 0.0, -7.0, 3.0, -1.0, 0.0];
        spec.rhs(&state, &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nonlinear_kinds_reject_disturbance() {
        assert_eq!(two_agents_linear().with_disturbance(vec![1.0, 0.0]), Err(ProtocolError::DisturbanceNotAllowed));
        assert!(two_agents_linear().with_disturbance(vec![0.0, 0.0]).is_ok());
    }

    #[test]
    fn invalid_functions_are_rejected() {
        let g = Graph::path(2);
        let r = ProtocolSpec::first_order(g.clone(), vec![ScalarFn::constant(-1.0); 2], vec![ScalarFn::linear(1.0)]);
        assert!(matches!(r, Err(ProtocolError::InvalidGain { .. })));
        let r = ProtocolSpec::first_order(g.clone(), vec![ScalarFn::constant(1.0); 2], vec![ScalarFn::constant(1.0)]);
        assert!(matches!(r, Err(ProtocolError::InvalidInteraction { .. })));
        let r = ProtocolSpec::first_order(g, vec![ScalarFn::constant(1.0); 3], vec![ScalarFn::linear(1.0)]);
        assert!(matches!(r, Err(ProtocolError::Dimension { .. })));
    }

    #[test]
    fn pi_double_matches_block_matrix() {
        let g = Graph::<f64>::path(5);
        let (a, b, gamma) = (1.0, 5.0, 3.0);
        let d = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let spec = ProtocolSpec::pi_double(g.clone(), a, b, gamma, 0.0).unwrap().with_disturbance(d.clone()).unwrap();
        let l = g.laplacian(false);
        let n = 5;
        let mut big = Matrix::zeros(3 * n, 3 * n);
        big.set_block(0, n, &Matrix::identity(n));
        big.set_block(n, 2 * n, &Matrix::identity(n));
        big.set_block(2 * n, 0, &l.scale(-a));
        big.set_block(2 * n, n, &l.scale(-b));
        big.set_block(2 * n, 2 * n, &Matrix::identity(n).scale(-gamma));
        let state: Vec<f64> = (0..15).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let mut out = vec![0.0; 15];
        spec.rhs(&state, &mut out);
        let mut expected = big.matvec(&state);
        for i in 0..n {
            expected[2 * n + i] += d[i];
        }
        for (o, e) in out.iter().zip(&expected) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn robots_initial_acceleration() {
        let g = Graph::<f64>::path(5);
        let spec = ProtocolSpec::pi_double(g.clone(), 1.0, 5.0, 3.0, 0.0)
            .unwrap()
            .with_disturbance(vec![1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let x0 = [5.0, -6.0, 8.0, 4.0, 5.0];
        let d = spec.derivative(&AgentState { x: x0.to_vec(), v: Some(vec![0.0; 5]), z: Some(vec![0.0; 5]) }).unwrap();
        // d - 5 L x0 with L x0 = (11, -25, 18, -5, 1)
        assert_eq!(d.v.unwrap(), vec![1.0 - 55.0, 125.0, -90.0, 25.0, -5.0]);
    }

    #[test]
    fn pi_single_drift_equals_disturbance_sum() {
        let g = Graph::<f64>::complete(3);
        let spec = ProtocolSpec::pi_single(g, 2.0, 1.0, 0.0).unwrap().with_disturbance(vec![1.0, 2.0, -0.5]).unwrap();
        let mut out = vec![0.0; 6];
        spec.rhs(&[0.3, -0.1, 0.9, 1.0, 2.0, -4.0], &mut out);
        let sum: f64 = out[3..].iter().sum();
        assert!((sum - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pi_gain_bounds() {
        let g = Graph::<f64>::path(2);
        assert!(ProtocolSpec::pi_single(g.clone(), 0.0, 1.0, 0.0).is_ok());
        assert!(ProtocolSpec::pi_single(g.clone(), 1.0, 0.0, 0.0).is_err());
        assert!(ProtocolSpec::pi_double(g.clone(), 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(ProtocolSpec::pi_double(g, 1.0, 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn layout_ranges() {
        let l = ProtocolKind::PiDouble.layout(4);
        assert_eq!((l.dim(), l.z(), l.x(), l.v()), (12, Some(0..4), 4..8, Some(8..12)));
        let l = ProtocolKind::SecondOrderDamped.layout(3);
        assert_eq!((l.dim(), l.z(), l.x(), l.v()), (6, None, 0..3, Some(3..6)));
    }
}
