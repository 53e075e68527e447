//! Runs a protocol from initial conditions and attaches invariant, Lyapunov, diameter and
//! mean channels plus a convergence verdict.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{
    predict_damped_position, predict_first_order, predict_second_order_velocity, EquilibriumPrediction,
};
use crate::invariants::{
    conserved_e_damped, conserved_e_first, conserved_p_second, lyapunov_damped, lyapunov_first, lyapunov_second,
    MonitorChannel,
};
use crate::numerics::{
    integrate_with, AdaptiveOptions, Integrator, Monitor, NumericsError, OdeOptions, OdeStatus, StepControl,
    DEFAULT_DIVERGENCE_CAP, DEFAULT_RECORD_EVERY, DEFAULT_STEP,
};
use crate::protocols::{AgentState, ProtocolError, ProtocolKind, ProtocolSpec, StateLayout};
use crate::Real;

pub const DEFAULT_CONV_TOL: f64 = 1e-6;
/// Consecutive sub-tolerance samples needed to call a run converged.
pub const DEFAULT_CONV_WINDOW: usize = 100;

/// Fixed order of the monitor columns in trajectory output.
pub const CHANNEL_NAMES: [&str; 5] = ["E", "p", "V", "diam", "mean"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvMetric {
    /// Positions only.
    #[default]
    X,
    /// Positions and velocities.
    XAndV,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorChoice {
    #[default]
    Rk4,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub t_end: f64,
    pub h: f64,
    pub record_every: usize,
    pub conv_tol: f64,
    pub conv_window: usize,
    pub conv_metric: ConvMetric,
    pub integrator: IntegratorChoice,
    pub divergence_cap: f64,
    /// End the run as soon as the convergence window is filled.
    pub stop_on_convergence: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_end: 100.0,
            h: DEFAULT_STEP,
            record_every: DEFAULT_RECORD_EVERY,
            conv_tol: DEFAULT_CONV_TOL,
            conv_window: DEFAULT_CONV_WINDOW,
            conv_metric: ConvMetric::X,
            integrator: IntegratorChoice::Rk4,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
            stop_on_convergence: false,
        }
    }
}

impl RunConfig {
    pub fn new(t_end: f64, h: f64, record_every: usize) -> Self {
        Self { t_end, h, record_every, ..Self::default() }
    }

    fn validate(&self) -> Result<(), SimulateError> {
        let ok = self.t_end > 0.0
            && self.h > 0.0
            && self.record_every > 0
            && self.conv_tol > 0.0
            && self.conv_window > 0
            && self.divergence_cap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimulateError::Config(format!("all of t_end, h, record_every, conv_tol, conv_window must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus<T> {
    Running,
    /// The diameter stayed below tolerance from `t` to the end of the run.
    Converged { t: T },
    TimedOut,
    Diverged { t: T },
    Failed { error: String },
}

impl<T> RunStatus<T> {
    pub fn is_converged(&self) -> bool {
        matches!(self, Self::Converged { .. })
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, Self::Diverged { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory<T> {
    pub kind: ProtocolKind,
    pub n: usize,
    pub times: Vec<T>,
    pub states: Vec<AgentState<T>>,
    pub channels: Vec<MonitorChannel<T>>,
    pub status: RunStatus<T>,
    /// `x*` (first order, damped) or `v*` (second order) used by the Lyapunov channel.
    pub prediction: Option<EquilibriumPrediction<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn channel(&self, name: &str) -> Option<&MonitorChannel<T>> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn final_state(&self) -> &AgentState<T> {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    pub fn final_time(&self) -> T {
        *self.times.last().expect("trajectory has at least the initial sample")
    }

    /// Trajectory CSV: `t,x1..xn[,v1..vn][,z1..zn],E,p,V,diam,mean`; absent channels are empty.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.n;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        if self.kind.has_velocity() {
            header.extend((1..=n).map(|i| format!("v{i}")));
        }
        if self.kind.is_pi() {
            header.extend((1..=n).map(|i| format!("z{i}")));
        }
        header.extend(CHANNEL_NAMES.iter().map(|s| s.to_string()));
        writeln!(out, "{}", header.join(","))?;
        let chans: Vec<Option<&MonitorChannel<T>>> = CHANNEL_NAMES.iter().map(|c| self.channel(c)).collect();
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.x.iter().map(T::to_string));
            if let Some(v) = &s.v {
                row.extend(v.iter().map(T::to_string));
            }
            if let Some(z) = &s.z {
                row.extend(z.iter().map(T::to_string));
            }
            row.extend(chans.iter().map(|c| c.map_or(String::new(), |c| c.samples[k].to_string())));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `max_i x_i - min_i x_i`.
pub fn disagreement_diameter<T: Real>(x: &[T]) -> T {
    let (lo, hi) = x.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if x.is_empty() {
        T::zero()
    } else {
        hi - lo
    }
}

fn mean<T: Real>(x: &[T]) -> T {
    x.iter().copied().sum::<T>() / T::from_usize_lossy(x.len().max(1))
}

/// Integrates `spec` from `x0` (and `v0`, zero if omitted, for second-order kinds).
///
/// PI kinds start with `z = 0`; a missing anchor is taken to be `x0`.
pub fn run<T: Real>(
    spec: &ProtocolSpec<T>,
    x0: &[T],
    v0: Option<&[T]>,
    config: &RunConfig,
) -> Result<Trajectory<T>, SimulateError> {
    config.validate()?;
    let n = spec.n();
    let kind = spec.kind();
    let lay = spec.layout();
    if x0.len() != n {
        return Err(ProtocolError::Dimension { what: "x0", expected: n, got: x0.len() }.into());
    }
    if let Some(v) = v0 {
        if v.len() != n {
            return Err(ProtocolError::Dimension { what: "v0", expected: n, got: v.len() }.into());
        }
    }
    let v_init: Vec<T> = v0.map_or_else(|| vec![T::zero(); n], <[T]>::to_vec);
    let spec = if kind.is_pi() && spec.x_anchor().is_none() {
        spec.clone().with_anchor(x0.to_vec())?
    } else {
        spec.clone()
    };
    let initial = AgentState {
        x: x0.to_vec(),
        v: kind.has_velocity().then(|| v_init.clone()),
        z: kind.is_pi().then(|| vec![T::zero(); n]),
    };
    let flat0 = lay.pack(&initial)?;

    let prediction = match kind {
        ProtocolKind::FirstOrderNonlinear => predict_first_order(spec.gains(), x0).ok(),
        ProtocolKind::SecondOrderNonlinear => predict_second_order_velocity(spec.gains(), &v_init).ok(),
        ProtocolKind::SecondOrderDamped => predict_damped_position(spec.gains(), x0, &v_init).ok(),
        _ => None,
    };

    let (names, monitors) = build_monitors(&spec, lay, prediction.map(|p| p.value));
    let integrator = match config.integrator {
        IntegratorChoice::Rk4 => Integrator::Rk4,
        IntegratorChoice::Adaptive => Integrator::Adaptive(AdaptiveOptions::default()),
    };
    let opts = OdeOptions {
        t_end: T::lit(config.t_end),
        h: T::lit(config.h),
        record_every: config.record_every,
        divergence_cap: T::lit(config.divergence_cap),
        integrator,
    };

    let tol = T::lit(config.conv_tol);
    let use_v = config.conv_metric == ConvMetric::XAndV && kind.has_velocity();
    let below = |flat: &[T]| {
        let x_ok = disagreement_diameter(&flat[lay.x()]) < tol;
        let v_ok = !use_v || disagreement_diameter(&flat[lay.v().expect("velocity block")]) < tol;
        x_ok && v_ok
    };
    let mut streak = 0usize;
    let observer = |_t: T, flat: &[T]| {
        streak = if below(flat) { streak + 1 } else { 0 };
        if config.stop_on_convergence && streak >= config.conv_window {
            StepControl::Stop
        } else {
            StepControl::Continue
        }
    };
    let rhs = |_t: T, y: &[T], out: &mut [T]| spec.rhs(y, out);
    let sol = integrate_with(rhs, &flat0, &opts, &monitors, observer)?;

    // Length of the sub-tolerance run ending at the last sample.
    let tail = sol.states.iter().rev().take_while(|s| below(s)).count();
    let status = match &sol.status {
        OdeStatus::Diverged { t } => RunStatus::Diverged { t: *t },
        OdeStatus::Failed { error } => RunStatus::Failed { error: error.to_string() },
        OdeStatus::Completed | OdeStatus::Stopped { .. } => {
            if tail >= config.conv_window.min(sol.states.len()) && tail > 0 {
                RunStatus::Converged { t: sol.times[sol.times.len() - tail] }
            } else {
                RunStatus::TimedOut
            }
        }
    };
    let channels = names.into_iter().zip(sol.channels).map(|(name, samples)| MonitorChannel::new(name, samples)).collect();
    Ok(Trajectory {
        kind,
        n,
        times: sol.times,
        states: sol.states.iter().map(|s| lay.unpack(s)).collect(),
        channels,
        status,
        prediction,
    })
}

fn or_nan<T: Real, E>(r: Result<T, E>) -> T {
    r.unwrap_or_else(|_| T::nan())
}

fn build_monitors<'a, T: Real>(
    spec: &'a ProtocolSpec<T>,
    lay: StateLayout,
    star: Option<T>,
) -> (Vec<&'static str>, Vec<Monitor<'a, T>>) {
    let xr = lay.x();
    let vr = lay.v();
    let mut names = Vec::new();
    let mut monitors: Vec<Monitor<'a, T>> = Vec::new();
    match spec.kind() {
        ProtocolKind::FirstOrderNonlinear => {
            let g = spec.gains();
            let xr2 = xr.clone();
            names.push("E");
            monitors.push(Box::new(move |_, y| or_nan(conserved_e_first(g, &y[xr2.clone()]))));
            if let Some(x_star) = star {
                let xr2 = xr.clone();
                names.push("V");
                monitors.push(Box::new(move |_, y| or_nan(lyapunov_first(g, &y[xr2.clone()], x_star))));
            }
        }
        ProtocolKind::SecondOrderNonlinear => {
            let g = spec.gains();
            let vr = vr.clone().expect("velocity block");
            let vr2 = vr.clone();
            names.push("p");
            monitors.push(Box::new(move |_, y| or_nan(conserved_p_second(g, &y[vr2.clone()]))));
            if let Some(v_star) = star {
                let (a, graph, xr2) = (spec.interactions_a(), spec.graph(), xr.clone());
                names.push("V");
                monitors.push(Box::new(move |_, y| {
                    or_nan(lyapunov_second(g, a, graph, &y[xr2.clone()], &y[vr.clone()], v_star))
                }));
            }
        }
        ProtocolKind::SecondOrderDamped => {
            let k = spec.gains();
            let vr = vr.clone().expect("velocity block");
            let (xr2, vr2) = (xr.clone(), vr.clone());
            names.push("E");
            monitors.push(Box::new(move |_, y| or_nan(conserved_e_damped(k, &y[xr2.clone()], &y[vr2.clone()]))));
            let (a, graph, xr2) = (spec.interactions_a(), spec.graph(), xr.clone());
            names.push("V");
            monitors.push(Box::new(move |_, y| or_nan(lyapunov_damped(a, graph, &y[xr2.clone()], &y[vr.clone()]))));
        }
        ProtocolKind::PiSingle | ProtocolKind::PiDouble => {}
    }
    let xr2 = xr.clone();
    names.push("diam");
    monitors.push(Box::new(move |_, y| disagreement_diameter(&y[xr2.clone()])));
    names.push("mean");
    monitors.push(Box::new(move |_, y| mean(&y[xr.clone()])));
    (names, monitors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::ScalarFn;
    use crate::graph::Graph;

    #[test]
    fn diameter_examples() {
        assert_eq!(disagreement_diameter(&[3.0; 4]), 0.0);
        assert_eq!(disagreement_diameter(&[1.0, -1.0]), 2.0);
        assert_eq!(disagreement_diameter(&[5.0, -6.0, 8.0, 4.0, 5.0]), 14.0);
    }

    fn linear_first_order(n: usize) -> ProtocolSpec<f64> {
        let g = Graph::path(n);
        let m = g.edge_count();
        ProtocolSpec::first_order(g, vec![ScalarFn::constant(1.0); n], vec![ScalarFn::linear(1.0); m]).unwrap()
    }

    #[test]
    fn consensus_start_converges_at_zero() {
        let spec = linear_first_order(4);
        let tr = run(&spec, &[2.5; 4], None, &RunConfig::new(20.0, 0.01, 10)).unwrap();
        assert_eq!(tr.status, RunStatus::Converged { t: 0.0 });
        assert!(tr.states.iter().all(|s| s.x.iter().all(|&x| x == 2.5)));
    }

    #[test]
    fn path_reaches_average_with_channels() {
        let spec = linear_first_order(3);
        let tr = run(&spec, &[0.0, 1.0, 5.0], None, &RunConfig::new(40.0, 0.01, 10)).unwrap();
        assert!(tr.status.is_converged(), "{:?}", tr.status);
        for x in &tr.final_state().x {
            assert!((x - 2.0).abs() < 1e-6);
        }
        let e = tr.channel("E").unwrap();
        assert!(e.max_drift() < 1e-10);
        assert!(tr.channel("V").unwrap().is_non_increasing(1e-8));
        assert_eq!(tr.channel("diam").unwrap().samples.len(), tr.times.len());
        assert!(tr.channel("p").is_none());
    }

    #[test]
    fn pi_double_unstable_diverges() {
        let spec = ProtocolSpec::pi_double(Graph::path(5), 20.0, 5.0, 3.0, 0.0).unwrap();
        let tr = run(&spec, &[5.0, -6.0, 8.0, 4.0, 5.0], None, &RunConfig::new(400.0, 0.01, 10)).unwrap();
        assert!(tr.status.is_diverged(), "{:?}", tr.status);
    }

    #[test]
    fn csv_header_layout() {
        let spec = ProtocolSpec::pi_double(Graph::path(2), 1.0, 5.0, 3.0, 0.0).unwrap();
        let tr = run(&spec, &[1.0, 0.0], None, &RunConfig::new(1.0, 0.1, 5)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,v1,v2,z1,z2,E,p,V,diam,mean");
        assert_eq!(lines.count(), tr.times.len());
    }

    #[test]
    fn dimension_errors() {
        let spec = linear_first_order(3);
        assert!(matches!(
            run(&spec, &[1.0, 2.0], None, &RunConfig::default()),
            Err(SimulateError::Protocol(ProtocolError::Dimension { .. }))
        ));
        let bad = RunConfig { h: 0.0, ..RunConfig::default() };
        assert!(matches!(run(&spec, &[1.0, 2.0, 3.0], None, &bad), Err(SimulateError::Config(_))));
    }

    #[test]
    fn deterministic() {
        let spec = linear_first_order(4);
        let cfg = RunConfig::new(5.0, 0.01, 7);
        let a = run(&spec, &[1.0, -2.0, 0.5, 4.0], None, &cfg).unwrap();
        let b = run(&spec, &[1.0, -2.0, 0.5, 4.0], None, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
