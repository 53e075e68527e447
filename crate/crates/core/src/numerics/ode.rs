//! Explicit ODE integration: classic fixed-step RK4 and an adaptive Dormand–Prince 5(4)
//! pair for stiff-ish transients. Both record samples on the same uniform grid.

use super::NumericsError;
use crate::Real;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_RECORD_EVERY: usize = 100;
pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e9;

/// Error-controlled stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h_min: 1e-14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    Rk4,
    Adaptive(AdaptiveOptions),
}

/// Horizon, step and sampling. For the adaptive integrator `h` is the initial step and
/// `h * record_every` is still the sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions<T> {
    pub t_end: T,
    pub h: T,
    pub record_every: usize,
    pub divergence_cap: T,
    pub integrator: Integrator,
}

impl<T: Real> OdeOptions<T> {
    pub fn rk4(t_end: T, h: T) -> Self {
        Self {
            t_end,
            h,
            record_every: DEFAULT_RECORD_EVERY,
            divergence_cap: T::lit(DEFAULT_DIVERGENCE_CAP),
            integrator: Integrator::Rk4,
        }
    }

    pub fn adaptive(t_end: T, h: T) -> Self {
        Self { integrator: Integrator::Adaptive(AdaptiveOptions::default()), ..Self::rk4(t_end, h) }
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if !(self.h > T::zero()) || !self.h.is_finite() {
            return Err(NumericsError::InvalidParameter(format!("step h = {} must be positive", self.h)));
        }
        if !(self.t_end >= T::zero()) || !self.t_end.is_finite() {
            return Err(NumericsError::InvalidParameter(format!("t_end = {} must be non-negative", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(NumericsError::InvalidParameter("record_every must be at least 1".into()));
        }
        if !(self.divergence_cap > T::zero()) {
            return Err(NumericsError::InvalidParameter("divergence cap must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar channel evaluated at every recorded sample.
pub type Monitor<'a, T> = Box<dyn Fn(T, &[T]) -> T + Send + Sync + 'a>;

/// Returned by the sample observer to keep going or stop early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeStatus<T> {
    Completed,
    /// The observer asked to stop at this sample time.
    Stopped { t: T },
    /// `||x||_inf` exceeded the cap at this time.
    Diverged { t: T },
    Failed { error: NumericsError },
}

#[derive(Debug, Clone)]
pub struct OdeSolution<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    /// `channels[k][s]` is monitor `k` at sample `s`.
    pub channels: Vec<Vec<T>>,
    pub status: OdeStatus<T>,
    pub steps: usize,
}

impl<T: Real> OdeSolution<T> {
    pub fn final_state(&self) -> &[T] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_time(&self) -> T {
        self.times.last().copied().unwrap_or(T::zero())
    }
}

/// RK4 run that turns a non-finite right-hand side into an error.
pub fn integrate_ode<T: Real>(
    rhs: impl FnMut(T, &[T], &mut [T]),
    x0: &[T],
    opts: &OdeOptions<T>,
    monitors: &[Monitor<'_, T>],
) -> Result<OdeSolution<T>, NumericsError> {
    let sol = integrate_with(rhs, x0, opts, monitors, |_, _| StepControl::Continue)?;
    match &sol.status {
        OdeStatus::Failed { error } => Err(error.clone()),
        _ => Ok(sol),
    }
}

/// Adaptive run with default tolerances.
pub fn integrate_adaptive<T: Real>(
    rhs: impl FnMut(T, &[T], &mut [T]),
    x0: &[T],
    t_end: T,
    h0: T,
    monitors: &[Monitor<'_, T>],
) -> Result<OdeSolution<T>, NumericsError> {
    integrate_ode(rhs, x0, &OdeOptions::adaptive(t_end, h0), monitors)
}

/// General driver. `observer` sees every recorded sample and may stop the run. Numerical
/// failures end the run with [`OdeStatus::Failed`] and keep the samples gathered so far;
/// only invalid options are returned as `Err`.
pub fn integrate_with<T: Real>(
    mut rhs: impl FnMut(T, &[T], &mut [T]),
    x0: &[T],
    opts: &OdeOptions<T>,
    monitors: &[Monitor<'_, T>],
    mut observer: impl FnMut(T, &[T]) -> StepControl,
) -> Result<OdeSolution<T>, NumericsError> {
    opts.validate()?;
    let mut sol = OdeSolution {
        times: Vec::new(),
        states: Vec::new(),
        channels: vec![Vec::new(); monitors.len()],
        status: OdeStatus::Completed,
        steps: 0,
    };
    let mut record = |sol: &mut OdeSolution<T>, t: T, x: &[T]| -> StepControl {
        sol.times.push(t);
        sol.states.push(x.to_vec());
        for (ch, m) in sol.channels.iter_mut().zip(monitors) {
            ch.push(m(t, x));
        }
        observer(t, x)
    };
    if x0.iter().any(|v| !v.is_finite()) {
        sol.status = OdeStatus::Failed { error: NumericsError::OdeNonFinite { t_last_valid: 0.0 } };
        return Ok(sol);
    }
    if record(&mut sol, T::zero(), x0) == StepControl::Stop {
        sol.status = OdeStatus::Stopped { t: T::zero() };
        return Ok(sol);
    }
    if norm_inf(x0) > opts.divergence_cap {
        sol.status = OdeStatus::Diverged { t: T::zero() };
        return Ok(sol);
    }

    let sample_dt = opts.h * T::from_usize_lossy(opts.record_every);
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut ws = Workspace::new(n);

    match opts.integrator {
        Integrator::Rk4 => {
            let total_steps = step_count(opts.t_end, opts.h);
            let mut t = T::zero();
            for k in 1..=total_steps {
                let t_next = if k == total_steps { opts.t_end } else { opts.h * T::from_usize_lossy(k) };
                let h = t_next - t;
                if h <= T::zero() {
                    continue;
                }
                if let Err(error) = rk4_step(&mut rhs, t, &mut x, h, &mut ws) {
                    sol.status = OdeStatus::Failed { error: with_time(error, t) };
                    return Ok(sol);
                }
                t = t_next;
                sol.steps += 1;
                let diverged = norm_inf(&x) > opts.divergence_cap;
                if diverged || k % opts.record_every == 0 || k == total_steps {
                    let control = record(&mut sol, t, &x);
                    if diverged {
                        sol.status = OdeStatus::Diverged { t };
                        return Ok(sol);
                    }
                    if control == StepControl::Stop {
                        sol.status = OdeStatus::Stopped { t };
                        return Ok(sol);
                    }
                }
            }
        }
        Integrator::Adaptive(aopts) => {
            let total_samples = step_count(opts.t_end, sample_dt);
            let mut t = T::zero();
            let mut h = opts.h;
            let h_min = T::lit(aopts.h_min);
            rhs(t, &x, &mut ws.k[0]);
            if ws.k[0].iter().any(|v| !v.is_finite()) {
                sol.status = OdeStatus::Failed { error: NumericsError::OdeNonFinite { t_last_valid: 0.0 } };
                return Ok(sol);
            }
            for s in 1..=total_samples {
                let t_sample = if s == total_samples { opts.t_end } else { sample_dt * T::from_usize_lossy(s) };
                while t < t_sample {
                    let remaining = t_sample - t;
                    let last = h >= remaining;
                    let step = if last { remaining } else { h };
                    // A trial stage that overflows is a rejected step, not a failure.
                    let trial = match dopri_step(&mut rhs, t, &x, step, &aopts, &mut ws) {
                        Err(NumericsError::OdeNonFinite { .. }) => Ok(T::infinity()),
                        other => other,
                    };
                    match trial {
                        Err(error) => {
                            sol.status = OdeStatus::Failed { error: with_time(error, t) };
                            return Ok(sol);
                        }
                        Ok(err) => {
                            let factor = if err == T::zero() {
                                T::lit(5.0)
                            } else {
                                (T::lit(0.9) * err.powf(T::lit(-0.2))).min(T::lit(5.0)).max(T::lit(0.2))
                            };
                            if err <= T::one() {
                                t = if last { t_sample } else { t + step };
                                x.copy_from_slice(&ws.y_new);
                                ws.k.swap(0, 6);
                                sol.steps += 1;
                                // Do not let the clipped last step shrink the controller's step.
                                h = if last { h.max(step * factor) } else { step * factor };
                                if norm_inf(&x) > opts.divergence_cap {
                                    record(&mut sol, t, &x);
                                    sol.status = OdeStatus::Diverged { t };
                                    return Ok(sol);
                                }
                            } else {
                                h = step * factor;
                                if h < h_min * (T::one() + t.abs()) {
                                    sol.status = OdeStatus::Failed {
                                        error: NumericsError::StepUnderflow { t: t.to_f64_lossy() },
                                    };
                                    return Ok(sol);
                                }
                            }
                        }
                    }
                }
                if record(&mut sol, t, &x) == StepControl::Stop {
                    sol.status = OdeStatus::Stopped { t };
                    return Ok(sol);
                }
            }
        }
    }
    Ok(sol)
}

fn step_count<T: Real>(t_end: T, h: T) -> usize {
    let ratio = (t_end / h).to_f64_lossy();
    let rounded = ratio.round();
    // Treat ratios within rounding noise of an integer as exact.
    if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

fn with_time(error: NumericsError, t: impl Real) -> NumericsError {
    match error {
        NumericsError::OdeNonFinite { .. } => NumericsError::OdeNonFinite { t_last_valid: t.to_f64_lossy() },
        other => other,
    }
}

fn norm_inf<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

struct Workspace<T> {
    k: [Vec<T>; 7],
    tmp: Vec<T>,
    y_new: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![T::zero(); n]),
            tmp: vec![T::zero(); n],
            y_new: vec![T::zero(); n],
        }
    }
}

fn check_finite<T: Real>(v: &[T]) -> Result<(), NumericsError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::OdeNonFinite { t_last_valid: f64::NAN })
    }
}

fn rk4_step<T: Real>(
    rhs: &mut impl FnMut(T, &[T], &mut [T]),
    t: T,
    x: &mut [T],
    h: T,
    ws: &mut Workspace<T>,
) -> Result<(), NumericsError> {
    let half = h / T::lit(2.0);
    let [k1, k2, k3, k4, ..] = &mut ws.k;
    let tmp = &mut ws.tmp;
    rhs(t, x, k1);
    check_finite(k1)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + half * k1[i];
    }
    rhs(t + half, tmp, k2);
    check_finite(k2)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + half * k2[i];
    }
    rhs(t + half, tmp, k3);
    check_finite(k3)?;
    for i in 0..x.len() {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs(t + h, tmp, k4);
    check_finite(k4)?;
    let sixth = h / T::lit(6.0);
    for i in 0..x.len() {
        x[i] += sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
    check_finite(x)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One trial step from `(t, x)`; `ws.k[0]` must hold `f(t, x)`. Leaves the candidate in
/// `ws.y_new`, its derivative in `ws.k[6]`, and returns the scaled RMS error estimate.
fn dopri_step<T: Real>(
    rhs: &mut impl FnMut(T, &[T], &mut [T]),
    t: T,
    x: &[T],
    h: T,
    opts: &AdaptiveOptions,
    ws: &mut Workspace<T>,
) -> Result<T, NumericsError> {
    let n = x.len();
    for stage in 1..7 {
        for i in 0..n {
            let mut acc = T::zero();
            for (j, &a) in A[stage].iter().enumerate().take(stage) {
                if a != 0.0 {
                    acc += T::lit(a) * ws.k[j][i];
                }
            }
            ws.tmp[i] = x[i] + h * acc;
        }
        if stage == 6 {
            ws.y_new.copy_from_slice(&ws.tmp);
        }
        rhs(t + T::lit(C[stage]) * h, &ws.tmp, &mut ws.k[stage]);
        check_finite(&ws.k[stage])?;
    }
    let (rtol, atol) = (T::lit(opts.rtol), T::lit(opts.atol));
    let mut sum = T::zero();
    for i in 0..n {
        let mut e = T::zero();
        for (j, &w) in E.iter().enumerate() {
            if w != 0.0 {
                e += T::lit(w) * ws.k[j][i];
            }
        }
        let scale = atol + rtol * x[i].abs().max(ws.y_new[i].abs());
        let r = h * e / scale;
        sum += r * r;
    }
    Ok(if n == 0 { T::zero() } else { (sum / T::from_usize_lossy(n)).sqrt() })
}
