//! Scalar function families used as gains, dampings and interaction laws.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{quad_adaptive, NumericsError, DEFAULT_QUAD_TOL};
use crate::Real;

/// Default sampling window for assumption checks.
pub const DEFAULT_VALIDATION_RANGE: (f64, f64) = (-50.0, 50.0);
pub const DEFAULT_VALIDATION_SAMPLES: usize = 1001;
const ODDNESS_TOL: f64 = 1e-9;
/// Gaussian tails beyond this many widths are negligible in double precision.
const BUMP_SPLIT_WIDTHS: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionError {
    #[error("invalid {family} parameters: {reason}")]
    InvalidParameters { family: &'static str, reason: String },
    #[error("{family} has no finite reciprocal integral on [{lo}, {hi}]")]
    NotAGain { family: &'static str, lo: f64, hi: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How an integral was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
}

impl Method {
    pub fn and(self, other: Self) -> Self {
        if self == Method::ClosedForm && other == Method::ClosedForm {
            Method::ClosedForm
        } else {
            Method::Quadrature
        }
    }
}

/// One member of a fixed family of real functions.
///
/// Serialises as `{"family": "exp_sgn", "params": {"k": 20.0}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: DeserializeOwned"))]
pub enum ScalarFn<T> {
    /// `c`
    Constant { c: T },
    /// `k y`
    Linear { k: T },
    /// `k (e^|y| - 1) sgn(y)`
    ExpSgn { k: T },
    /// `1 / (|y| + c)`
    ReciprocalAbsShift { c: T },
    /// `1 / (base + amp exp(-((y - center) / width)^2))`
    BumpReciprocal { base: T, amp: T, center: T, width: T },
    /// Odd piecewise-linear function through `(0, 0)` and the mirrored knots `(y, g)`,
    /// `y > 0` strictly increasing; extended linearly past the last knot.
    PiecewiseLinear { knots: Vec<[T; 2]> },
}

/// Empirical bounds of a gain over a sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainReport<T> {
    pub gamma_lower: T,
    pub gamma_upper: T,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionReport<T> {
    pub odd_ok: bool,
    pub sign_ok: bool,
    pub lipschitz_estimate: T,
}

impl<T> InteractionReport<T> {
    pub fn ok(&self) -> bool {
        self.odd_ok && self.sign_ok
    }
}

impl<T: Real> ScalarFn<T> {
    pub fn constant(c: T) -> Self {
        Self::Constant { c }
    }

    pub fn linear(k: T) -> Self {
        Self::Linear { k }
    }

    pub fn exp_sgn(k: T) -> Self {
        Self::ExpSgn { k }
    }

    pub fn reciprocal_abs_shift(c: T) -> Self {
        Self::ReciprocalAbsShift { c }
    }

    pub fn bump_reciprocal(base: T, amp: T, center: T, width: T) -> Self {
        Self::BumpReciprocal { base, amp, center, width }
    }

    /// Builds the odd extension of the given half-line knots.
    pub fn piecewise_linear(knots: Vec<[T; 2]>) -> Result<Self, FunctionError> {
        let f = Self::PiecewiseLinear { knots };
        f.check()?;
        Ok(f)
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::Linear { .. } => "linear",
            Self::ExpSgn { .. } => "exp_sgn",
            Self::ReciprocalAbsShift { .. } => "reciprocal_abs_shift",
            Self::BumpReciprocal { .. } => "bump_reciprocal",
            Self::PiecewiseLinear { .. } => "piecewise_linear",
        }
    }

    /// Parameter sanity: finite values, and the structural requirements of each family.
    pub fn check(&self) -> Result<(), FunctionError> {
        let family = self.family();
        let bad = |reason: String| Err(FunctionError::InvalidParameters { family, reason });
        let finite = |vals: &[T]| vals.iter().all(|v| v.is_finite());
        match self {
            Self::Constant { c } | Self::Linear { k: c } | Self::ExpSgn { k: c } if !c.is_finite() => {
                bad("parameter must be finite".into())
            }
            Self::ReciprocalAbsShift { c } if !(*c > T::zero()) || !c.is_finite() => {
                bad(format!("shift c = {c} must be positive"))
            }
            Self::BumpReciprocal { base, amp, center, width } => {
                if !finite(&[*base, *amp, *center, *width]) {
                    bad("parameters must be finite".into())
                } else if !(*base > T::zero()) || *amp < T::zero() || !(*width > T::zero()) {
                    bad(format!("need base > 0, amp >= 0, width > 0 (got {base}, {amp}, {width})"))
                } else {
                    Ok(())
                }
            }
            Self::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return bad("at least one knot is required".into());
                }
                let mut prev = T::zero();
                for (i, [y, g]) in knots.iter().enumerate() {
                    if !finite(&[*y, *g]) {
                        return bad(format!("knot {i} is not finite"));
                    }
                    if !(*y > prev) {
                        return bad(format!("knot abscissae must be positive and strictly increasing (knot {i})"));
                    }
                    prev = *y;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, y: T) -> T {
        match self {
            Self::Constant { c } => *c,
            Self::Linear { k } => *k * y,
            Self::ExpSgn { k } => *k * y.abs().exp_m1() * sgn(y),
            Self::ReciprocalAbsShift { c } => T::one() / (y.abs() + *c),
            Self::BumpReciprocal { .. } => T::one() / self.bump_capacity(y),
            Self::PiecewiseLinear { knots } => sgn(y) * pl_half(knots, y.abs()),
        }
    }

    /// `base + amp exp(-((y - center)/width)^2)`, the reciprocal of a bump gain.
    fn bump_capacity(&self, y: T) -> T {
        match self {
            Self::BumpReciprocal { base, amp, center, width } => {
                let u = (y - *center) / *width;
                *base + *amp * (-u * u).exp()
            }
            _ => unreachable!("bump_capacity on a non-bump family"),
        }
    }

    /// Closed-form primitive vanishing at zero, when the family has one.
    pub fn primitive(&self, y: T) -> Option<T> {
        let two = T::lit(2.0);
        match self {
            Self::Constant { c } => Some(*c * y),
            Self::Linear { k } => Some(*k * y * y / two),
            Self::ExpSgn { k } => Some(*k * (y.abs().exp_m1() - y.abs())),
            Self::ReciprocalAbsShift { c } => Some(sgn(y) * (y.abs() / *c).ln_1p()),
            Self::PiecewiseLinear { knots } => Some(pl_half_integral(knots, y.abs())),
            Self::BumpReciprocal { .. } => None,
        }
    }

    /// `int_lo^hi f(y) dy`.
    pub fn antiderivative(&self, lo: T, hi: T) -> Result<T, FunctionError> {
        self.antiderivative_with_method(lo, hi).map(|(v, _)| v)
    }

    pub fn antiderivative_with_method(&self, lo: T, hi: T) -> Result<(T, Method), FunctionError> {
        if let (Some(a), Some(b)) = (self.primitive(lo), self.primitive(hi)) {
            return Ok((b - a, Method::ClosedForm));
        }
        Ok((self.split_quad(|y| self.eval(y), lo, hi)?, Method::Quadrature))
    }

    /// `int_lo^hi 1/f(y) dy`, the conserved-quantity integrand for a gain.
    pub fn reciprocal_antiderivative(&self, lo: T, hi: T) -> Result<(T, Method), FunctionError> {
        let two = T::lit(2.0);
        match self {
            Self::Constant { c } => Ok(((hi - lo) / *c, Method::ClosedForm)),
            Self::ReciprocalAbsShift { c } => {
                let q = |y: T| y * y.abs() / two + *c * y;
                Ok((q(hi) - q(lo), Method::ClosedForm))
            }
            Self::BumpReciprocal { base, amp, center, width } => {
                let bump = self.split_quad(|y| (-((y - *center) / *width).powi(2)).exp(), lo, hi)?;
                Ok((*base * (hi - lo) + *amp * bump, Method::Quadrature))
            }
            _ => {
                let v = self.split_quad(|y| T::one() / self.eval(y), lo, hi).map_err(|e| match e {
                    FunctionError::Numerics(NumericsError::QuadratureNonFinite { .. }) => FunctionError::NotAGain {
                        family: self.family(),
                        lo: lo.to_f64_lossy(),
                        hi: hi.to_f64_lossy(),
                    },
                    other => other,
                })?;
                Ok((v, Method::Quadrature))
            }
        }
    }

    /// `int_s^x (y - s) / f(y) dy`, the Lyapunov integrand for a gain.
    pub fn weighted_reciprocal_antiderivative(&self, s: T, x: T) -> Result<(T, Method), FunctionError> {
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        match self {
            Self::Constant { c } => Ok(((x - s) * (x - s) / (two * *c), Method::ClosedForm)),
            Self::ReciprocalAbsShift { c } => {
                let r = |y: T| y.abs().powi(3) / three + *c * y * y / two - s * (y * y.abs() / two + *c * y);
                Ok((r(x) - r(s), Method::ClosedForm))
            }
            Self::BumpReciprocal { base, amp, center, width } => {
                let bump = self.split_quad(|y| (y - s) * (-((y - *center) / *width).powi(2)).exp(), s, x)?;
                Ok((*base * (x - s) * (x - s) / two + *amp * bump, Method::Quadrature))
            }
            _ => Ok((self.split_quad(|y| (y - s) / self.eval(y), s, x)?, Method::Quadrature)),
        }
    }

    /// Adaptive quadrature that splits the interval at features the sampler could miss.
    fn split_quad(&self, f: impl Fn(T) -> T, lo: T, hi: T) -> Result<T, FunctionError> {
        if lo > hi {
            return self.split_quad(f, hi, lo).map(|v| -v);
        }
        let mut cuts = vec![lo];
        let mut push = |p: T| {
            if p > lo && p < hi {
                cuts.push(p);
            }
        };
        push(T::zero());
        match self {
            Self::BumpReciprocal { center, width, .. } => {
                let w = T::lit(BUMP_SPLIT_WIDTHS) * *width;
                push(*center - w);
                push(*center);
                push(*center + w);
            }
            Self::PiecewiseLinear { knots } => {
                for [y, _] in knots {
                    push(*y);
                    push(-*y);
                }
            }
            _ => {}
        }
        cuts.push(hi);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let tol = T::tol_floor(DEFAULT_QUAD_TOL, 64.0);
        let mut total = T::zero();
        for w in cuts.windows(2) {
            total += quad_adaptive(&f, w[0], w[1], tol)?;
        }
        Ok(total)
    }

    /// Assumption 1 style check on a uniform grid.
    pub fn validate_gain(&self, range: (T, T), samples: usize) -> GainReport<T> {
        let mut lower = T::infinity();
        let mut upper = T::neg_infinity();
        let mut finite = true;
        for y in grid(range, samples) {
            let v = self.eval(y);
            finite &= v.is_finite();
            lower = lower.min(v);
            upper = upper.max(v);
        }
        GainReport { gamma_lower: lower, gamma_upper: upper, ok: finite && lower > T::zero() && self.check().is_ok() }
    }

    /// Assumption 2 style check: oddness, sign preservation, and a finite-difference
    /// Lipschitz estimate.
    pub fn validate_interaction(&self, range: (T, T), samples: usize) -> InteractionReport<T> {
        let tol = T::tol_floor(ODDNESS_TOL, 16.0);
        let pts = grid(range, samples);
        let mut odd_ok = self.check().is_ok();
        let mut sign_ok = true;
        for &y in &pts {
            let (p, m) = (self.eval(y), self.eval(-y));
            if !p.is_finite() || (p + m).abs() > tol * T::one().max(p.abs()) {
                odd_ok = false;
            }
            if y != T::zero() && !(y * p > T::zero()) {
                sign_ok = false;
            }
        }
        let mut lip = T::zero();
        for w in pts.windows(2) {
            let dy = w[1] - w[0];
            if dy > T::zero() {
                lip = lip.max(((self.eval(w[1]) - self.eval(w[0])) / dy).abs());
            }
        }
        InteractionReport { odd_ok, sign_ok, lipschitz_estimate: lip }
    }

    pub fn validate_gain_default(&self) -> GainReport<T> {
        self.validate_gain(default_range(), DEFAULT_VALIDATION_SAMPLES)
    }

    pub fn validate_interaction_default(&self) -> InteractionReport<T> {
        self.validate_interaction(default_range(), DEFAULT_VALIDATION_SAMPLES)
    }

    /// Whether `int_0^x f` grows without bound as `x -> infinity`.
    pub fn has_unbounded_primitive(&self) -> bool {
        match self {
            Self::Linear { k } | Self::ExpSgn { k } => *k > T::zero(),
            Self::PiecewiseLinear { knots } => {
                let n = knots.len();
                let last = knots[n - 1];
                let (py, pg) = if n >= 2 { (knots[n - 2][0], knots[n - 2][1]) } else { (T::zero(), T::zero()) };
                let slope = (last[1] - pg) / (last[0] - py);
                last[1] > T::zero() && slope >= T::zero()
            }
            _ => false,
        }
    }
}

fn default_range<T: Real>() -> (T, T) {
    (T::lit(DEFAULT_VALIDATION_RANGE.0), T::lit(DEFAULT_VALIDATION_RANGE.1))
}

fn grid<T: Real>((lo, hi): (T, T), samples: usize) -> Vec<T> {
    let samples = samples.max(2);
    let step = (hi - lo) / T::from_usize_lossy(samples - 1);
    (0..samples).map(|i| if i + 1 == samples { hi } else { lo + step * T::from_usize_lossy(i) }).collect()
}

fn sgn<T: Real>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else if y < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Value of the half-line interpolant at `a >= 0`.
fn pl_half<T: Real>(knots: &[[T; 2]], a: T) -> T {
    let mut prev = [T::zero(), T::zero()];
    for &k in knots {
        if a <= k[0] {
            return prev[1] + (k[1] - prev[1]) * (a - prev[0]) / (k[0] - prev[0]);
        }
        prev = k;
    }
    // Past the last knot: continue the last segment.
    let n = knots.len();
    let before = if n >= 2 { knots[n - 2] } else { [T::zero(), T::zero()] };
    let slope = (prev[1] - before[1]) / (prev[0] - before[0]);
    prev[1] + slope * (a - prev[0])
}

/// `int_0^a` of the half-line interpolant, exact trapezoids.
fn pl_half_integral<T: Real>(knots: &[[T; 2]], a: T) -> T {
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut prev = [T::zero(), T::zero()];
    for &k in knots {
        if a <= k[0] {
            let ga = pl_half(knots, a);
            return total + (a - prev[0]) * (prev[1] + ga) / two;
        }
        total += (k[0] - prev[0]) * (prev[1] + k[1]) / two;
        prev = k;
    }
    let ga = pl_half(knots, a);
    total + (a - prev[0]) * (prev[1] + ga) / two
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_examples() {
        let a = ScalarFn::exp_sgn(20.0);
        assert_eq!(a.eval(0.0), 0.0);
        assert!((a.eval(1.0) - 20.0 * (1f64.exp() - 1.0)).abs() < 1e-12);
        assert!((a.eval(1.0) - 34.366).abs() < 1e-3);
        assert_eq!(a.eval(-1.0), -a.eval(1.0));
        assert!((ScalarFn::reciprocal_abs_shift(0.1f64).eval(-3.0) - 1.0 / 3.1).abs() < 1e-15);
    }

    #[test]
    fn antiderivative_examples() {
        assert_eq!(ScalarFn::constant(2.0).antiderivative(0.0, 3.0).unwrap(), 6.0);
        assert_eq!(ScalarFn::linear(1.0).antiderivative(0.0, 3.0).unwrap(), 4.5);
        let exact = 20.0 * (2f64.exp() - 3.0);
        let (v, m) = ScalarFn::exp_sgn(20.0).antiderivative_with_method(0.0, 2.0).unwrap();
        assert_eq!(m, Method::ClosedForm);
        assert!((v - exact).abs() < 1e-12);
        let q = quad_adaptive(|y: f64| 20.0 * y.exp_m1(), 0.0, 2.0, 1e-12).unwrap();
        assert!((v - q).abs() < 1e-9);
    }

    #[test]
    fn bump_antiderivative_uses_quadrature() {
        let f = ScalarFn::bump_reciprocal(5e4, 5e5, 23.0, 0.4);
        let (_, m) = f.antiderivative_with_method(20.0, 26.0).unwrap();
        assert_eq!(m, Method::Quadrature);
        // reciprocal integral: base * 6 + amp * width * sqrt(pi) (bump fully inside)
        let (r, _) = f.reciprocal_antiderivative(20.0, 26.0).unwrap();
        let exact = 5e4 * 6.0 + 5e5 * 0.4 * std::f64::consts::PI.sqrt();
        assert!((r - exact).abs() < 1e-6 * exact, "{r} vs {exact}");
    }

    #[test]
    fn reciprocal_of_abs_shift_is_closed_form() {
        let f = ScalarFn::reciprocal_abs_shift(0.1);
        let (v, m) = f.reciprocal_antiderivative(-3.0, 2.0).unwrap();
        assert_eq!(m, Method::ClosedForm);
        let q = quad_adaptive(|y: f64| y.abs() + 0.1, -3.0, 0.0, 1e-12).unwrap()
            + quad_adaptive(|y: f64| y.abs() + 0.1, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - q).abs() < 1e-10);
    }

    #[test]
    fn weighted_reciprocal_closed_forms_match_quadrature() {
        for f in [ScalarFn::constant(0.7), ScalarFn::reciprocal_abs_shift(0.3)] {
            let (v, _) = f.weighted_reciprocal_antiderivative(-0.4, 2.5).unwrap();
            let q = quad_adaptive(|y: f64| (y + 0.4) / f.eval(y), -0.4, 0.0, 1e-12).unwrap()
                + quad_adaptive(|y: f64| (y + 0.4) / f.eval(y), 0.0, 2.5, 1e-12).unwrap();
            assert!((v - q).abs() < 1e-10, "{} {v} {q}", f.family());
        }
    }

    #[test]
    fn reciprocal_of_interaction_is_rejected() {
        let r = ScalarFn::linear(1.0).reciprocal_antiderivative(-1.0, 1.0);
        assert!(r.is_err());
    }

    #[test]
    fn piecewise_linear_is_odd_and_integrates_exactly() {
        let f = ScalarFn::piecewise_linear(vec![[1.0, 2.0], [3.0, 3.0]]).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(-2.0), -2.5);
        // past the last knot the slope 0.5 continues
        assert_eq!(f.eval(5.0), 4.0);
        // int_0^3 = 1 + 5 = 6; int_0^5 adds 2 * 3.5
        assert_eq!(f.antiderivative(0.0, 3.0).unwrap(), 6.0);
        assert_eq!(f.antiderivative(0.0, 5.0).unwrap(), 13.0);
        assert_eq!(f.antiderivative(0.0, -5.0).unwrap(), 13.0);
        assert!(f.validate_interaction_default().ok());
        assert!(ScalarFn::piecewise_linear(vec![[1.0, 2.0], [1.0, 3.0]]).is_err());
        assert!(ScalarFn::<f64>::piecewise_linear(vec![]).is_err());
    }

    #[test]
    fn gain_reports() {
        let r = ScalarFn::constant(0.5).validate_gain((-1.0, 1.0), 11);
        assert!(r.ok);
        assert_eq!((r.gamma_lower, r.gamma_upper), (0.5, 0.5));
        let r = ScalarFn::reciprocal_abs_shift(0.1f64).validate_gain((-10.0, 10.0), 1001);
        assert!(r.ok);
        assert!((r.gamma_lower - 1.0 / 10.1).abs() < 1e-15);
        assert!((r.gamma_upper - 10.0).abs() < 1e-12);
        assert!(!ScalarFn::constant(-1.0).validate_gain((-1.0, 1.0), 11).ok);
    }

    #[test]
    fn interaction_reports() {
        let r = ScalarFn::linear(5.0f64).validate_interaction((-1.0, 1.0), 101);
        assert!(r.odd_ok && r.sign_ok);
        assert!((r.lipschitz_estimate - 5.0).abs() < 1e-9);
        let r = ScalarFn::exp_sgn(20.0).validate_interaction((-3.0, 3.0), 601);
        assert!(r.ok());
        let r = ScalarFn::constant(1.0).validate_interaction((-1.0, 1.0), 11);
        assert!(!r.odd_ok);
    }

    #[test]
    fn serde_shape() {
        let f = ScalarFn::exp_sgn(20.0);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"family":"exp_sgn","params":{"k":20.0}}"#);
        let back: ScalarFn<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let b: ScalarFn<f64> = serde_json::from_str(
            r#"{"family":"bump_reciprocal","params":{"base":5e4,"amp":5e5,"center":23,"width":0.4}}"#,
        )
        .unwrap();
        assert_eq!(b, ScalarFn::bump_reciprocal(5e4, 5e5, 23.0, 0.4));
    }

    #[test]
    fn bad_parameters_are_reported() {
        assert!(ScalarFn::reciprocal_abs_shift(0.0).check().is_err());
        assert!(ScalarFn::bump_reciprocal(1.0, 1.0, 0.0, 0.0).check().is_err());
        assert!(ScalarFn::bump_reciprocal(1.0, -1.0, 0.0, 1.0).check().is_err());
        assert!(ScalarFn::constant(f64::NAN).check().is_err());
    }
}
