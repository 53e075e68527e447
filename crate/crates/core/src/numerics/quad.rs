use super::NumericsError;
use crate::Real;

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;
const DEFAULT_MAX_DEPTH: usize = 50;

/// Adaptive Simpson quadrature of `f` over `[lo, hi]` with estimated error `tol`.
///
/// Reversed limits give the negated integral; equal limits give exactly zero.
pub fn quad_adaptive<T: Real>(f: impl Fn(T) -> T, lo: T, hi: T, tol: T) -> Result<T, NumericsError> {
    quad_adaptive_with_depth(f, lo, hi, tol, DEFAULT_MAX_DEPTH)
}

pub fn quad_adaptive_with_depth<T: Real>(
    f: impl Fn(T) -> T,
    lo: T,
    hi: T,
    tol: T,
    max_depth: usize,
) -> Result<T, NumericsError> {
    if !(tol > T::zero()) {
        return Err(NumericsError::InvalidParameter(format!("quadrature tolerance {tol} must be positive")));
    }
    if lo == hi {
        return Ok(T::zero());
    }
    if lo > hi {
        return quad_adaptive_with_depth(f, hi, lo, tol, max_depth).map(|v| -v);
    }
    let eval = |x: T| -> Result<T, NumericsError> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::QuadratureNonFinite { at: x.to_f64_lossy() })
        }
    };
    let two = T::lit(2.0);
    // Start from a few panels so narrow features (Gaussian bumps) are not missed
    // by a single coarse Simpson estimate that happens to agree with itself.
    let panels = 8usize;
    let width = (hi - lo) / T::from_usize_lossy(panels);
    let panel_tol = tol / T::from_usize_lossy(panels);
    let mut total = T::zero();
    for k in 0..panels {
        let a = lo + width * T::from_usize_lossy(k);
        let b = if k + 1 == panels { hi } else { a + width };
        let m = (a + b) / two;
        let (ya, ym, yb) = (eval(a)?, eval(m)?, eval(b)?);
        let s = simpson(a, b, ya, ym, yb);
        total += recurse(&eval, a, b, ya, ym, yb, s, panel_tol, max_depth)?;
    }
    Ok(total)
}

#[inline]
fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: Real>(
    eval: &impl Fn(T) -> Result<T, NumericsError>,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: usize,
) -> Result<T, NumericsError> {
    let two = T::lit(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let flm = eval(lm)?;
    let frm = eval(rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    let fifteen = T::lit(15.0);
    // Below this the estimate is dominated by rounding; further splitting cannot help.
    let noise = T::epsilon() * T::lit(64.0) * (left.abs() + right.abs());
    if delta.abs() <= fifteen * tol || delta.abs() <= noise || m <= a || m >= b {
        return Ok(left + right + delta / fifteen);
    }
    if depth == 0 {
        return Err(NumericsError::QuadratureDepth { lo: a.to_f64_lossy(), hi: b.to_f64_lossy(), depth: 0 });
    }
    let half = tol / two;
    Ok(recurse(eval, a, m, fa, flm, fm, left, half, depth - 1)?
        + recurse(eval, m, b, fm, frm, fb, right, half, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_integrand() {
        let v = quad_adaptive(|y: f64| y, 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn exp_sgn_integrand_matches_closed_form() {
        // closed form: 20 (e^2 - 3)
        let expected = 20.0 * (2f64.exp() - 3.0);
        let v = quad_adaptive(|y: f64| 20.0 * (y.exp() - 1.0), 0.0, 2.0, 1e-10).unwrap();
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        assert!((expected - 87.781_121_978_6).abs() < 1e-8);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(quad_adaptive(|y: f64| y.exp(), 0.0, 0.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn limit_swap_negates() {
        let f = |y: f64| (3.0 * y).sin() + y * y;
        let a = quad_adaptive(f, -1.0, 2.5, 1e-10).unwrap();
        let b = quad_adaptive(f, 2.5, -1.0, 1e-10).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn narrow_bump_is_resolved() {
        // Gaussian of width 0.3 centred away from the panel midpoints.
        let w = 0.3;
        let v = quad_adaptive(|y: f64| (-((y - 23.0) / w).powi(2)).exp(), 0.0, 40.0, 1e-10).unwrap();
        let exact = w * std::f64::consts::PI.sqrt();
        assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
    }

    #[test]
    fn depth_exhaustion_is_reported() {
        let r = quad_adaptive_with_depth(|y: f64| y.abs().sqrt().recip().min(1e12), -1.0, 1.0, 1e-14, 3);
        assert!(matches!(r, Err(NumericsError::QuadratureDepth { .. })));
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = quad_adaptive(|y: f64| 1.0 / y, 0.0, 1.0, 1e-8);
        assert!(matches!(r, Err(NumericsError::QuadratureNonFinite { .. })));
    }
}
