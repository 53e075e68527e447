use super::NumericsError;
use crate::Real;

const MAX_DOUBLINGS: usize = 200;
const MAX_BRENT_ITERATIONS: usize = 500;

/// Solves `f(x) = target` for a strictly increasing, continuous `f`, expanding a
/// bracket geometrically around `seed`.
pub fn solve_monotone<T: Real>(f: impl Fn(T) -> T, target: T, seed: T) -> Result<T, NumericsError> {
    solve_monotone_bracketed(f, target, seed, seed)
}

/// Like [`solve_monotone`] but starts from the bracket guess `[lo, hi]`.
///
/// The returned point satisfies `|f(x) - target| <= 1e-10 (1 + |target|)` unless the
/// bracket collapses to adjacent floats first, in which case the best point is
/// returned together with a [`NumericsError::RootResidual`] error.
pub fn solve_monotone_bracketed<T: Real>(
    f: impl Fn(T) -> T,
    target: T,
    lo: T,
    hi: T,
) -> Result<T, NumericsError> {
    let g = |x: T| f(x) - target;
    let tol = T::tol_floor(1e-10, 4.0) * (T::one() + target.abs());
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut ga = g(a);
    if ga.abs() <= tol {
        return Ok(a);
    }
    let mut gb = if a == b { ga } else { g(b) };
    if gb.abs() <= tol {
        return Ok(b);
    }

    let mut step = T::one().max((b - a).abs()).max(a.abs().max(b.abs()) * T::lit(0.01));
    let mut doublings = 0;
    while !(ga <= T::zero() && gb >= T::zero()) {
        if doublings >= MAX_DOUBLINGS || !ga.is_finite() || !gb.is_finite() {
            return Err(NumericsError::BracketExpansion { target: target.to_f64_lossy(), doublings });
        }
        if ga > T::zero() {
            b = a;
            gb = ga;
            a -= step;
            ga = g(a);
        } else {
            a = b;
            ga = gb;
            b += step;
            gb = g(b);
        }
        step *= T::lit(2.0);
        doublings += 1;
    }
    if ga.abs() <= tol {
        return Ok(a);
    }
    if gb.abs() <= tol {
        return Ok(b);
    }
    brent(&g, a, b, ga, gb, tol)
}

/// Brent's method on a sign-changing bracket `g(a) < 0 < g(b)`.
fn brent<T: Real>(g: &impl Fn(T) -> T, a0: T, b0: T, ga0: T, gb0: T, tol: T) -> Result<T, NumericsError> {
    let two = T::lit(2.0);
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, ga0, gb0);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_BRENT_ITERATIONS {
        if (fb > T::zero()) == (fc > T::zero()) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        if fb.abs() <= tol {
            return Ok(b);
        }
        let xtol = T::epsilon() * two * b.abs() + T::min_positive_value();
        let m = (c - b) / two;
        if m.abs() <= xtol {
            // Bracket collapsed to adjacent representable points.
            return Err(NumericsError::RootResidual {
                residual: fb.abs().to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
        if e.abs() >= xtol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = two * m * s;
                q = T::one() - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (two * m * qq * (qq - r) - (b - a) * (r - T::one()));
                q = (qq - T::one()) * (r - T::one()) * (s - T::one());
            }
            if p > T::zero() {
                q = -q;
            } else {
                p = -p;
            }
            if two * p < (T::lit(3.0) * m * q - (xtol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b = if d.abs() > xtol { b + d } else if m > T::zero() { b + xtol } else { b - xtol };
        fb = g(b);
    }
    Err(NumericsError::RootResidual { residual: fb.abs().to_f64_lossy(), tolerance: tol.to_f64_lossy() })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Newton iteration used as an independent oracle.
    fn newton(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, mut x: f64) -> f64 {
        for _ in 0..100 {
            x -= f(x) / df(x);
        }
        x
    }

    #[test]
    fn identity_target() {
        assert!((solve_monotone(|x: f64| x, 2.0, 0.0).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn cubic_against_newton_oracle() {
        let oracle = newton(|x| x * x * x + x - 10.0, |x| 3.0 * x * x + 1.0, 1.0);
        // 2^3 + 2 = 10
        assert!((oracle - 2.0).abs() < 1e-12);
        let x = solve_monotone(|x: f64| x * x * x + x, 10.0, 0.0).unwrap();
        assert!((x - oracle).abs() < 1e-10);
    }

    #[test]
    fn cubic_with_irrational_root() {
        let oracle = newton(|x| x * x * x + x - 7.0, |x| 3.0 * x * x + 1.0, 1.0);
        let x = solve_monotone(|x: f64| x * x * x + x, 7.0, -3.0).unwrap();
        assert!((x - oracle).abs() < 1e-10);
    }

    #[test]
    fn exponential_target_one() {
        let x = solve_monotone(|x: f64| x.exp(), 1.0, 5.0).unwrap();
        assert!(x.abs() < 1e-10);
    }

    #[test]
    fn unreachable_target_fails_to_bracket() {
        let r = solve_monotone(|x: f64| x.atan(), 10.0, 0.0);
        assert!(matches!(r, Err(NumericsError::BracketExpansion { .. })));
    }

    #[test]
    fn works_in_f32() {
        let x = solve_monotone(|x: f32| x * x * x + x, 10.0, 0.0).unwrap();
        assert!((x - 2.0).abs() < 1e-5);
    }
}
