use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::Real;

pub const DEFAULT_MARGINAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Hurwitz,
    Marginal,
    Unstable,
}

impl StabilityClass {
    /// The less stable of the two.
    pub fn worst(self, other: Self) -> Self {
        self.max(other)
    }
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Hurwitz => "hurwitz",
            Self::Marginal => "marginal",
            Self::Unstable => "unstable",
        })
    }
}

/// Class plus the largest real part of the roots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict<T> {
    pub class: StabilityClass,
    pub margin: T,
}

/// `Hurwitz` below `-tol`, `Unstable` above `tol`, `Marginal` in between (inclusive).
pub fn classify_margin<T: Real>(margin: T, tol: T) -> StabilityClass {
    if margin < -tol {
        StabilityClass::Hurwitz
    } else if margin > tol {
        StabilityClass::Unstable
    } else {
        StabilityClass::Marginal
    }
}

/// `a2 s^2 + a1 s + a0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial2<T> {
    pub a2: T,
    pub a1: T,
    pub a0: T,
}

/// `a3 s^3 + a2 s^2 + a1 s + a0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial3<T> {
    pub a3: T,
    pub a2: T,
    pub a1: T,
    pub a0: T,
}

impl<T: Real> Polynomial2<T> {
    pub fn new(a2: T, a1: T, a0: T) -> Self {
        assert!(a2 != T::zero(), "leading coefficient must be nonzero");
        Self { a2, a1, a0 }
    }

    pub fn eval(&self, s: Complex<T>) -> Complex<T> {
        (s * self.a2 + self.a1) * s + self.a0
    }
}

impl<T: Real> Polynomial3<T> {
    pub fn new(a3: T, a2: T, a1: T, a0: T) -> Self {
        assert!(a3 != T::zero(), "leading coefficient must be nonzero");
        Self { a3, a2, a1, a0 }
    }

    pub fn eval(&self, s: Complex<T>) -> Complex<T> {
        ((s * self.a3 + self.a2) * s + self.a1) * s + self.a0
    }
}

/// Both roots, computed without cancellation.
pub fn quadratic_roots<T: Real>(p: &Polynomial2<T>) -> [Complex<T>; 2] {
    let two = T::lit(2.0);
    let (a, b, c) = (p.a2, p.a1, p.a0);
    let disc = b * b - T::lit(4.0) * a * c;
    if disc >= T::zero() {
        let sq = disc.sqrt();
        let q = -(b + if b >= T::zero() { sq } else { -sq }) / two;
        if q == T::zero() {
            return [Complex::new(T::zero(), T::zero()); 2];
        }
        let r1 = q / a;
        let r2 = c / q;
        [Complex::new(r1, T::zero()), Complex::new(r2, T::zero())]
    } else {
        let re = -b / (two * a);
        let im = (-disc).sqrt() / (two * a.abs());
        [Complex::new(re, -im), Complex::new(re, im)]
    }
}

/// All three roots: a real root by bisection polished with Newton, then deflation.
pub fn cubic_roots<T: Real>(p: &Polynomial3<T>) -> [Complex<T>; 3] {
    let (b, c, d) = (p.a2 / p.a3, p.a1 / p.a3, p.a0 / p.a3);
    let f = |s: T| ((s + b) * s + c) * s + d;
    let df = |s: T| (T::lit(3.0) * s + T::lit(2.0) * b) * s + c;
    let bound = T::one() + b.abs().max(c.abs()).max(d.abs());
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..400 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut r = (lo + hi) / T::lit(2.0);
    for _ in 0..3 {
        let dr = df(r);
        if dr == T::zero() {
            break;
        }
        let next = r - f(r) / dr;
        if next.is_finite() && f(next).abs() < f(r).abs() {
            r = next;
        } else {
            break;
        }
    }
    let quad = Polynomial2 { a2: T::one(), a1: b + r, a0: c + r * (b + r) };
    let [q1, q2] = quadratic_roots(&quad);
    [Complex::new(r, T::zero()), q1, q2]
}

fn max_re<T: Real>(roots: &[Complex<T>]) -> T {
    roots.iter().map(|z| z.re).fold(T::neg_infinity(), T::max)
}

/// Combines the coefficient test with the root margin: a tie on either side is Marginal.
fn combine<T: Real>(coefficient_class: StabilityClass, margin: T, tol: T) -> StabilityVerdict<T> {
    let by_margin = classify_margin(margin, tol);
    let class = if coefficient_class == StabilityClass::Marginal || by_margin == StabilityClass::Marginal {
        StabilityClass::Marginal
    } else {
        coefficient_class
    };
    StabilityVerdict { class, margin }
}

fn sign_class<T: Real>(values: &[(T, T)], tol: T) -> StabilityClass {
    // (value, scale) pairs; the value is compared against tol * scale.
    let mut class = StabilityClass::Hurwitz;
    for &(v, scale) in values {
        let t = tol * scale.max(T::one());
        if v < -t {
            return StabilityClass::Unstable;
        }
        if v <= t {
            class = StabilityClass::Marginal;
        }
    }
    class
}

/// Routh–Hurwitz for a quadratic: Hurwitz iff `a1, a0 > 0` after normalising `a2 > 0`.
pub fn routh_hurwitz_2<T: Real>(p: &Polynomial2<T>, tol: T) -> StabilityVerdict<T> {
    let sgn = p.a2.signum();
    let (a2, a1, a0) = (p.a2 * sgn, p.a1 * sgn, p.a0 * sgn);
    let coefficient_class = sign_class(&[(a1 / a2, T::one()), (a0 / a2, T::one())], tol);
    combine(coefficient_class, max_re(&quadratic_roots(p)), tol)
}

/// Routh–Hurwitz for a cubic: Hurwitz iff `a2, a1, a0 > 0` and `a2 a1 > a3 a0`.
pub fn routh_hurwitz_3<T: Real>(p: &Polynomial3<T>, tol: T) -> StabilityVerdict<T> {
    let sgn = p.a3.signum();
    let (a3, a2, a1, a0) = (p.a3 * sgn, p.a2 * sgn, p.a1 * sgn, p.a0 * sgn);
    let (b2, b1, b0) = (a2 / a3, a1 / a3, a0 / a3);
    let minor = b2 * b1 - b0;
    let coefficient_class = sign_class(
        &[(b2, T::one()), (b1, T::one()), (b0, T::one()), (minor, (b2 * b1).abs() + b0.abs())],
        tol,
    );
    combine(coefficient_class, max_re(&cubic_roots(p)), tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = DEFAULT_MARGINAL_TOL;

    #[test]
    fn quadratic_examples() {
        assert_eq!(routh_hurwitz_2(&Polynomial2::new(1.0, 5.0, 1.0), TOL).class, StabilityClass::Hurwitz);
        assert_eq!(routh_hurwitz_2(&Polynomial2::new(1.0, 0.0, 1.0), TOL).class, StabilityClass::Marginal);
        assert_eq!(routh_hurwitz_2(&Polynomial2::new(1.0, -1.0, 1.0), TOL).class, StabilityClass::Unstable);
    }

    #[test]
    fn cubic_examples_from_robot_gains() {
        let v = routh_hurwitz_3(&Polynomial3::new(1.0, 3.0, 5.0, 1.0), TOL);
        assert_eq!(v.class, StabilityClass::Hurwitz);
        let v = routh_hurwitz_3(&Polynomial3::new(1.0, 3.0, 5.0, 15.0), TOL);
        assert_eq!(v.class, StabilityClass::Marginal);
        assert!(v.margin.abs() < 1e-9);
        let v = routh_hurwitz_3(&Polynomial3::new(1.0, 3.0, 5.0, 20.0), TOL);
        assert_eq!(v.class, StabilityClass::Unstable);
        assert!(v.margin > 0.0);
    }

    #[test]
    fn quadratic_roots_match_formula() {
        // s^2 + 3s + 3: -1.5 +- i sqrt(3)/2
        let r = quadratic_roots(&Polynomial2::new(1.0f64, 3.0, 3.0));
        for z in r {
            assert!((z.re + 1.5).abs() < 1e-14);
            assert!((z.im.abs() - 3f64.sqrt() / 2.0).abs() < 1e-14);
        }
        let r = quadratic_roots(&Polynomial2::new(1.0, 3.0, 2.0));
        let mut re: Vec<f64> = r.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(re, vec![-2.0, -1.0]);
    }

    #[test]
    fn cubic_roots_are_roots() {
        let p = Polynomial3::new(2.0, -3.0, 7.0, 11.0);
        for z in cubic_roots(&p) {
            assert!(p.eval(z).norm() < 1e-10, "{z}");
        }
        // s^2 (s + 3): double root at zero.
        let p = Polynomial3::new(1.0, 3.0, 0.0, 0.0);
        let v = routh_hurwitz_3(&p, TOL);
        assert_eq!(v.class, StabilityClass::Marginal);
    }

    #[test]
    fn margin_classification_bands() {
        assert_eq!(classify_margin(-1e-6, TOL), StabilityClass::Hurwitz);
        assert_eq!(classify_margin(1e-7, TOL), StabilityClass::Marginal);
        assert_eq!(classify_margin(2e-7, TOL), StabilityClass::Unstable);
        assert_eq!(StabilityClass::Hurwitz.worst(StabilityClass::Marginal), StabilityClass::Marginal);
    }
}
