use num_complex::Complex;

use super::{Matrix, NumericsError};
use crate::Real;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix; eigenvalues ascending, eigenvectors
/// stored as the matching columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T: Real> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

/// Cyclic Jacobi rotations. Rejects input whose asymmetry exceeds `1e-10` (scaled by
/// the matrix magnitude when that exceeds one).
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> Result<SymmetricEigen<T>, NumericsError> {
    let asym = a
        .asymmetry()
        .ok_or_else(|| NumericsError::Dimension(format!("{}x{} matrix is not square", a.rows(), a.cols())))?;
    let scale = T::one().max(a.max_abs());
    if asym > T::tol_floor(1e-10, 16.0) * scale {
        return Err(NumericsError::NotSymmetric { asymmetry: asym.to_f64_lossy() });
    }
    let n = a.rows();
    let mut m = Matrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) / T::lit(2.0));
    let mut v = Matrix::identity(n);
    let norm = m.norm_frobenius();
    let target = T::tol_floor(1e-12, 4.0) * norm;
    let off = |m: &Matrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = norm == T::zero() || off(&m) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps >= MAX_JACOBI_SWEEPS {
            return Err(NumericsError::JacobiNoConvergence { sweeps });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off(&m) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors })
}

pub fn symmetric_eigenvalues_jacobi<T: Real>(a: &Matrix<T>) -> Result<Vec<T>, NumericsError> {
    symmetric_eigen(a).map(|e| e.values)
}

/// All eigenvalues of a real square matrix: balancing, Householder reduction to
/// Hessenberg form, then Francis double-shift QR. Complex pairs come out adjacent.
pub fn eigenvalues_general<T: Real>(a: &Matrix<T>) -> Result<Vec<Complex<T>>, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!("{}x{} matrix is not square", a.rows(), a.cols())));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidParameter("matrix has non-finite entries".into()));
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    hqr(&mut h)
}

/// Diagonal similarity scaling by powers of two so rows and columns have comparable norms.
fn balance<T: Real>(a: &mut Matrix<T>) {
    let n = a.rows();
    let radix = T::lit(2.0);
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = T::zero();
            let mut c = T::zero();
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != T::zero() && r != T::zero() {
                let mut g = r / radix;
                let mut f = T::one();
                let s = c + r;
                while c < g {
                    f *= radix;
                    c *= sqrdx;
                }
                g = r * radix;
                while c > g {
                    f /= radix;
                    c /= sqrdx;
                }
                if (c + r) / f < T::lit(0.95) * s {
                    done = false;
                    let g = T::one() / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// In-place Householder reduction to upper Hessenberg form (similarity transform).
fn hessenberg<T: Real>(a: &mut Matrix<T>) {
    let n = a.rows();
    if n < 3 {
        return;
    }
    for k in 0..(n - 2) {
        let alpha_norm = ((k + 1)..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<T>().sqrt();
        if alpha_norm == T::zero() {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let alpha = if x0 >= T::zero() { -alpha_norm } else { alpha_norm };
        let mut v: Vec<T> = ((k + 1)..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|&x| x * x).sum();
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        // A <- (I - 2vv^T/|v|^2) A
        for j in 0..n {
            let dot: T = v.iter().enumerate().map(|(r, &vr)| vr * a[(k + 1 + r, j)]).sum();
            let f = two * dot / vnorm2;
            for (r, &vr) in v.iter().enumerate() {
                a[(k + 1 + r, j)] -= f * vr;
            }
        }
        // A <- A (I - 2vv^T/|v|^2)
        for i in 0..n {
            let dot: T = v.iter().enumerate().map(|(r, &vr)| a[(i, k + 1 + r)] * vr).sum();
            let f = two * dot / vnorm2;
            for (r, &vr) in v.iter().enumerate() {
                a[(i, k + 1 + r)] -= f * vr;
            }
        }
        for i in (k + 2)..n {
            a[(i, k)] = T::zero();
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys `a`).
fn hqr<T: Real>(a: &mut Matrix<T>) -> Result<Vec<Complex<T>>, NumericsError> {
    let n = a.rows();
    let mut wr = vec![T::zero(); n];
    let mut wi = vec![T::zero(); n];
    let max_total = 100 * n.max(1);
    let mut total_iterations = 0usize;
    let eps = T::epsilon();
    let half = T::lit(0.5);

    let mut anorm = T::zero();
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }

    let mut nn: isize = n as isize - 1;
    let mut t = T::zero();
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nnu = nn as usize;
            // Look for a small subdiagonal element.
            let mut l = nnu;
            while l >= 1 {
                let s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                let s = if s == T::zero() { anorm } else { s };
                if a[(l, l - 1)].abs() <= eps * s {
                    a[(l, l - 1)] = T::zero();
                    break;
                }
                l -= 1;
            }
            let x = a[(nnu, nnu)];
            if l == nnu {
                wr[nnu] = x + t;
                wi[nnu] = T::zero();
                nn -= 1;
                break;
            }
            let y = a[(nnu - 1, nnu - 1)];
            let w = a[(nnu, nnu - 1)] * a[(nnu - 1, nnu)];
            if l == nnu - 1 {
                let p = half * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= T::zero() {
                    let z = p + if p >= T::zero() { z } else { -z };
                    wr[nnu - 1] = x + z;
                    wr[nnu] = if z != T::zero() { x - w / z } else { x + z };
                    wi[nnu - 1] = T::zero();
                    wi[nnu] = T::zero();
                } else {
                    wr[nnu - 1] = x + p;
                    wr[nnu] = x + p;
                    wi[nnu - 1] = -z;
                    wi[nnu] = z;
                }
                nn -= 2;
                break;
            }
            if total_iterations >= max_total {
                return Err(NumericsError::QrNoConvergence { iterations: total_iterations });
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=nnu {
                    a[(i, i)] -= x;
                }
                let s = a[(nnu, nnu - 1)].abs() + a[(nnu - 1, nnu - 2)].abs();
                x = T::lit(0.75) * s;
                y = x;
                w = T::lit(-0.4375) * s * s;
            }
            its += 1;
            total_iterations += 1;

            let mut m = nnu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nnu {
                a[(i, i - 2)] = T::zero();
                if i != m + 2 {
                    a[(i, i - 3)] = T::zero();
                }
            }
            let mut k = m;
            while k < nnu {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = T::zero();
                    if k + 1 != nnu {
                        r = a[(k + 2, k - 1)];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != T::zero() {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s0 = (p * p + q * q + r * r).sqrt();
                let s = if p >= T::zero() { s0 } else { -s0 };
                if s != T::zero() {
                    if k == m {
                        if l != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nnu {
                        let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                        if k + 1 != nnu {
                            pp += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= pp * z;
                        }
                        a[(k + 1, j)] -= pp * y;
                        a[(k, j)] -= pp * x;
                    }
                    let mmin = if nnu < k + 3 { nnu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                        if k + 1 != nnu {
                            pp += z * a[(i, k + 2)];
                            a[(i, k + 2)] -= pp * r;
                        }
                        a[(i, k + 1)] -= pp * q;
                        a[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex::new(re, im)).collect())
}
