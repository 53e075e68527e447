use super::{Matrix, NumericsError};
use crate::Real;

/// LU factorisation with partial pivoting, `P A = L U` packed into one matrix.
#[derive(Debug, Clone)]
pub struct LuFactors<T: Real> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> LuFactors<T> {
    /// Fails when a pivot falls below `1e-12 * ||A||_inf`.
    pub fn factor(a: &Matrix<T>) -> Result<Self, NumericsError> {
        if !a.is_square() {
            return Err(NumericsError::Dimension(format!("LU needs a square matrix, got {}x{}", a.rows(), a.cols())));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = T::tol_floor(1e-12, 4.0) * a.norm_inf();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot > threshold) || pivot == T::zero() {
                return Err(NumericsError::Singular { column: k, pivot: pivot.to_f64_lossy() });
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let diag = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / diag;
                lu[(i, k)] = factor;
                if factor != T::zero() {
                    for j in (k + 1)..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, NumericsError> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(NumericsError::Dimension(format!("rhs length {} for {n}x{n} system", b.len())));
        }
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s / self.lu[(i, i)];
        }
        Ok(y)
    }

    pub fn solve_matrix(&self, b: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.column(j))?;
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Solves `A x = b` by partial-pivot elimination.
pub fn solve_linear<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>, NumericsError> {
    LuFactors::factor(a)?.solve(b)
}
