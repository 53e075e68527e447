use super::{Matrix, NumericsError};
use crate::Real;

const TAYLOR_TERMS: usize = 18;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!("expm needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    let norm = a.norm_inf();
    if !norm.is_finite() {
        return Err(NumericsError::InvalidParameter("matrix has non-finite entries".into()));
    }
    let n = a.rows();
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > T::lit(0.5) {
        scaled_norm /= T::lit(2.0);
        squarings += 1;
    }
    let x = a.scale(T::lit(2.0).powi(-(squarings as i32)));
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=TAYLOR_TERMS {
        term = term.matmul(&x).scale(T::one() / T::from_usize_lossy(k));
        result = &result + &term;
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&Matrix::<f64>::zeros(3, 3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn diagonal_exponentiates_entrywise() {
        let e = expm(&Matrix::from_diag(&[1.0, -2.0, 0.5])).unwrap();
        let expected = Matrix::from_diag(&[1f64.exp(), (-2f64).exp(), 0.5f64.exp()]);
        assert!(e.approx_eq(&expected, 1e-13));
    }

    #[test]
    fn rotation_generator() {
        let t: f64 = 7.3;
        let e = expm(&Matrix::from_rows(&[vec![0.0, t], vec![-t, 0.0]])).unwrap();
        let expected = Matrix::from_rows(&[vec![t.cos(), t.sin()], vec![-t.sin(), t.cos()]]);
        assert!(e.approx_eq(&expected, 1e-12));
    }

    #[test]
    fn nilpotent_is_exact_polynomial() {
        let e = expm(&Matrix::from_rows(&[vec![0.0, 3.0], vec![0.0, 0.0]])).unwrap();
        assert!(e.approx_eq(&Matrix::from_rows(&[vec![1.0, 3.0], vec![0.0, 1.0]]), 1e-13));
    }
}
