//! Dense helpers shared by the estimators: SPD factorization with a jitter
//! ladder, column-major vec/unvec, and symmetrization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative diagonal jitter tried in order before a factorization is
/// declared failed. Scaled by `trace / n`.
const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    /// Factor `a`, retrying with growing diagonal jitter if needed.
    pub fn new(a: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "{context}: expected square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(context.to_string()));
        }
        let n = a.nrows().max(1);
        let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        for jitter in JITTER_LADDER {
            let mut m = a.clone();
            if jitter > 0.0 {
                for i in 0..a.nrows() {
                    m[(i, i)] += jitter * scale;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Self { chol });
            }
        }
        Err(Error::NotPositiveDefinite { context })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L` with `A = L L'`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}

/// `(A + A') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Column-major vectorization.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]: reshape a vector into `rows x cols`, column-major.
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_unvec_round_trip_is_column_major() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = vec(&a);
        assert_eq!(v.as_slice(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(unvec(&v, 2, 3).unwrap(), a);
        assert!(unvec(&v, 4, 2).is_err());
    }

    #[test]
    fn log_det_matches_determinant() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = SpdFactor::new(&a, "test").unwrap();
        assert!((f.log_det() - 11.0f64.ln()).abs() < 1e-14);
        let inv = f.inverse();
        assert!((&a * &inv - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdFactor::new(&a, "rank one").is_ok());
    }

    #[test]
    fn indefinite_and_nan_are_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            SpdFactor::new(&a, "indefinite"),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let b = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(SpdFactor::new(&b, "nan"), Err(Error::NonFinite(_))));
    }
}
