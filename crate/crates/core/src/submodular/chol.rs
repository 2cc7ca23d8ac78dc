//! Dense symmetric positive-definite Cholesky factorization with column
//! append, sized for the selection budgets and conditioning sets handled by
//! the log-determinant functions.

use crate::error::{Error, Result};
use ndarray::ArrayView2;

/// Smallest pivot accepted before a matrix is reported as not positive
/// definite.
const MIN_PIVOT: f64 = 1e-300;

/// Lower-triangular factor `L` with `A = L L^T`, stored row-packed so that a
/// new trailing row/column can be appended in place.
#[derive(Clone, Debug, Default)]
pub struct CholeskyFactor {
    /// Row-packed lower triangle: row i holds i+1 entries.
    rows: Vec<Vec<f64>>,
}

impl CholeskyFactor {
    pub fn empty() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `i` of the packed lower triangle (`i + 1` entries).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// Factors a full symmetric matrix. Fails with the offending pivot index
    /// when the matrix is not positive definite.
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!(
                "cannot factor {} x {} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut f = Self::empty();
        for j in 0..a.nrows() {
            let col: Vec<f64> = (0..j).map(|i| a[[j, i]]).collect();
            let w = f.forward_solve(&col);
            let pivot = a[[j, j]] - w.iter().map(|v| v * v).sum::<f64>();
            if !(pivot.is_finite() && pivot > MIN_PIVOT) {
                return Err(Error::Numerical(format!(
                    "non-positive-definite pivot {pivot:.3e} at index {j}"
                )));
            }
            f.push_row(w, pivot.sqrt());
        }
        Ok(f)
    }

    /// Solves `L w = b` for the current factor.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.len());
        let mut w = Vec::with_capacity(b.len());
        for (i, row) in self.rows.iter().enumerate() {
            let mut s = b[i];
            for (k, wk) in w.iter().enumerate() {
                s -= row[k] * wk;
            }
            w.push(s / row[i]);
        }
        w
    }

    /// Appends the trailing row `[w..., d]` produced by a rank-growth step:
    /// `w` solves `L w = a_new` and `d^2` is the Schur complement of the new
    /// diagonal entry.
    pub fn push_row(&mut self, mut w: Vec<f64>, d: f64) {
        debug_assert_eq!(w.len(), self.len());
        w.push(d);
        self.rows.push(w);
    }

    /// `log det A = 2 * sum(log diag(L))`; zero for the empty factor.
    pub fn logdet(&self) -> f64 {
        2.0 * self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| row[i].ln())
            .sum::<f64>()
    }

    /// Schur complement of a prospective new column: `diag - ||w||^2` where
    /// `L w = col`. Returns the solved `w` for a later [`push_row`].
    ///
    /// [`push_row`]: CholeskyFactor::push_row
    pub fn schur(&self, col: &[f64], diag: f64) -> (Vec<f64>, f64) {
        let w = self.forward_solve(col);
        let s = diag - w.iter().map(|v| v * v).sum::<f64>();
        (w, s)
    }
}

/// Convenience: `log det` of a full symmetric PD matrix.
pub fn logdet(a: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(CholeskyFactor::factor(a)?.logdet())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_matches_known_determinant() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        // det = 12 - 4 = 8
        let ld = logdet(a.view()).unwrap();
        assert!((ld - 8.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn incremental_append_matches_full_factorization() {
        let a = array![
            [2.0, 0.5, 0.3, 0.1],
            [0.5, 2.0, 0.2, 0.4],
            [0.3, 0.2, 2.0, 0.6],
            [0.1, 0.4, 0.6, 2.0]
        ];
        let full = CholeskyFactor::factor(a.view()).unwrap();
        let mut inc = CholeskyFactor::empty();
        for j in 0..4 {
            let col: Vec<f64> = (0..j).map(|i| a[[j, i]]).collect();
            let (w, s) = inc.schur(&col, a[[j, j]]);
            assert!(s > 0.0);
            inc.push_row(w, s.sqrt());
        }
        assert!((full.logdet() - inc.logdet()).abs() < 1e-12);
    }

    #[test]
    fn non_pd_matrix_reports_pivot() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        let err = CholeskyFactor::factor(a.view()).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn empty_factor_logdet_is_zero() {
        assert_eq!(CholeskyFactor::empty().logdet(), 0.0);
    }
}
