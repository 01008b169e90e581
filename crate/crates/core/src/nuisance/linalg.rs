use nalgebra::{DMatrix, DVector};

/// Solve `A x = b` for symmetric positive definite `A` (row-major, p x p).
///
/// Returns `None` when `A` is not numerically positive definite: a Cholesky
/// pivot below `1e-10` times the largest diagonal entry counts as singular.
pub(crate) fn solve_spd(a: &[f64], p: usize, b: &[f64]) -> Option<Vec<f64>> {
    if p == 0 {
        return Some(Vec::new());
    }
    let m = DMatrix::from_row_slice(p, p, a);
    let max_diag = (0..p).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    if (0..p).any(|i| l[(i, i)] * l[(i, i)] < 1e-10 * max_diag) {
        return None;
    }
    let x = chol.solve(&DVector::from_column_slice(b));
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}
