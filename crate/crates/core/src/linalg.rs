//! Dense linear-algebra helpers shared across the crate.
//!
//! Covariance matrices are kept symmetric by construction: every helper that
//! returns a covariance runs it through [`symmetrize`] so that floating-point
//! drift cannot accumulate into asymmetry over long recursions.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative eigenvalue tolerance below which a symmetric matrix is still
/// accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-9;

/// Diagonal jitter added before factorization when a covariance is singular.
pub const FACTOR_JITTER: f64 = 1e-12;

/// Returns `(m + m') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Spectral radius of a square matrix: the largest eigenvalue modulus,
/// computed from the dense (complex) eigenvalue set rather than power
/// iteration, so complex-conjugate dominant pairs are handled exactly.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Validation(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Computation(
            "spectral radius of a matrix with non-finite entries".into(),
        ));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eigs = m.complex_eigenvalues();
    Ok(eigs.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Checks that a symmetric matrix is positive semidefinite up to `-PSD_TOL`
/// relative to its largest eigenvalue (exact zero matrices pass).
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let sym = symmetrize(m);
    let eigs = sym.symmetric_eigenvalues();
    let max_ev = eigs.iter().cloned().fold(0.0, f64::max);
    let tol = if max_ev > 0.0 { PSD_TOL * max_ev } else { PSD_TOL };
    eigs.iter().all(|&ev| ev >= -tol)
}

/// Factor `m = L L'` for sampling from `N(0, m)`.
///
/// Fast path is a Cholesky factorization. Exactly-zero covariances (noiseless
/// models) yield the zero factor so simulated noise is exactly zero. Singular
/// but nonzero covariances first retry with `FACTOR_JITTER * I` added, then
/// fall back to a symmetric eigendecomposition with negative eigenvalues
/// clamped to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Validation(format!(
            "covariance factor needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if m.iter().all(|&x| x == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let sym = symmetrize(m);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let jittered = &sym + DMatrix::<f64>::identity(n, n) * FACTOR_JITTER;
    if let Some(chol) = jittered.cholesky() {
        return Ok(chol.l());
    }
    // Indefinite-looking input: eigendecompose and clamp.
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = if max_ev > 0.0 { PSD_TOL * max_ev } else { PSD_TOL };
    if eig.eigenvalues.iter().any(|&ev| ev < -tol) {
        return Err(Error::Validation(
            "covariance is not positive semidefinite".into(),
        ));
    }
    let mut factor = eig.eigenvectors.clone();
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        for i in 0..n {
            factor[(i, j)] *= s;
        }
    }
    Ok(factor)
}

/// Inverts a symmetric positive definite matrix, regularizing first when it
/// is near-singular.
///
/// When the (symmetric) condition number exceeds `1e10`, `eps * I` with
/// `eps = 1e-8 * trace / dim` is added before inversion. Returns the inverse
/// together with the regularization actually applied (zero on the fast path).
pub fn regularized_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Validation("inverse needs a nonempty square matrix".into()));
    }
    let n = m.nrows();
    let sym = symmetrize(m);
    let eigs = sym.symmetric_eigenvalues();
    let max_ev = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ev = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut eps = 0.0;
    let ill = min_ev <= 0.0 || max_ev / min_ev > 1e10;
    let target = if ill {
        eps = 1e-8 * sym.trace() / n as f64;
        if eps <= 0.0 {
            return Err(Error::Computation(
                "cannot regularize a non-positive-trace matrix".into(),
            ));
        }
        &sym + DMatrix::<f64>::identity(n, n) * eps
    } else {
        sym.clone()
    };
    let inv = target
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| target.try_inverse())
        .ok_or_else(|| Error::Computation("matrix inversion failed".into()))?;
    Ok((symmetrize(&inv), eps))
}

/// Quadratic form `v' M v`.
pub fn quadratic_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * v).dot(v)
}

/// Converts a matrix to row-major nested vectors (JSON layout).
pub fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Builds a matrix from row-major nested vectors, checking rectangularity.
pub fn rows_to_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Validation("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Validation("matrix has no columns".into()));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation("matrix rows have unequal lengths".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let s = symmetrize(&m);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert_eq!(s, expected);
    }

    #[test]
    fn spectral_radius_of_nilpotent_is_zero() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_sees_complex_pairs() {
        // Rotation by 90 degrees scaled by 0.7: eigenvalues +-0.7i.
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.7, 0.7, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_rejects_non_square() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(spectral_radius(&m).is_err());
    }

    #[test]
    fn psd_factor_of_zero_matrix_is_exactly_zero() {
        let z = DMatrix::zeros(3, 3);
        let l = psd_factor(&z).unwrap();
        assert!(l.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn psd_factor_reproduces_spd_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = psd_factor(&m).unwrap();
        let back = &l * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[(i, j)], m[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn psd_factor_handles_rank_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let l = psd_factor(&m).unwrap();
        let back = &l * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[(i, j)], m[(i, j)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_factor(&m).is_err());
    }

    #[test]
    fn regularized_inverse_round_trips() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (inv, eps) = regularized_inverse(&m).unwrap();
        assert_eq!(eps, 0.0);
        let id = &m * &inv;
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(id[(i, j)], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn regularized_inverse_regularizes_singular_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (inv, eps) = regularized_inverse(&m).unwrap();
        assert!(eps > 0.0);
        assert!(inv.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = mat_to_rows(&m);
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(rows_to_mat(&rows).unwrap(), m);
    }

    #[test]
    fn rows_to_mat_rejects_ragged() {
        assert!(rows_to_mat(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
