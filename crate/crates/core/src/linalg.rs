//! Small dense helpers shared by the solvers.

use nalgebra::DMatrix;

/// Relative cutoff for singular values in pseudoinverses.
pub const PINV_RTOL: f64 = 1e-12;

/// Moore-Penrose pseudoinverse, truncating singular values below
/// `rtol · σ_max`.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    // the iterative SVD need not terminate on non-finite input
    if !a.iter().all(|x| x.is_finite()) {
        return DMatrix::from_element(cols, rows, f64::NAN);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = rtol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(cols, rows);
    for (s, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma <= cutoff {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..cols {
            let vi = vt[(s, i)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..rows {
                out[(i, j)] += vi * u[(j, s)];
            }
        }
    }
    out
}

/// Minimum-norm least-squares solution of `a x = b` through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    pinv(a, rtol) * b
}

/// Solve a symmetric positive semi-definite system, trying Cholesky first and
/// falling back to an eigen-decomposition pseudoinverse.
pub fn solve_psd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if !a.iter().chain(b.iter()).all(|x| x.is_finite()) {
        return DMatrix::from_element(a.ncols(), b.ncols(), f64::NAN);
    }
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let eig = a.clone().symmetric_eigen();
    let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cutoff = emax * 1e-14;
    let q = &eig.eigenvectors;
    let qtb = q.transpose() * b;
    let mut scaled = qtb;
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        let factor = if e > cutoff { 1.0 / e } else { 0.0 };
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= factor;
        }
    }
    q * scaled
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let p = pinv(&a, PINV_RTOL);
        // Penrose condition A A+ A = A
        let back = &a * &p * &a;
        assert!((back - &a).norm() < 1e-12);
    }

    #[test]
    fn non_finite_input_gives_nan() {
        let a = DMatrix::from_row_slice(2, 2, &[f64::INFINITY, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(solve_psd(&a, &b).iter().all(|x| x.is_nan()));
        assert!(pinv(&a, PINV_RTOL).iter().all(|x| x.is_nan()));
    }

    #[test]
    fn solve_psd_falls_back_on_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[2.0, 2.0]);
        let x = solve_psd(&a, &b);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((x[(1, 0)] - 1.0).abs() < 1e-12);
    }
}
