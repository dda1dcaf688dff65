//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Relative singular-value cutoff used for pseudo-inverses and rank tests.
pub const RANK_RTOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse with singular values below `rtol * sigma_max` dropped.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.max();
    let cut = rtol * smax;
    let mut out = DMatrix::zeros(n, m);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Numerical rank with the relative cutoff.
pub fn rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > rtol * smax && s > 0.0).count()
}

/// Orthogonal projector onto `ker(a)`, i.e. `I - a^+ a`.
pub fn null_projector(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    DMatrix::identity(n, n) - pinv(a, RANK_RTOL) * a
}

/// Orthonormal basis of `ker(a)` as columns. `a` is `m x n`.
pub fn null_basis(a: &DMatrix<f64>, n: usize, rtol: f64) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to square so the thin SVD returns a complete V.
    let m = a.nrows();
    let rows = m.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.max();
    let kernel: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| !(svd.singular_values[i] > rtol * smax && svd.singular_values[i] > 0.0))
        .collect();
    let mut z = DMatrix::zeros(n, kernel.len());
    for (c, &i) in kernel.iter().enumerate() {
        z.set_column(c, &vt.row(i).transpose());
    }
    z
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Condition number of a symmetric positive definite matrix.
pub fn spd_condition(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    let mut jac = DMatrix::zeros(m, n);
    for (j, c) in cols.into_iter().enumerate() {
        jac.set_column(j, &c);
    }
    jac
}

/// Vertically stack matrices with a common column count.
pub fn vstack(blocks: &[DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Vertically concatenate vectors.
pub fn vcat(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(p);
        r += p.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_is_idempotent_and_annihilates_rows() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0]);
        let p = null_projector(&a, 4);
        assert!((&p * &p - &p).amax() < 1e-12);
        assert!((&a * &p).amax() < 1e-12);
    }

    #[test]
    fn null_basis_spans_kernel() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let z = null_basis(&a, 3, RANK_RTOL);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).amax() < 1e-12);
        assert!((z.transpose() * &z - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&a, RANK_RTOL);
        assert!((&a * &p * &a - &a).amax() < 1e-12);
        assert_eq!(rank(&a, RANK_RTOL), 1);
    }
}
