//! Dense complex linear algebra shared by the model, the optimizer and the
//! baselines.
//!
//! Hermitian matrices are factorized with Cholesky wherever positive
//! definiteness is expected; eigendecompositions are used only where the
//! spectrum itself is needed (local EVD, structured solves, PSD checks).

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative PSD tolerance: min eigenvalue ≥ −PSD_TOL·trace.
pub const PSD_TOL: f64 = 1e-10;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Symmetrizes `m` in place as ½(m + mᴴ).
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = c(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn hermitized(mut m: CMat) -> CMat {
    hermitize(&mut m);
    m
}

/// Cholesky factor of a Hermitian matrix, `None` if not numerically PD.
pub fn cholesky(m: &CMat) -> Option<Cholesky<C64, nalgebra::Dyn>> {
    let chol = Cholesky::new(hermitized(m.clone()))?;
    let l = chol.l_dirty();
    // an indefinite pivot comes back from the complex sqrt as ≈ 0 + i·r
    let real_pivot = |z: C64| z.re > 0.0 && z.re.is_finite() && z.im.abs() <= 1e-8 * z.re;
    if (0..l.nrows()).all(|i| real_pivot(l[(i, i)])) {
        Some(chol)
    } else {
        None
    }
}

/// Natural log-determinant of a Hermitian PD matrix via Cholesky.
pub fn logdet_hpd(m: &CMat) -> Option<f64> {
    let chol = cholesky(m)?;
    let l = chol.l_dirty();
    Some((0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

pub fn inverse_hpd(m: &CMat) -> Option<CMat> {
    cholesky(m).map(|ch| hermitized(ch.inverse()))
}

/// Hermitian eigendecomposition with eigenvalues sorted in descending order;
/// column `j` of the returned matrix is the eigenvector for value `j`.
pub fn eigh_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitized(m.clone()));
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vectors = CMat::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    SymmetricEigen::new(hermitized(m.clone()))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// PSD test with tolerance relative to the trace.
pub fn is_psd(m: &CMat) -> bool {
    let tr = trace(m).re.abs();
    min_eigenvalue(m) >= -PSD_TOL * tr.max(f64::MIN_POSITIVE)
}

pub fn is_hermitian(m: &CMat, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.adjoint()).norm() <= rel_tol * scale
}

pub fn frob2(m: &CMat) -> f64 {
    m.norm_squared()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec_cols(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec_cols(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols, "vector length does not match shape");
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// tr(a b) without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Pseudo-inverse of a Hermitian matrix, discarding eigenvalues below
/// `rel_tol · max|λ|`.
pub fn pinv_hermitian(m: &CMat, rel_tol: f64) -> CMat {
    let eig = SymmetricEigen::new(hermitized(m.clone()));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cut = rel_tol * scale;
    let inv: DVector<C64> = eig
        .eigenvalues
        .map(|v| if v.abs() > cut { c(1.0 / v, 0.0) } else { c(0.0, 0.0) });
    let u = &eig.eigenvectors;
    hermitized(u * CMat::from_diagonal(&inv) * u.adjoint())
}
