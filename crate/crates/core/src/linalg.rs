//! Small complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Real part of `v^H M v`.
pub fn quad_form(m: &CMat, v: &CVec) -> f64 {
    v.dotc(&(m * v)).re
}

pub fn outer(a: &CVec, b: &CVec) -> CMat {
    a * b.adjoint()
}

pub fn diag_real(d: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(d.len(), d.iter().map(|&x| c(x, 0.0))))
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Relative Hermitian defect `||M - M^H||_F / max(1, ||M||_F)`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).norm() / m.norm().max(1.0)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `[Re -Im; Im Re]` embedding of a complex matrix.
pub fn real_embedding(m: &CMat) -> DMatrix<f64> {
    let (r, k) = m.shape();
    let mut out = DMatrix::<f64>::zeros(2 * r, 2 * k);
    for i in 0..r {
        for j in 0..k {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, k + j)] = -z.im;
            out[(r + i, j)] = z.im;
            out[(r + i, k + j)] = z.re;
        }
    }
    out
}

/// Solve the Hermitian positive definite system `A x = b`.
pub fn solve_hpd(a: &CMat, b: &CVec) -> Option<CVec> {
    let chol = hermitian_part(a).cholesky()?;
    Some(chol.solve(b))
}

/// `log2 det(A)` for Hermitian positive definite `A`.
pub fn log2_det_hpd(a: &CMat) -> Option<f64> {
    let chol = hermitian_part(a).cholesky()?;
    let l = chol.l();
    Some(2.0 * l.diagonal().iter().map(|z| z.re.ln()).sum::<f64>() / std::f64::consts::LN_2)
}

pub fn norm_sqr(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
