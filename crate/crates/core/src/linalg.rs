//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance for definiteness tests, scaled by `max(1, ‖M‖_F)`.
pub const DEFINITENESS_RTOL: f64 = 1e-10;

pub fn definiteness_tol(m: &DMatrix<f64>) -> f64 {
    DEFINITENESS_RTOL * m.norm().max(1.0)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Sorted eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (f64::INFINITY, f64::NEG_INFINITY),
    }
}

/// Solves `a x = b` by LU with partial pivoting followed by one step of
/// iterative refinement. `None` when the factorization is singular.
pub fn lu_solve_refined(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b)?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn lu_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    lu_solve_refined(a, &bm).map(|x| x.column(0).into_owned())
}

/// Row rank by modified Gram-Schmidt on the rows (a QR of `aᵀ`). Returns the
/// rank and the indices of rows that are dependent on earlier rows.
pub fn row_rank(a: &DMatrix<f64>, rtol: f64) -> (usize, Vec<usize>) {
    let scale = (0..a.nrows()).map(|i| a.row(i).norm()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for i in 0..a.nrows() {
        let mut v: DVector<f64> = a.row(i).transpose();
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        // second pass for stability
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let n = v.norm();
        if n > rtol * scale {
            basis.push(v / n);
        } else {
            dependent.push(i);
        }
    }
    (basis.len(), dependent)
}

/// 2-norm condition number; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Numerical rank from singular values.
pub fn numerical_rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > rtol * max).count()
}

pub fn vstack(blocks: &[&DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
