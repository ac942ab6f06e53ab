//! Small dense helpers on unweighted or weighted edge lists.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Edge, OracleError, Result};

pub fn laplacian(p: usize, edges: &[Edge], weights: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(p, p);
    for (&(i, j), &w) in edges.iter().zip(weights) {
        l[(i, i)] += w;
        l[(j, j)] += w;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
    }
    l
}

/// `ln det` of a symmetric positive definite matrix; the empty matrix gives 0.
pub fn logdet_pd(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let ch = m
        .clone()
        .cholesky()
        .ok_or(OracleError::NotPositiveDefinite(what))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Laplacian with its last row and column removed.
pub fn reduced(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    l.view((0, 0), (p - 1, p - 1)).into_owned()
}

/// `(e_i - e_j)^T L^+ (e_i - e_j)` for every edge, through `(L + 11^T / p)^{-1}`.
pub fn resistances(p: usize, edges: &[Edge], weights: &[f64]) -> Result<Vec<f64>> {
    let l = laplacian(p, edges, weights).add_scalar(1.0 / p as f64);
    let inv = l
        .cholesky()
        .ok_or(OracleError::NotPositiveDefinite("grounded laplacian"))?
        .inverse();
    Ok(edges
        .iter()
        .map(|&(i, j)| inv[(i, i)] + inv[(j, j)] - 2.0 * inv[(i, j)])
        .collect())
}

/// Orthonormal basis (as columns) of the complement of `c`.
pub fn complement_basis(c: &[f64]) -> Result<DMatrix<f64>> {
    let s = c.len();
    let v = DVector::from_column_slice(c);
    let norm2 = v.norm_squared();
    if !(norm2 > 0.0) {
        return Err(OracleError::Invalid("constraint vector is zero".into()));
    }
    let proj = DMatrix::identity(s, s) - &v * v.transpose() / norm2;
    let eig = SymmetricEigen::new(proj);
    let keep: Vec<usize> = (0..s).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    Ok(DMatrix::from_fn(s, keep.len(), |i, k| {
        eig.eigenvectors[(i, keep[k])]
    }))
}

/// Solve `(I + I (x) Lr + Lc (x) I) vec(T) = vec(Y)` with the Kronecker products formed explicitly.
pub fn cartesian_vec_solve(
    y: &DMatrix<f64>,
    lr: &DMatrix<f64>,
    lc: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n1, n2) = y.shape();
    let n = n1 * n2;
    let a = DMatrix::identity(n, n)
        + DMatrix::<f64>::identity(n2, n2).kronecker(lr)
        + lc.kronecker(&DMatrix::<f64>::identity(n1, n1));
    let lu = a.lu();
    let v = lu
        .solve(&DVector::from_column_slice(y.as_slice()))
        .ok_or(OracleError::Invalid("singular vec system".into()))?;
    Ok(DMatrix::from_column_slice(n1, n2, v.as_slice()))
}
