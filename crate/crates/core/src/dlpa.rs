//! Dykstra-like proximal splitting for
//! `min |Y - T|_F^2 + tr(T^T Lr T) + tr(T Lc T^T)`.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Mat};

#[derive(Debug, Clone)]
pub struct DlpaResult {
    pub theta: Mat,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration.
    pub trace: Vec<f64>,
}

pub fn cartesian_objective(y: &Mat, theta: &Mat, lr: &Mat, lc: &Mat) -> f64 {
    let r = y - theta;
    let a = (theta.transpose() * lr * theta).trace();
    let b = (theta * lc * theta.transpose()).trace();
    r.norm_squared() + a + b
}

/// Alternate the row proximal map `(I + Lr)^{-1}` and the column proximal map
/// `(I + Lc)^{-1}` with Dykstra corrections. Stops when the relative change of the
/// iterate falls below `tol`.
pub fn dlpa(y: &Mat, lr: &Mat, lc: &Mat, tol: f64, max_iter: usize) -> Result<DlpaResult> {
    let r = dlpa_iterate(y, lr, lc, tol, max_iter)?;
    if r.converged {
        Ok(r)
    } else {
        Err(Error::NotConverged(format!(
            "DLPA did not converge in {max_iter} iterations"
        )))
    }
}

/// Same iteration as [`dlpa`] but returns the last iterate when `max_iter` is reached.
pub fn dlpa_iterate(y: &Mat, lr: &Mat, lc: &Mat, tol: f64, max_iter: usize) -> Result<DlpaResult> {
    let (n1, n2) = (y.nrows(), y.ncols());
    if lr.nrows() != n1 || lr.ncols() != n1 || lc.nrows() != n2 || lc.ncols() != n2 {
        return Err(Error::Dimension(format!(
            "data is {n1}x{n2}, penalties are {}x{} and {}x{}",
            lr.nrows(),
            lr.ncols(),
            lc.nrows(),
            lc.ncols()
        )));
    }
    let row = cholesky(&(Mat::identity(n1, n1) + lr), "I + Lr")?;
    let col = cholesky(&(Mat::identity(n2, n2) + lc), "I + Lc")?;

    let mut x = y.clone();
    let mut p = Mat::zeros(n1, n2);
    let mut q = Mat::zeros(n1, n2);
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        let mid = row.solve(&(&x + &p));
        p += &x - &mid;
        let shifted = &mid + &q;
        // (shifted) (I + Lc)^{-1} = ((I + Lc)^{-1} shifted^T)^T
        let next = col.solve(&shifted.transpose()).transpose();
        q = shifted - &next;
        let change = (&next - &x).norm();
        let scale = next.norm().max(1.0);
        x = next;
        trace.push(cartesian_objective(y, &x, lr, lc));
        if change <= tol * scale {
            return Ok(DlpaResult {
                theta: x,
                iterations: it,
                converged: true,
                trace,
            });
        }
    }
    Ok(DlpaResult {
        theta: x,
        iterations: max_iter,
        converged: false,
        trace,
    })
}

/// One pass from zero corrections: `(I + Lr)^{-1} Y (I + Lc)^{-1}`.
pub fn dlpa_first_iteration(y: &Mat, lr: &Mat, lc: &Mat) -> Result<Mat> {
    let (n1, n2) = (y.nrows(), y.ncols());
    let row = cholesky(&(Mat::identity(n1, n1) + lr), "I + Lr")?;
    let col = cholesky(&(Mat::identity(n2, n2) + lc), "I + Lc")?;
    Ok(col.solve(&row.solve(y).transpose()).transpose())
}

/// Direct solve of `(I + Lc (x) I + I (x) Lr) vec(T) = vec(Y)`; reference path for small sizes.
pub fn cartesian_direct(y: &Mat, lr: &Mat, lc: &Mat) -> Result<Mat> {
    let (n1, n2) = (y.nrows(), y.ncols());
    let n = n1 * n2;
    let mut a = Mat::identity(n, n);
    for k in 0..n2 {
        for i in 0..n1 {
            for j in 0..n1 {
                a[(k * n1 + i, k * n1 + j)] += lr[(i, j)];
            }
        }
    }
    for k in 0..n2 {
        for l in 0..n2 {
            for i in 0..n1 {
                a[(k * n1 + i, l * n1 + i)] += lc[(k, l)];
            }
        }
    }
    let ch = cholesky(&a, "Cartesian system")?;
    let v = ch.solve(&Mat::from_column_slice(n, 1, y.as_slice()));
    Ok(Mat::from_column_slice(n1, n2, v.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn laplacian(g: &Graph, scale: f64) -> Mat {
        let w: Vec<f64> = (0..g.m()).map(|e| scale * (1.0 + (e % 3) as f64)).collect();
        g.laplacian(&w).unwrap()
    }

    #[test]
    fn zero_penalties_return_data() {
        let y = Mat::from_fn(3, 2, |i, j| (i as f64) - 2.0 * j as f64);
        let r = dlpa(&y, &Mat::zeros(3, 3), &Mat::zeros(2, 2), 1e-12, 10).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.theta - y).amax() < 1e-15);
    }

    #[test]
    fn matches_direct_solve() {
        let y = Mat::from_fn(6, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let lr = laplacian(&Graph::chain(6), 0.7);
        let lc = laplacian(&Graph::cycle(5), 1.3);
        let r = dlpa(&y, &lr, &lc, 1e-13, 10_000).unwrap();
        let d = cartesian_direct(&y, &lr, &lc).unwrap();
        assert!((&r.theta - &d).norm() <= 1e-9 * d.norm());
        assert!(r
            .trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
    }

    #[test]
    fn first_iteration_closed_form() {
        let y = Mat::from_fn(4, 3, |i, j| (i * j) as f64 - 1.0);
        let lr = laplacian(&Graph::chain(4), 1.0);
        let lc = laplacian(&Graph::chain(3), 2.0);
        assert!(dlpa(&y, &lr, &lc, 0.0, 1).is_err());
        let one = dlpa_iterate(&y, &lr, &lc, 0.0, 1).unwrap();
        let first = dlpa_first_iteration(&y, &lr, &lc).unwrap();
        let a = (Mat::identity(4, 4) + &lr).try_inverse().unwrap();
        let b = (Mat::identity(3, 3) + &lc).try_inverse().unwrap();
        assert!((&first - a * &y * b).amax() < 1e-12);
        assert!((one.theta - first).amax() < 1e-12);
    }
}
