//! Shared Gaussian kernels: constraint-subspace bases, restricted determinants,
//! equality-constrained quadratic fits and degenerate densities.

use nalgebra::{Cholesky, Dyn};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{logdet_spd, Mat, Vector};

/// Orthonormal basis of the orthogonal complement of a vector `w`, stored as a Householder reflector.
///
/// With `H = I - 2 v v^T / (v^T v)` mapping `w/|w|` to a multiple of `e_1`, the basis is the
/// last `p - 1` columns of `H`.
#[derive(Debug, Clone)]
pub struct WperpBasis {
    w: Vector,
    v: Vector,
    vv: f64,
}

impl WperpBasis {
    pub fn new(w: &[f64]) -> Result<Self> {
        let p = w.len();
        if p == 0 {
            return Err(Error::Dimension("empty grounding vector".into()));
        }
        let w = Vector::from_column_slice(w);
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter(
                "grounding vector must be nonzero and finite".into(),
            ));
        }
        let mut v = &w / norm;
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign;
        let vv = v.norm_squared();
        Ok(WperpBasis { w, v, vv })
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    /// Dimension of the subspace, `p - 1`.
    pub fn dim(&self) -> usize {
        self.w.len() - 1
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    fn reflect(&self, x: &Vector) -> Vector {
        let c = 2.0 * self.v.dot(x) / self.vv;
        x - &self.v * c
    }

    /// Dense `p x (p-1)` basis matrix.
    pub fn matrix(&self) -> Mat {
        let p = self.p();
        let h = Mat::identity(p, p) - (&self.v * self.v.transpose()) * (2.0 / self.vv);
        h.columns(1, p - 1).into_owned()
    }

    /// `B phi` for `phi` of length `p - 1`.
    pub fn lift(&self, phi: &Vector) -> Vector {
        let mut x = Vector::zeros(self.p());
        x.rows_mut(1, self.dim()).copy_from(phi);
        self.reflect(&x)
    }

    /// `B^T x` for `x` of length `p`.
    pub fn coords(&self, x: &Vector) -> Vector {
        self.reflect(x).rows(1, self.dim()).into_owned()
    }

    /// `B^T M` for a `p x k` matrix `M`.
    pub fn coords_mat(&self, m: &Mat) -> Mat {
        let vt_m = self.v.transpose() * m;
        let hm = m - &self.v * (vt_m * (2.0 / self.vv));
        hm.rows(1, self.dim()).into_owned()
    }

    /// `B^T M B` for symmetric `M`, computed with rank-one updates in `O(p^2)`.
    pub fn restrict(&self, m: &Mat) -> Mat {
        let p = self.p();
        let s = 2.0 / self.vv;
        let mv = m * &self.v;
        let vmv = self.v.dot(&mv);
        let mut h = m.clone();
        for i in 0..p {
            for j in 0..p {
                h[(i, j)] += -s * self.v[i] * mv[j] - s * mv[i] * self.v[j]
                    + s * s * vmv * self.v[i] * self.v[j];
            }
        }
        h.view((1, 1), (p - 1, p - 1)).into_owned()
    }
}

/// `log det(B^T L B)` for a Laplacian-like `L` with `L 1 = 0`.
///
/// Returns negative infinity when the restricted matrix is singular.
pub fn logdet_w(l: &Mat, basis: &WperpBasis) -> Result<f64> {
    let p = basis.p();
    if l.nrows() != p || l.ncols() != p {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, basis has p={p}",
            l.nrows(),
            l.ncols()
        )));
    }
    let sum_w: f64 = basis.w().iter().sum();
    if sum_w.abs() <= 1e-12 * basis.w().norm() * (p as f64).sqrt() {
        return Err(Error::InvalidParameter(
            "grounding vector is orthogonal to the ones vector".into(),
        ));
    }
    Ok(logdet_spd(&basis.restrict(l)).unwrap_or(f64::NEG_INFINITY))
}

/// Linear design: either the identity (`n = p`) or a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Identity(usize),
    Dense(Mat),
}

impl Design {
    pub fn n(&self) -> usize {
        match self {
            Design::Identity(n) => *n,
            Design::Dense(x) => x.nrows(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Design::Identity(n) => *n,
            Design::Dense(x) => x.ncols(),
        }
    }

    pub fn apply(&self, m: &Mat) -> Mat {
        match self {
            Design::Identity(_) => m.clone(),
            Design::Dense(x) => x * m,
        }
    }

    pub fn apply_vec(&self, v: &Vector) -> Vector {
        match self {
            Design::Identity(_) => v.clone(),
            Design::Dense(x) => x * v,
        }
    }

    pub fn transpose_apply(&self, m: &Mat) -> Mat {
        match self {
            Design::Identity(_) => m.clone(),
            Design::Dense(x) => x.transpose() * m,
        }
    }

    /// `X^T X`.
    pub fn gram(&self) -> Mat {
        match self {
            Design::Identity(n) => Mat::identity(*n, *n),
            Design::Dense(x) => x.transpose() * x,
        }
    }

    pub fn to_dense(&self) -> Mat {
        match self {
            Design::Identity(n) => Mat::identity(*n, *n),
            Design::Dense(x) => x.clone(),
        }
    }
}

/// Precision `nu` of the intercept-like coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    Finite(f64),
    Infinite,
}

impl Precision {
    pub fn from_f64(nu: f64) -> Result<Self> {
        if nu.is_infinite() && nu > 0.0 {
            Ok(Precision::Infinite)
        } else if nu >= 0.0 && nu.is_finite() {
            Ok(Precision::Finite(nu))
        } else {
            Err(Error::InvalidParameter(format!(
                "nu must lie in [0, inf], got {nu}"
            )))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Precision::Finite(v) => v,
            Precision::Infinite => f64::INFINITY,
        }
    }
}

/// Minimizer of `|Y - a alpha^T - X theta|_F^2 + nu |alpha|^2 + tr(theta^T L theta)`
/// subject to `c^T theta = 0` column-wise.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub theta: Mat,
    pub objective: f64,
}

/// Pieces of the quadratic problem that are shared by fitting and scoring.
pub struct QpProblem<'a> {
    /// Response, `n x d`.
    pub y: &'a Mat,
    /// Column multiplying `alpha`, length `n`.
    pub a: &'a Vector,
    /// Design acting on `theta`, `n x p`.
    pub x: &'a Design,
    /// Penalty matrix, `p x p`.
    pub l: &'a Mat,
    /// Constraint vector, length `p`.
    pub c: &'a [f64],
    pub nu: Precision,
}

impl QpProblem<'_> {
    fn check(&self) -> Result<()> {
        let (n, p) = (self.x.n(), self.x.p());
        if self.y.nrows() != n || self.a.len() != n {
            return Err(Error::Dimension(format!(
                "response has {} rows, design has {n}",
                self.y.nrows()
            )));
        }
        if self.l.nrows() != p || self.l.ncols() != p || self.c.len() != p {
            return Err(Error::Dimension(format!(
                "penalty/constraint sizes do not match p={p}"
            )));
        }
        Ok(())
    }

    /// Objective value at a given point.
    pub fn objective(&self, alpha: &[f64], theta: &Mat) -> f64 {
        let fit = self.x.apply(theta);
        let mut f = 0.0;
        for k in 0..self.y.ncols() {
            let ak = if matches!(self.nu, Precision::Infinite) {
                0.0
            } else {
                alpha[k]
            };
            for i in 0..self.y.nrows() {
                let r = self.y[(i, k)] - self.a[i] * ak - fit[(i, k)];
                f += r * r;
            }
            if let Precision::Finite(nu) = self.nu {
                f += nu * ak * ak;
            }
            let t = theta.column(k);
            f += t.dot(&(self.l * t));
        }
        f
    }

    /// Solve by reparameterizing `theta = B phi` on the constraint subspace.
    pub fn solve(&self) -> Result<QpSolution> {
        self.check()?;
        let basis = WperpBasis::new(self.c)?;
        let p = self.x.p();
        let d = self.y.ncols();
        let has_alpha = !matches!(self.nu, Precision::Infinite);
        let off = usize::from(has_alpha);
        let dim = basis.dim() + off;

        let xb = self.x.apply(&basis.matrix());
        let xty = xb.transpose() * self.y;
        let mut h = Mat::zeros(dim, dim);
        let mut rhs = Mat::zeros(dim, d);
        let restricted = basis.restrict(&(self.x.gram() + self.l));
        h.view_mut((off, off), (basis.dim(), basis.dim()))
            .copy_from(&restricted);
        rhs.view_mut((off, 0), (basis.dim(), d)).copy_from(&xty);
        if let Precision::Finite(nu) = self.nu {
            h[(0, 0)] = self.a.norm_squared() + nu;
            let xa = xb.transpose() * self.a;
            for i in 0..basis.dim() {
                h[(0, 1 + i)] = xa[i];
                h[(1 + i, 0)] = xa[i];
            }
            let aty = self.y.transpose() * self.a;
            for k in 0..d {
                rhs[(0, k)] = aty[k];
            }
        }
        let sol = if dim == 0 {
            Mat::zeros(0, d)
        } else {
            let ch: Cholesky<f64, Dyn> = Cholesky::new(h).ok_or_else(|| {
                Error::Singular("reduced normal equations are not positive definite".into())
            })?;
            ch.solve(&rhs)
        };
        let mut theta = Mat::zeros(p, d);
        let mut alpha = vec![0.0; d];
        for k in 0..d {
            if has_alpha {
                alpha[k] = sol[(0, k)];
            }
            let phi = sol.view((off, k), (basis.dim(), 1)).column(0).into_owned();
            theta.set_column(k, &basis.lift(&phi));
        }
        let objective = self.objective(&alpha, &theta);
        Ok(QpSolution {
            alpha,
            theta,
            objective,
        })
    }

    /// Gradient of the objective in `theta` projected on the constraint subspace, and the
    /// alpha-gradient; returns the largest absolute entry.
    pub fn kkt_residual(&self, alpha: &[f64], theta: &Mat) -> f64 {
        let basis = WperpBasis::new(self.c).expect("constraint vector was validated");
        let d = self.y.ncols();
        let mut worst: f64 = 0.0;
        for k in 0..d {
            let ak = if matches!(self.nu, Precision::Infinite) {
                0.0
            } else {
                alpha[k]
            };
            let t = theta.column(k).into_owned();
            let fit = self.x.apply_vec(&t);
            let r = self.y.column(k) - self.a * ak - fit;
            let g = self
                .x
                .transpose_apply(&Mat::from_column_slice(r.len(), 1, r.as_slice()))
                .column(0)
                * -2.0
                + (self.l * &t) * 2.0;
            worst = worst.max(basis.coords(&g.into_owned()).amax());
            if let Precision::Finite(nu) = self.nu {
                let ga = -2.0 * self.a.dot(&r) + 2.0 * nu * ak;
                worst = worst.max(ga.abs());
            }
        }
        worst
    }
}

/// Convenience wrapper for the standard model `y ~ X(alpha w + theta)` with `w^T theta = 0`.
pub fn constrained_qp(
    y: &Mat,
    x: &Design,
    w: &[f64],
    nu: Precision,
    l: &Mat,
) -> Result<QpSolution> {
    let a = x.apply_vec(&Vector::from_column_slice(w));
    QpProblem {
        y,
        a: &a,
        x,
        l,
        c: w,
        nu,
    }
    .solve()
}

/// Solve `(I + L_w) X = R` for a weighted graph Laplacian `L_w`.
///
/// Trees (and forests) are eliminated leaf-first in `O(p)` per column; other graphs use a dense Cholesky.
pub fn solve_identity_plus_laplacian(g: &Graph, weights: &[f64], rhs: &Mat) -> Result<Mat> {
    let p = g.p();
    if rhs.nrows() != p || weights.len() != g.m() {
        return Err(Error::Dimension(
            "system size does not match the graph".into(),
        ));
    }
    if g.m() + g.components().0 == p {
        return Ok(solve_forest(g, weights, rhs));
    }
    let a = Mat::identity(p, p) + g.laplacian(weights)?;
    Ok(crate::linalg::cholesky(&a, "I + L")?.solve(rhs))
}

fn solve_forest(g: &Graph, weights: &[f64], rhs: &Mat) -> Mat {
    let p = g.p();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
    let mut diag = vec![1.0; p];
    for (&(i, j), &w) in g.edges().iter().zip(weights) {
        adj[i].push((j, w));
        adj[j].push((i, w));
        diag[i] += w;
        diag[j] += w;
    }
    // BFS order with parent links; roots have no parent.
    let mut order = Vec::with_capacity(p);
    let mut parent: Vec<Option<(usize, f64)>> = vec![None; p];
    let mut seen = vec![false; p];
    for root in 0..p {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let start = order.len();
        order.push(root);
        let mut head = start;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &(u, w) in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    parent[u] = Some((v, w));
                    order.push(u);
                }
            }
        }
    }
    let mut x = rhs.clone();
    let d = rhs.ncols();
    // Eliminate from the leaves: off-diagonal entries are -w.
    for &v in order.iter().rev() {
        if let Some((u, w)) = parent[v] {
            let f = w / diag[v];
            diag[u] -= w * f;
            for k in 0..d {
                let t = x[(v, k)];
                x[(u, k)] += f * t;
            }
        }
    }
    for &v in order.iter() {
        for k in 0..d {
            let mut t = x[(v, k)];
            if let Some((u, w)) = parent[v] {
                t += w * x[(u, k)];
            }
            x[(v, k)] = t / diag[v];
        }
    }
    x
}

/// Log density of a Gaussian supported on `mean + span(V)` with precision `omega` restricted to that span.
pub fn degenerate_gaussian_logpdf(x: &Vector, mean: &Vector, omega: &Mat, v: &Mat) -> Result<f64> {
    let p = x.len();
    if mean.len() != p || omega.nrows() != p || omega.ncols() != p || v.nrows() != p {
        return Err(Error::Dimension(
            "inconsistent sizes in degenerate density".into(),
        ));
    }
    let r = v.ncols();
    let q = v.clone().qr().q();
    let q = q.columns(0, r).into_owned();
    let diff = x - mean;
    let coords = q.transpose() * &diff;
    let off = (&diff - &q * &coords).norm();
    if off > 1e-8 * (1.0 + diff.norm()) {
        return Err(Error::InvalidParameter(format!(
            "point is off the support (distance {off:e})"
        )));
    }
    let restricted = q.transpose() * omega * &q;
    let ld = logdet_spd(&restricted)
        .ok_or_else(|| Error::Singular("restricted precision is not positive definite".into()))?;
    let quad = diff.dot(&(omega * &diff));
    Ok(-0.5 * r as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * ld - 0.5 * quad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_properties() {
        let w = [0.3, -1.2, 2.0, 0.7];
        let b = WperpBasis::new(&w).unwrap();
        let m = b.matrix();
        let wv = Vector::from_column_slice(&w);
        assert!((m.transpose() * &m - Mat::identity(3, 3)).amax() < 1e-12);
        assert!((m.transpose() * &wv).amax() < 1e-12);
        let proj = Mat::identity(4, 4) - &wv * wv.transpose() / wv.norm_squared();
        assert!((&m * m.transpose() - proj).amax() < 1e-12);
        let s = Mat::from_fn(4, 4, |i, j| {
            ((i + 1) * (j + 2) % 5) as f64 + if i == j { 3.0 } else { 0.0 }
        });
        let s = &s + s.transpose();
        assert!((b.restrict(&s) - m.transpose() * &s * &m).amax() < 1e-12);
    }

    #[test]
    fn logdet_w_examples() {
        let tri = Graph::complete(3).unit_laplacian();
        let b = WperpBasis::new(&[1.0; 3]).unwrap();
        assert!((logdet_w(&tri, &b).unwrap() - 9f64.ln()).abs() < 1e-12);
        let one = Graph::chain(2).laplacian(&[2.5]).unwrap();
        let b = WperpBasis::new(&[1.0; 2]).unwrap();
        assert!((logdet_w(&one, &b).unwrap() - 5f64.ln()).abs() < 1e-12);
        let bad = WperpBasis::new(&[1.0, -1.0]).unwrap();
        assert!(logdet_w(&one, &bad).is_err());
    }

    #[test]
    fn qp_identity_design() {
        let y = Mat::from_column_slice(4, 1, &[1.0, 4.0, -2.0, 5.0]);
        let x = Design::Identity(4);
        let sol =
            constrained_qp(&y, &x, &[1.0; 4], Precision::Finite(0.0), &Mat::zeros(4, 4)).unwrap();
        assert!((sol.alpha[0] - 2.0).abs() < 1e-12);
        for i in 0..4 {
            assert!((sol.theta[(i, 0)] - (y[(i, 0)] - 2.0)).abs() < 1e-12);
        }
        assert!(sol.objective.abs() < 1e-20);
    }

    #[test]
    fn qp_infinite_precision_is_restricted_ridge() {
        let x = Mat::from_fn(5, 3, |i, j| ((i * 3 + j * 7) % 5) as f64 - 1.5);
        let y = Mat::from_column_slice(5, 1, &[1.0, 0.0, 2.0, -1.0, 0.5]);
        let l = Graph::chain(3).laplacian(&[0.5, 2.0]).unwrap();
        let w = [1.0, 1.0, 1.0];
        let sol =
            constrained_qp(&y, &Design::Dense(x.clone()), &w, Precision::Infinite, &l).unwrap();
        assert_eq!(sol.alpha, vec![0.0]);
        let b = WperpBasis::new(&w).unwrap().matrix();
        let h = b.transpose() * (x.transpose() * &x + &l) * &b;
        let phi = h.lu().solve(&(b.transpose() * x.transpose() * &y)).unwrap();
        assert!((&b * phi - &sol.theta).amax() < 1e-12);
    }

    #[test]
    fn forest_solver_matches_dense() {
        let r = Mat::from_fn(7, 2, |i, k| (i as f64 - 3.0) * (k as f64 + 1.0));
        for g in [
            Graph::chain(7),
            Graph::star(7),
            Graph::new(7, vec![(0, 1), (2, 3), (3, 4), (6, 5)]).unwrap(),
        ] {
            let w: Vec<f64> = (0..g.m()).map(|e| 0.5 + e as f64).collect();
            let fast = solve_identity_plus_laplacian(&g, &w, &r).unwrap();
            let dense = (Mat::identity(7, 7) + g.laplacian(&w).unwrap())
                .lu()
                .solve(&r)
                .unwrap();
            assert!((fast - dense).amax() < 1e-12);
        }
    }

    #[test]
    fn degenerate_density_basics() {
        let e1 = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let z = Vector::zeros(2);
        let v = degenerate_gaussian_logpdf(&z, &z, &Mat::identity(2, 2), &e1).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        let off = Vector::from_column_slice(&[0.0, 1.0]);
        assert!(degenerate_gaussian_logpdf(&off, &z, &Mat::identity(2, 2), &e1).is_err());
    }
}
