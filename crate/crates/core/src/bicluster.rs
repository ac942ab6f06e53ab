//! Matrix-valued parameters with row and column structure: Cartesian and Kronecker product
//! priors, and the two biclustering models with latent centers.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::SymmetricEigen;

use crate::cluster::{
    canonical_labels, cluster_score_parts, initial_assignment, merge_centers, num_clusters, vbar,
    ClusterOptions, ReducedClustering, MERGE_EPS,
};
use crate::dlpa::dlpa;
use crate::em::{inclusion, mul_ln, threshold, EmOptions, Hyper, PathMode};
use crate::error::{Error, Result};
use crate::gaussian::{solve_identity_plus_laplacian, Design, Precision, QpProblem};
use crate::graph::{kronecker_edge_map, Graph};
use crate::linalg::{
    bernoulli_entropy, cholesky, log_grid, logistic, softmax_in_place, xlogx, Mat, Vector,
};
use crate::par::Execution;

/// Column-to-row variance ratios scanned during biclustering selection.
pub const DEFAULT_C_GRID: [f64; 7] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductKind {
    Cartesian,
    Kronecker,
}

/// One product edge of the Kronecker graph with its originating row and column edges.
#[derive(Debug, Clone, Copy)]
struct KronEdge {
    a: usize,
    b: usize,
    e1: usize,
    e2: usize,
    r: f64,
}

/// Denoising model `y = alpha 1 1^T + theta + noise` on an `n1 x n2` matrix whose rows are nodes
/// of `rows` and columns nodes of `cols`.
#[derive(Debug, Clone)]
pub struct ProductSpec {
    pub y: Mat,
    pub rows: Graph,
    pub cols: Graph,
    pub kind: ProductKind,
    pub nu: Precision,
    pub v1: f64,
    /// `a`, `b` and the Beta prior of the row inclusion rate.
    pub hyper: Hyper,
    /// Beta prior `(A2, B2)` of the column inclusion rate.
    pub col_beta: (f64, f64),
    r1: Vec<f64>,
    r2: Vec<f64>,
    kron: Vec<KronEdge>,
    product: Graph,
}

impl ProductSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        y: Mat,
        rows: Graph,
        cols: Graph,
        kind: ProductKind,
        nu: f64,
        v1: f64,
        hyper: Hyper,
        col_beta: (f64, f64),
    ) -> Result<Self> {
        let nu = Precision::from_f64(nu)?;
        hyper.validate()?;
        Hyper {
            big_a: col_beta.0,
            big_b: col_beta.1,
            ..hyper
        }
        .validate()?;
        if !(v1 > 0.0 && v1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v1 must be positive, got {v1}"
            )));
        }
        if y.nrows() != rows.p() || y.ncols() != cols.p() {
            return Err(Error::Dimension(format!(
                "data is {}x{}, graphs have {} and {} nodes",
                y.nrows(),
                y.ncols(),
                rows.p(),
                cols.p()
            )));
        }
        let (p1, m1, m2) = (rows.p(), rows.m(), cols.m());
        let (mut r1, mut r2, mut kron) = (vec![0.0; m1], vec![0.0; m2], Vec::new());
        let product = match kind {
            ProductKind::Cartesian => {
                let g = Graph::cartesian_product(&rows, &cols);
                let r = g.effective_resistances_by_component()?;
                for k in 0..cols.p() {
                    for e in 0..m1 {
                        r1[e] += r[k * m1 + e];
                    }
                }
                let base = cols.p() * m1;
                for e in 0..m2 {
                    r2[e] = r[base + e * p1..base + (e + 1) * p1].iter().sum();
                }
                g
            }
            ProductKind::Kronecker => {
                let g = Graph::kronecker_product(&rows, &cols);
                let r = g.effective_resistances_by_component()?;
                for (((a, b), e1, e2), re) in kronecker_edge_map(&rows, &cols).into_iter().zip(r) {
                    kron.push(KronEdge {
                        a,
                        b,
                        e1,
                        e2,
                        r: re,
                    });
                    r1[e1] += re;
                    r2[e2] += re;
                }
                g
            }
        };
        Ok(ProductSpec {
            y,
            rows,
            cols,
            kind,
            nu,
            v1,
            hyper,
            col_beta,
            r1,
            r2,
            kron,
            product,
        })
    }

    pub fn n1(&self) -> usize {
        self.y.nrows()
    }

    pub fn n2(&self) -> usize {
        self.y.ncols()
    }

    /// Row-edge resistances summed over the column copies.
    pub fn row_resistances(&self) -> &[f64] {
        &self.r1
    }

    pub fn col_resistances(&self) -> &[f64] {
        &self.r2
    }

    pub fn default_grid(&self) -> Vec<f64> {
        log_grid(1e-4 * self.v1, self.v1, 20)
    }

    fn col_hyper(&self) -> Hyper {
        Hyper {
            big_a: self.col_beta.0,
            big_b: self.col_beta.1,
            ..self.hyper
        }
    }

    fn mean(&self) -> f64 {
        self.y.mean()
    }

    fn alpha(&self) -> f64 {
        grand_alpha(self.y.len() as f64, self.mean(), self.nu)
    }
}

fn grand_alpha(n: f64, mean: f64, nu: Precision) -> f64 {
    match nu {
        Precision::Infinite => 0.0,
        Precision::Finite(nu) => n * mean / (n + nu),
    }
}

/// `|y - alpha - theta|^2 + nu alpha^2`.
fn data_term(y: &Mat, alpha: f64, theta: &Mat, nu: Precision) -> f64 {
    let rss: f64 = y
        .iter()
        .zip(theta.iter())
        .map(|(a, t)| (a - alpha - t).powi(2))
        .sum();
    match nu {
        Precision::Finite(nu) => rss + nu * alpha * alpha,
        Precision::Infinite => rss,
    }
}

fn centered(y: &Mat) -> Mat {
    let m = y.mean();
    y.map(|v| v - m)
}

fn row_dist2_within(theta: &Mat, i: usize, j: usize) -> f64 {
    (0..theta.ncols())
        .map(|c| (theta[(i, c)] - theta[(j, c)]).powi(2))
        .sum()
}

fn col_dist2_within(theta: &Mat, k: usize, l: usize) -> f64 {
    (0..theta.nrows())
        .map(|r| (theta[(r, k)] - theta[(r, l)]).powi(2))
        .sum()
}

fn weight(q: f64, v0: f64, v1: f64) -> f64 {
    q / v0 + (1.0 - q) / v1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    /// Row-edge inclusion probabilities.
    pub q1: Vec<f64>,
    /// Column-edge inclusion probabilities.
    pub q2: Vec<f64>,
    pub alpha: f64,
    /// `n1 x n2`, entries sum to zero.
    pub theta: Mat,
    pub sigma2: f64,
    pub eta1: f64,
    pub eta2: f64,
}

/// Penalty `sum_rows w1 |theta_i - theta_j|^2 + sum_cols w2 |theta_k - theta_l|^2` (Cartesian) or
/// `sum w(e1, e2) (theta_x - theta_y)^2` over product edges (Kronecker).
pub fn product_penalty(spec: &ProductSpec, theta: &Mat, q1: &[f64], q2: &[f64], v0: f64) -> f64 {
    let v1 = spec.v1;
    match spec.kind {
        ProductKind::Cartesian => {
            let rows: f64 = spec
                .rows
                .edges()
                .iter()
                .zip(q1)
                .map(|(&(i, j), &q)| weight(q, v0, v1) * row_dist2_within(theta, i, j))
                .sum();
            let cols: f64 = spec
                .cols
                .edges()
                .iter()
                .zip(q2)
                .map(|(&(k, l), &q)| weight(q, v0, v1) * col_dist2_within(theta, k, l))
                .sum();
            rows + cols
        }
        ProductKind::Kronecker => {
            let t = theta.as_slice();
            spec.kron
                .iter()
                .map(|e| weight(q1[e.e1] * q2[e.e2], v0, v1) * (t[e.a] - t[e.b]).powi(2))
                .sum()
        }
    }
}

pub fn product_objective(
    spec: &ProductSpec,
    state_alpha: f64,
    theta: &Mat,
    q1: &[f64],
    q2: &[f64],
    v0: f64,
) -> f64 {
    data_term(&spec.y, state_alpha, theta, spec.nu) + product_penalty(spec, theta, q1, q2, v0)
}

/// Cartesian E-step: independent logistic updates with aggregated resistances.
pub fn estep_cartesian(state: &ProductState, spec: &ProductSpec, v0: f64) -> (Vec<f64>, Vec<f64>) {
    let (th, s2, v1) = (&state.theta, state.sigma2, spec.v1);
    let q1 = spec
        .rows
        .edges()
        .iter()
        .zip(&spec.r1)
        .map(|(&(i, j), &r)| inclusion(state.eta1, row_dist2_within(th, i, j), s2, v0, v1, r, 1))
        .collect();
    let q2 = spec
        .cols
        .edges()
        .iter()
        .zip(&spec.r2)
        .map(|(&(k, l), &r)| inclusion(state.eta2, col_dist2_within(th, k, l), s2, v0, v1, r, 1))
        .collect();
    (q1, q2)
}

/// Mean-field Kronecker E-step: rows from the current column probabilities, then columns from the
/// fresh row probabilities.
pub fn estep_kronecker(state: &ProductState, spec: &ProductSpec, v0: f64) -> (Vec<f64>, Vec<f64>) {
    let t = state.theta.as_slice();
    let (s2, v1) = (state.sigma2, spec.v1);
    let pair: Vec<f64> = spec
        .kron
        .iter()
        .map(|e| {
            -0.5 * e.r * (v0.ln() - v1.ln())
                - (t[e.a] - t[e.b]).powi(2) / (2.0 * s2) * (1.0 / v0 - 1.0 / v1)
        })
        .collect();
    let update = |eta: f64, logits: Vec<f64>| -> Vec<f64> {
        logits
            .into_iter()
            .map(|z| {
                if eta >= 1.0 {
                    1.0
                } else if eta <= 0.0 {
                    0.0
                } else {
                    logistic(eta.ln() - (1.0 - eta).ln() + z)
                }
            })
            .collect()
    };
    let mut z1 = vec![0.0; spec.rows.m()];
    for (e, &t) in spec.kron.iter().zip(&pair) {
        z1[e.e1] += state.q2[e.e2] * t;
    }
    let q1 = update(state.eta1, z1);
    let mut z2 = vec![0.0; spec.cols.m()];
    for (e, &t) in spec.kron.iter().zip(&pair) {
        z2[e.e2] += q1[e.e1] * t;
    }
    let q2 = update(state.eta2, z2);
    (q1, q2)
}

pub fn estep_product(state: &ProductState, spec: &ProductSpec, v0: f64) -> (Vec<f64>, Vec<f64>) {
    match spec.kind {
        ProductKind::Cartesian => estep_cartesian(state, spec, v0),
        ProductKind::Kronecker => estep_kronecker(state, spec, v0),
    }
}

#[derive(Debug, Clone)]
pub struct ProductMStep {
    pub alpha: f64,
    pub theta: Mat,
    pub sigma2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub objective: f64,
}

/// DLPA settings for the Cartesian M-step.
const DLPA_TOL: f64 = 1e-13;
const DLPA_MAX_ITER: usize = 100_000;

/// Minimizer of the penalized objective for fixed inclusion probabilities.
pub fn product_coefficients(
    spec: &ProductSpec,
    q1: &[f64],
    q2: &[f64],
    v0: f64,
) -> Result<(f64, Mat)> {
    let yc = centered(&spec.y);
    let (n1, n2, v1) = (spec.n1(), spec.n2(), spec.v1);
    // Constants carry no penalty, so theta solves (I + penalty) theta = yc and keeps a zero sum.
    let theta = match spec.kind {
        ProductKind::Cartesian => {
            let w1: Vec<f64> = q1.iter().map(|&q| weight(q, v0, v1)).collect();
            let w2: Vec<f64> = q2.iter().map(|&q| weight(q, v0, v1)).collect();
            let lr = spec.rows.laplacian(&w1)?;
            let lc = spec.cols.laplacian(&w2)?;
            dlpa(&yc, &lr, &lc, DLPA_TOL, DLPA_MAX_ITER)?.theta
        }
        ProductKind::Kronecker => {
            let w: Vec<f64> = spec
                .kron
                .iter()
                .map(|e| weight(q1[e.e1] * q2[e.e2], v0, v1))
                .collect();
            let rhs = Mat::from_column_slice(n1 * n2, 1, yc.as_slice());
            let sol = solve_identity_plus_laplacian(&spec.product, &w, &rhs)?;
            Mat::from_column_slice(n1, n2, sol.as_slice())
        }
    };
    Ok((spec.alpha(), theta))
}

fn eta_update(q: &[f64], big_a: f64, big_b: f64) -> f64 {
    let denom = big_a + big_b - 2.0 + q.len() as f64;
    if denom > 0.0 {
        ((big_a - 1.0 + q.iter().sum::<f64>()) / denom).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

pub fn mstep_product(q1: &[f64], q2: &[f64], spec: &ProductSpec, v0: f64) -> Result<ProductMStep> {
    let (alpha, theta) = product_coefficients(spec, q1, q2, v0)?;
    let f = product_objective(spec, alpha, &theta, q1, q2, v0);
    let h = &spec.hyper;
    let n = spec.y.len() as f64;
    let sigma2 = (f + h.b) / (2.0 * n + h.a + 2.0);
    Ok(ProductMStep {
        alpha,
        theta,
        sigma2,
        eta1: eta_update(q1, h.big_a, h.big_b),
        eta2: eta_update(q2, spec.col_beta.0, spec.col_beta.1),
        objective: f,
    })
}

/// Variational objective up to constants that depend on neither the state nor `v0`.
pub fn product_elbo(state: &ProductState, spec: &ProductSpec, v0: f64) -> f64 {
    let n = spec.y.len() as f64;
    let s2 = state.sigma2;
    let f = product_objective(spec, state.alpha, &state.theta, &state.q1, &state.q2, v0);
    // n likelihood terms, one for alpha, n - 1 for theta.
    let mut value = -n * (2.0 * PI * s2).ln() - f / (2.0 * s2);
    let (lv0, lv1) = (v0.ln(), spec.v1.ln());
    let mut bound = 0.0;
    match spec.kind {
        ProductKind::Cartesian => {
            for (&q, &r) in state
                .q1
                .iter()
                .zip(&spec.r1)
                .chain(state.q2.iter().zip(&spec.r2))
            {
                bound -= r * (q * lv0 + (1.0 - q) * lv1);
            }
        }
        ProductKind::Kronecker => {
            for e in &spec.kron {
                let q = state.q1[e.e1] * state.q2[e.e2];
                bound -= e.r * (q * lv0 + (1.0 - q) * lv1);
            }
        }
    }
    value += 0.5 * bound;
    for (q, eta) in [(&state.q1, state.eta1), (&state.q2, state.eta2)] {
        for &qe in q.iter() {
            value += mul_ln(qe, eta) + mul_ln(1.0 - qe, 1.0 - eta) + bernoulli_entropy(qe);
        }
    }
    value += spec.hyper.ln_prior_eta(state.eta1) + spec.col_hyper().ln_prior_eta(state.eta2);
    value + spec.hyper.ln_prior_sigma2(s2)
}

/// Slab-only fit, `eta = 1/2`, variance from squared neighbor differences of `y`, then an E-step.
pub fn initial_product_state(spec: &ProductSpec, v0: f64) -> Result<ProductState> {
    let (m1, m2) = (spec.rows.m(), spec.cols.m());
    let (q1, q2) = (vec![0.0; m1], vec![0.0; m2]);
    let (alpha, theta) = product_coefficients(spec, &q1, &q2, v0)?;
    let f = product_objective(spec, alpha, &theta, &q1, &q2, v0);
    let y = &spec.y;
    let mut diffs: Vec<f64> = Vec::new();
    for &(i, j) in spec.rows.edges() {
        diffs.extend((0..spec.n2()).map(|c| (y[(i, c)] - y[(j, c)]).powi(2)));
    }
    for &(k, l) in spec.cols.edges() {
        diffs.extend((0..spec.n1()).map(|r| (y[(r, k)] - y[(r, l)]).powi(2)));
    }
    let mut sigma2 = 0.0;
    if !diffs.is_empty() {
        diffs.sort_by(|a, b| a.partial_cmp(b).expect("finite data"));
        sigma2 = diffs[diffs.len() / 2] / (2.0 * 0.454_936_423_119_572_7);
    }
    let h = &spec.hyper;
    sigma2 = sigma2.max((f + h.b) / (2.0 * y.len() as f64 + h.a + 2.0));
    let mut state = ProductState {
        q1,
        q2,
        alpha,
        theta,
        sigma2,
        eta1: 0.5,
        eta2: 0.5,
    };
    let (q1, q2) = estep_product(&state, spec, v0);
    state.q1 = q1;
    state.q2 = q2;
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct ProductFit {
    pub state: ProductState,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn run_product_em(
    spec: &ProductSpec,
    v0: f64,
    init: Option<&ProductState>,
    opts: &EmOptions,
) -> Result<ProductFit> {
    if !(v0 > 0.0 && v0 <= spec.v1) {
        return Err(Error::InvalidParameter(format!(
            "v0 must lie in (0, v1={}], got {v0}",
            spec.v1
        )));
    }
    let mut state = match init {
        Some(s) => {
            let mut s = s.clone();
            (s.q1, s.q2) = estep_product(&s, spec, v0);
            s
        }
        None => initial_product_state(spec, v0)?,
    };
    let mut trace = vec![product_elbo(&state, spec, v0)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let m = mstep_product(&state.q1, &state.q2, spec, v0)?;
        state.alpha = m.alpha;
        state.theta = m.theta;
        state.sigma2 = m.sigma2;
        state.eta1 = m.eta1;
        state.eta2 = m.eta2;
        (state.q1, state.q2) = estep_product(&state, spec, v0);
        let value = product_elbo(&state, spec, v0);
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite ELBO at iteration {iterations} (v0={v0})"
            )));
        }
        let prev = *trace.last().expect("nonempty");
        trace.push(value);
        if (value - prev).abs() <= opts.tol * value.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(ProductFit {
        state,
        trace,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct ProductPathPoint {
    pub v0: f64,
    pub fit: ProductFit,
    pub gamma1: Vec<bool>,
    pub gamma2: Vec<bool>,
}

pub fn product_path(
    spec: &ProductSpec,
    grid: &[f64],
    mode: PathMode,
    opts: &EmOptions,
) -> Result<Vec<ProductPathPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty v0 grid".into()));
    }
    let point = |v0: f64, fit: ProductFit| ProductPathPoint {
        v0,
        gamma1: threshold(&fit.state.q1),
        gamma2: threshold(&fit.state.q2),
        fit,
    };
    match mode {
        PathMode::Warm => {
            let mut out: Vec<ProductPathPoint> = Vec::with_capacity(grid.len());
            for &v0 in grid {
                let fit = run_product_em(spec, v0, out.last().map(|p| &p.fit.state), opts)?;
                out.push(point(v0, fit));
            }
            Ok(out)
        }
        PathMode::Cold(exec) => exec
            .map(grid, |&v0| {
                run_product_em(spec, v0, None, opts).map(|f| point(v0, f))
            })
            .into_iter()
            .collect(),
    }
}

// ---------------------------------------------------------------------------------------------
// Biclustering with latent centers.

#[derive(Debug, Clone, PartialEq)]
pub enum Centers {
    /// Row centers `k1 x n2` and column centers `n1 x k2`.
    Cartesian { rows: Mat, cols: Mat },
    /// Block centers `k1 x k2`.
    Kronecker(Mat),
}

#[derive(Debug, Clone)]
pub struct BiclusterSpec {
    pub y: Mat,
    pub k1: usize,
    pub k2: usize,
    pub kind: ProductKind,
    pub nu: Precision,
    pub v1: f64,
    /// Column spike and slab variances are `c v0` and `c v1` in the Cartesian model.
    pub c: f64,
    pub hyper: Hyper,
}

impl BiclusterSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        y: Mat,
        k1: usize,
        k2: usize,
        kind: ProductKind,
        nu: f64,
        v1: f64,
        c: f64,
        hyper: Hyper,
    ) -> Result<Self> {
        let nu = Precision::from_f64(nu)?;
        hyper.validate()?;
        let (n1, n2) = (y.nrows(), y.ncols());
        if n1 == 0 || n2 == 0 {
            return Err(Error::Dimension("empty data matrix".into()));
        }
        if k1 == 0 || k1 > n1 || k2 == 0 || k2 > n2 {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= k1 <= {n1} and 1 <= k2 <= {n2}, got {k1}, {k2}"
            )));
        }
        if !(v1 > 0.0 && v1.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v1 and c must be positive, got {v1}, {c}"
            )));
        }
        Ok(BiclusterSpec {
            y,
            k1,
            k2,
            kind,
            nu,
            v1,
            c,
            hyper,
        })
    }

    pub fn n1(&self) -> usize {
        self.y.nrows()
    }

    pub fn n2(&self) -> usize {
        self.y.ncols()
    }

    /// Same grid as clustering: `v0 = v1` excluded.
    pub fn default_grid(&self) -> Vec<f64> {
        let mut g = log_grid(1e-4 * self.v1, self.v1, 21);
        g.pop();
        g
    }

    pub fn with_c(&self, c: f64) -> Self {
        BiclusterSpec { c, ..self.clone() }
    }

    /// Gaussian dimensions entering the variance update besides `a + 2`.
    fn dims(&self) -> f64 {
        let (n1, n2, k1, k2) = (
            self.n1() as f64,
            self.n2() as f64,
            self.k1 as f64,
            self.k2 as f64,
        );
        match self.kind {
            ProductKind::Cartesian => 2.0 * n1 * n2 + n1 * k2 + n2 * k1,
            ProductKind::Kronecker => 2.0 * n1 * n2 + k1 * k2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiclusterState {
    /// `n1 x k1` row assignment probabilities.
    pub q1: Mat,
    /// `n2 x k2` column assignment probabilities.
    pub q2: Mat,
    pub alpha: f64,
    pub theta: Mat,
    pub centers: Centers,
    pub sigma2: f64,
}

/// Row-wise softmax of `-cost / (2 scale)`.
fn softmax_rows(cost: &Mat, scale: f64) -> Mat {
    let mut q = Mat::zeros(cost.nrows(), cost.ncols());
    let mut row = vec![0.0; cost.ncols()];
    for i in 0..cost.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = -cost[(i, j)] / (2.0 * scale);
        }
        softmax_in_place(&mut row);
        for (j, &r) in row.iter().enumerate() {
            q[(i, j)] = r;
        }
    }
    q
}

/// Squared distances between the rows of `a` and the rows of `b`.
fn sq_dists(a: &Mat, b: &Mat) -> Mat {
    let an: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let bn: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let cross = a * b.transpose();
    Mat::from_fn(a.nrows(), b.nrows(), |i, j| {
        (an[i] + bn[j] - 2.0 * cross[(i, j)]).max(0.0)
    })
}

/// Kronecker assignment costs: `cost1_ij = sum_{l,h} q2_lh (theta_il - mu_jh)^2`.
fn kron_row_cost(theta: &Mat, mu: &Mat, q2: &Mat) -> Mat {
    let t2: Vec<f64> = theta.row_iter().map(|r| r.norm_squared()).collect();
    let s2: Vec<f64> = q2.column_iter().map(|c| c.sum()).collect();
    let cross = theta * q2 * mu.transpose();
    let m2: Vec<f64> = (0..mu.nrows())
        .map(|j| (0..mu.ncols()).map(|h| s2[h] * mu[(j, h)].powi(2)).sum())
        .collect();
    Mat::from_fn(theta.nrows(), mu.nrows(), |i, j| {
        t2[i] - 2.0 * cross[(i, j)] + m2[j]
    })
}

pub fn estep_bicluster(
    state: &BiclusterState,
    spec: &BiclusterSpec,
    v0: f64,
) -> Result<(Mat, Mat)> {
    let vb = vbar(v0, spec.v1)?;
    let s2 = state.sigma2;
    Ok(match &state.centers {
        Centers::Cartesian { rows, cols } => {
            let q1 = softmax_rows(&sq_dists(&state.theta, rows), s2 * vb);
            let q2 = softmax_rows(
                &sq_dists(&state.theta.transpose(), &cols.transpose()),
                s2 * spec.c * vb,
            );
            (q1, q2)
        }
        Centers::Kronecker(mu) => {
            let q1 = softmax_rows(&kron_row_cost(&state.theta, mu, &state.q2), s2 * vb);
            let q2 = softmax_rows(
                &kron_row_cost(&state.theta.transpose(), &mu.transpose(), &q1),
                s2 * vb,
            );
            (q1, q2)
        }
    })
}

/// Schur complement `diag(W 1) - W diag(1^T W)^{-1} W^T` left after eliminating centers.
fn eliminated_laplacian(w: &Mat) -> Mat {
    let rs: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    let cs: Vec<f64> = w.column_iter().map(|c| c.sum()).collect();
    let scaled = Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] / cs[j]);
    let mut l = -(&scaled * w.transpose());
    for (i, r) in rs.iter().enumerate() {
        l[(i, i)] += r;
    }
    l
}

/// Solve `theta + L1 theta + theta L2 = y` through eigenbases of the symmetric `L1`, `L2`.
pub fn sylvester_laplacian(y: &Mat, l1: &Mat, l2: &Mat) -> Mat {
    let e1 = SymmetricEigen::new(l1.clone());
    let e2 = SymmetricEigen::new(l2.clone());
    let mut z = e1.eigenvectors.transpose() * y * &e2.eigenvectors;
    for i in 0..z.nrows() {
        for j in 0..z.ncols() {
            z[(i, j)] /= 1.0 + e1.eigenvalues[i] + e2.eigenvalues[j];
        }
    }
    &e1.eigenvectors * z * e2.eigenvectors.transpose()
}

fn cartesian_weights(q1: &Mat, q2: &Mat, spec: &BiclusterSpec, v0: f64) -> (Mat, Mat) {
    let w1 = q1.map(|q| weight(q, v0, spec.v1));
    let w2 = q2.map(|q| weight(q, spec.c * v0, spec.c * spec.v1));
    (w1, w2)
}

/// Penalty of the latent-center prior at `(theta, centers)`.
pub fn bicluster_penalty(
    theta: &Mat,
    centers: &Centers,
    q1: &Mat,
    q2: &Mat,
    spec: &BiclusterSpec,
    v0: f64,
) -> f64 {
    match centers {
        Centers::Cartesian { rows, cols } => {
            let (w1, w2) = cartesian_weights(q1, q2, spec, v0);
            let d1 = sq_dists(theta, rows);
            let d2 = sq_dists(&theta.transpose(), &cols.transpose());
            w1.component_mul(&d1).sum() + w2.component_mul(&d2).sum()
        }
        Centers::Kronecker(mu) => {
            // weight = 1/v1 + q1_ij q2_lh / vbar
            let inv_vb = 1.0 / v0 - 1.0 / spec.v1;
            let (k1, k2) = (mu.nrows() as f64, mu.ncols() as f64);
            let n = theta.len() as f64;
            let slab = (k1 * k2 * theta.norm_squared() - 2.0 * theta.sum() * mu.sum()
                + n * mu.norm_squared())
                / spec.v1;
            let s1: Vec<f64> = q1.column_iter().map(|c| c.sum()).collect();
            let s2: Vec<f64> = q2.column_iter().map(|c| c.sum()).collect();
            let cross = q1.transpose() * theta * q2;
            let mut spike = theta.norm_squared();
            for j in 0..mu.nrows() {
                for h in 0..mu.ncols() {
                    spike += s1[j] * s2[h] * mu[(j, h)].powi(2) - 2.0 * mu[(j, h)] * cross[(j, h)];
                }
            }
            slab + inv_vb * spike
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiclusterMStep {
    pub alpha: f64,
    pub theta: Mat,
    pub centers: Centers,
    pub sigma2: f64,
    pub objective: f64,
}

/// Exact joint minimization over `(alpha, theta, centers)`.
pub fn mstep_bicluster(
    q1: &Mat,
    q2: &Mat,
    spec: &BiclusterSpec,
    v0: f64,
) -> Result<BiclusterMStep> {
    let yc = centered(&spec.y);
    let alpha = grand_alpha(spec.y.len() as f64, spec.y.mean(), spec.nu);
    let (theta, centers) = match spec.kind {
        ProductKind::Cartesian => {
            let (w1, w2) = cartesian_weights(q1, q2, spec, v0);
            let theta =
                sylvester_laplacian(&yc, &eliminated_laplacian(&w1), &eliminated_laplacian(&w2));
            let c1: Vec<f64> = w1.column_iter().map(|c| c.sum()).collect();
            let c2: Vec<f64> = w2.column_iter().map(|c| c.sum()).collect();
            let mut rows = w1.transpose() * &theta;
            for (j, mut r) in rows.row_iter_mut().enumerate() {
                r /= c1[j];
            }
            let mut cols = &theta * &w2;
            for (h, mut c) in cols.column_iter_mut().enumerate() {
                c /= c2[h];
            }
            (theta, Centers::Cartesian { rows, cols })
        }
        ProductKind::Kronecker => {
            let (mu, theta) = kron_solve(&yc, q1, q2, spec.v1, v0)?;
            (theta, Centers::Kronecker(mu))
        }
    };
    let f = data_term(&spec.y, alpha, &theta, spec.nu)
        + bicluster_penalty(&theta, &centers, q1, q2, spec, v0);
    let h = &spec.hyper;
    let sigma2 = (f + h.b) / (spec.dims() + h.a + 2.0);
    Ok(BiclusterMStep {
        alpha,
        theta,
        centers,
        sigma2,
        objective: f,
    })
}

/// Block centers and `theta` for the Kronecker model. Every entry of `theta` carries the same total
/// weight `d = k1 k2 / v1 + 1/vbar`, so `theta = (yc + W mu) / (1 + d)` and the centers solve
/// `(diag(c) - W^T W / (1 + d)) mu = W^T yc / (1 + d)` with `W^T W` in closed form.
fn kron_solve(yc: &Mat, q1: &Mat, q2: &Mat, v1: f64, v0: f64) -> Result<(Mat, Mat)> {
    let (k1, k2) = (q1.ncols(), q2.ncols());
    let n = yc.len() as f64;
    let inv_vb = 1.0 / v0 - 1.0 / v1;
    let d = (k1 * k2) as f64 / v1 + inv_vb;
    let s1: Vec<f64> = q1.column_iter().map(|c| c.sum()).collect();
    let s2: Vec<f64> = q2.column_iter().map(|c| c.sum()).collect();
    let g1 = q1.transpose() * q1;
    let g2 = q2.transpose() * q2;
    let kk = k1 * k2;
    let idx = |j: usize, h: usize| j + k1 * h;
    let mut m = Mat::zeros(kk, kk);
    for h in 0..k2 {
        for j in 0..k1 {
            let a = idx(j, h);
            m[(a, a)] += n / v1 + s1[j] * s2[h] * inv_vb;
            for h2 in 0..k2 {
                for j2 in 0..k1 {
                    let wtw = n / (v1 * v1)
                        + (s1[j] * s2[h] + s1[j2] * s2[h2]) * inv_vb / v1
                        + g1[(j, j2)] * g2[(h, h2)] * inv_vb * inv_vb;
                    m[(a, idx(j2, h2))] -= wtw / (1.0 + d);
                }
            }
        }
    }
    let b = q1.transpose() * yc * q2 * (inv_vb / (1.0 + d));
    let rhs = Mat::from_column_slice(kk, 1, b.as_slice());
    let sol = cholesky(&m, "block-center system")?.solve(&rhs);
    let mu = Mat::from_column_slice(k1, k2, sol.as_slice());
    let spread = q1 * &mu * q2.transpose() * inv_vb;
    let shift = mu.sum() / v1;
    let theta = Mat::from_fn(yc.nrows(), yc.ncols(), |i, l| {
        (yc[(i, l)] + shift + spread[(i, l)]) / (1.0 + d)
    });
    Ok((mu, theta))
}

/// Variational objective up to terms that depend only on `v0`, `v1` and the dimensions.
pub fn bicluster_elbo(state: &BiclusterState, spec: &BiclusterSpec, v0: f64) -> f64 {
    let s2 = state.sigma2;
    let f = data_term(&spec.y, state.alpha, &state.theta, spec.nu)
        + bicluster_penalty(&state.theta, &state.centers, &state.q1, &state.q2, spec, v0);
    let entropy = -state
        .q1
        .iter()
        .chain(state.q2.iter())
        .map(|&x| xlogx(x))
        .sum::<f64>();
    -0.5 * spec.dims() * (2.0 * PI * s2).ln() - f / (2.0 * s2)
        + entropy
        + spec.hyper.ln_prior_sigma2(s2)
}

/// Bound constant of the latent Kronecker prior under one-hot assignments:
/// `r n1 n2 ln(1/v0) + r n1 n2 (k1 k2 - 1) ln(1/v1)`.
pub fn kronecker_bound_constant(
    n1: usize,
    n2: usize,
    k1: usize,
    k2: usize,
    r: f64,
    v0: f64,
    v1: f64,
) -> f64 {
    let n = (n1 * n2) as f64;
    -r * n * v0.ln() - r * n * ((k1 * k2) as f64 - 1.0) * v1.ln()
}

/// Initial hard assignments for rows and columns, then an M-step and an E-step.
pub fn initial_bicluster_state(spec: &BiclusterSpec, v0: f64) -> Result<BiclusterState> {
    let yc = centered(&spec.y);
    let yt = yc.transpose();
    let q1 = initial_assignment(&yc, spec.k1);
    let q2 = initial_assignment(&yt, spec.k2);
    let m = mstep_bicluster(&q1, &q2, spec, v0)?;
    let mut state = BiclusterState {
        q1,
        q2,
        alpha: m.alpha,
        theta: m.theta,
        centers: m.centers,
        sigma2: m.sigma2,
    };
    (state.q1, state.q2) = estep_bicluster(&state, spec, v0)?;
    Ok(state)
}

fn center_move(a: &Centers, b: &Centers) -> f64 {
    match (a, b) {
        (Centers::Cartesian { rows: r1, cols: c1 }, Centers::Cartesian { rows: r2, cols: c2 }) => {
            (r1 - r2).amax().max((c1 - c2).amax())
        }
        (Centers::Kronecker(m1), Centers::Kronecker(m2)) => (m1 - m2).amax(),
        _ => f64::INFINITY,
    }
}

#[derive(Debug, Clone)]
pub struct BiclusterFit {
    pub state: BiclusterState,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl BiclusterFit {
    /// Fitted mean `alpha + theta`.
    pub fn fitted(&self) -> Mat {
        self.state.theta.add_scalar(self.state.alpha)
    }
}

pub fn run_bicluster_em(
    spec: &BiclusterSpec,
    v0: f64,
    init: Option<&BiclusterState>,
    opts: &ClusterOptions,
) -> Result<BiclusterFit> {
    vbar(v0, spec.v1)?;
    let mut state = match init {
        Some(s) => {
            let mut s = s.clone();
            (s.q1, s.q2) = estep_bicluster(&s, spec, v0)?;
            s
        }
        None => initial_bicluster_state(spec, v0)?,
    };
    let scale = spec.y.amax().max(1.0);
    let mut trace = vec![bicluster_elbo(&state, spec, v0)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let m = mstep_bicluster(&state.q1, &state.q2, spec, v0)?;
        let moved = center_move(&m.centers, &state.centers);
        state.alpha = m.alpha;
        state.theta = m.theta;
        state.centers = m.centers;
        state.sigma2 = m.sigma2;
        (state.q1, state.q2) = estep_bicluster(&state, spec, v0)?;
        let value = bicluster_elbo(&state, spec, v0);
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite biclustering ELBO at iteration {iterations} (v0={v0})"
            )));
        }
        let prev = *trace.last().expect("nonempty");
        trace.push(value);
        if (value - prev).abs() <= opts.tol * value.abs().max(1.0)
            && moved <= opts.center_tol * scale
        {
            converged = true;
            break;
        }
    }
    Ok(BiclusterFit {
        state,
        trace,
        iterations,
        converged,
    })
}

/// Row and column partitions read off merged centers.
pub fn reduce_bicluster(
    state: &BiclusterState,
    eps: f64,
) -> (ReducedClustering, ReducedClustering) {
    match &state.centers {
        Centers::Cartesian { rows, cols } => (
            merge_centers(rows, &state.q1, eps),
            merge_centers(&cols.transpose(), &state.q2, eps),
        ),
        Centers::Kronecker(mu) => (
            merge_centers(mu, &state.q1, eps),
            merge_centers(&mu.transpose(), &state.q2, eps),
        ),
    }
}

#[derive(Debug, Clone)]
pub struct BiclusterPathPoint {
    pub v0: f64,
    pub c: f64,
    pub fit: BiclusterFit,
    pub rows: ReducedClustering,
    pub cols: ReducedClustering,
}

/// Fits over every `(v0, c)` pair. The Kronecker model does not use `c` during fitting, so its
/// path is computed once and shared across the `c` values.
pub fn bicluster_path(
    spec: &BiclusterSpec,
    grid: &[f64],
    cs: &[f64],
    mode: PathMode,
    opts: &ClusterOptions,
) -> Result<Vec<BiclusterPathPoint>> {
    if grid.is_empty() || cs.is_empty() {
        return Err(Error::InvalidParameter("empty v0 or c grid".into()));
    }
    for &v0 in grid {
        vbar(v0, spec.v1)?;
    }
    if let Some(&c) = cs.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "c must be positive, got {c}"
        )));
    }
    let fit_cs: Vec<f64> = match spec.kind {
        ProductKind::Cartesian => cs.to_vec(),
        ProductKind::Kronecker => vec![cs[0]],
    };
    let point = |v0: f64, c: f64, fit: BiclusterFit| {
        let (rows, cols) = reduce_bicluster(&fit.state, MERGE_EPS);
        BiclusterPathPoint {
            v0,
            c,
            fit,
            rows,
            cols,
        }
    };
    let mut points = match mode {
        PathMode::Warm => {
            let mut out: Vec<BiclusterPathPoint> = Vec::new();
            for &c in &fit_cs {
                let s = spec.with_c(c);
                let mut prev: Option<BiclusterState> = None;
                for &v0 in grid {
                    let fit = run_bicluster_em(&s, v0, prev.as_ref(), opts)?;
                    prev = Some(fit.state.clone());
                    out.push(point(v0, c, fit));
                }
            }
            out
        }
        PathMode::Cold(exec) => {
            let cells: Vec<(f64, f64)> = fit_cs
                .iter()
                .flat_map(|&c| grid.iter().map(move |&v0| (v0, c)))
                .collect();
            exec.map(&cells, |&(v0, c)| {
                run_bicluster_em(&spec.with_c(c), v0, None, opts).map(|f| point(v0, c, f))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        }
    };
    if spec.kind == ProductKind::Kronecker {
        let base = std::mem::take(&mut points);
        for &c in cs {
            points.extend(base.iter().map(|p| BiclusterPathPoint { c, ..p.clone() }));
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiclusterScore {
    pub value: f64,
    pub valid: bool,
    pub k1_eff: usize,
    pub k2_eff: usize,
}

/// Row-clustering score with slab `v1` plus column-clustering score with slab `c v1`.
pub fn bicluster_score(
    spec: &BiclusterSpec,
    rows: &[usize],
    cols: &[usize],
    c: f64,
) -> Result<BiclusterScore> {
    let r = cluster_score_parts(&spec.y, rows, spec.k1, spec.nu, spec.v1, &spec.hyper)?;
    let s = cluster_score_parts(
        &spec.y.transpose(),
        cols,
        spec.k2,
        spec.nu,
        c * spec.v1,
        &spec.hyper,
    )?;
    let valid = r.valid && s.valid;
    Ok(BiclusterScore {
        value: if valid {
            r.value + s.value
        } else {
            f64::NEG_INFINITY
        },
        valid,
        k1_eff: r.k_eff,
        k2_eff: s.k_eff,
    })
}

#[derive(Debug, Clone)]
pub struct BiclusterCandidate {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub c: f64,
    pub v0s: Vec<f64>,
    pub score: BiclusterScore,
    /// EM fitted mean at the first `v0` producing this candidate.
    pub fit: Mat,
}

#[derive(Debug, Clone)]
pub struct BiclusterSelection {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub c: f64,
    pub score: f64,
    /// Reduced-model posterior mean for the selected partition.
    pub fit: Mat,
    pub candidates: Vec<BiclusterCandidate>,
    pub best: usize,
}

fn better_bicluster(a: &BiclusterScore, b: &BiclusterScore) -> bool {
    match (a.valid, b.valid) {
        (true, false) => return true,
        (false, true) => return false,
        _ => {}
    }
    if a.value != b.value {
        return a.value > b.value;
    }
    a.k1_eff + a.k2_eff < b.k1_eff + b.k2_eff
}

pub fn bicluster_select(
    spec: &BiclusterSpec,
    points: &[BiclusterPathPoint],
    exec: Execution,
) -> Result<BiclusterSelection> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("empty solution path".into()));
    }
    type Key = (Vec<usize>, Vec<usize>, u64);
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut groups: Vec<(Key, Vec<f64>, Mat)> = Vec::new();
    for p in points {
        let key = (
            canonical_labels(&p.rows.labels),
            canonical_labels(&p.cols.labels),
            p.c.to_bits(),
        );
        match index.get(&key) {
            Some(&i) => groups[i].1.push(p.v0),
            None => {
                index.insert(key.clone(), groups.len());
                groups.push((key, vec![p.v0], p.fit.fitted()));
            }
        }
    }
    let candidates = exec
        .map(&groups, |((rows, cols, cbits), v0s, fit)| {
            let c = f64::from_bits(*cbits);
            bicluster_score(spec, rows, cols, c).map(|score| BiclusterCandidate {
                rows: rows.clone(),
                cols: cols.clone(),
                c,
                v0s: v0s.clone(),
                score,
                fit: fit.clone(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.score.valid && best.is_none_or(|b| better_bicluster(&c.score, &candidates[b].score)) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::NoValidCandidate(candidates.len()))?;
    let b = &candidates[best];
    Ok(BiclusterSelection {
        rows: b.rows.clone(),
        cols: b.cols.clone(),
        c: b.c,
        score: b.score.value,
        fit: bicluster_point_estimate(spec, &b.rows, &b.cols, b.c)?,
        candidates,
        best,
    })
}

/// Posterior mean of the reduced model for a hard row and column partition (labels in `0..k1`,
/// `0..k2`). Each block of the partition is one node. Kronecker blocks are tied to every other
/// block with slab precision, Cartesian blocks only to blocks sharing a row or column cluster,
/// with column ties on the `c v1` scale. Cartesian blocks of an empty row and an empty column
/// cluster touch no data and are dropped.
pub fn bicluster_point_estimate(
    spec: &BiclusterSpec,
    rows: &[usize],
    cols: &[usize],
    c: f64,
) -> Result<Mat> {
    let (n1, n2) = (spec.y.nrows(), spec.y.ncols());
    if rows.len() != n1 || cols.len() != n2 {
        return Err(Error::Dimension(format!(
            "labels of length {}, {} for a {n1}x{n2} matrix",
            rows.len(),
            cols.len()
        )));
    }
    if rows.iter().any(|&a| a >= spec.k1) || cols.iter().any(|&b| b >= spec.k2) {
        return Err(Error::InvalidParameter("label out of range".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "c must be positive, got {c}"
        )));
    }
    let (k1, k2) = (spec.k1, spec.k2);
    let mut r = vec![0.0; k1];
    let mut s = vec![0.0; k2];
    rows.iter().for_each(|&a| r[a] += 1.0);
    cols.iter().for_each(|&b| s[b] += 1.0);
    let mut node = vec![usize::MAX; k1 * k2];
    let mut blocks = Vec::new();
    for b in 0..k2 {
        for a in 0..k1 {
            if spec.kind == ProductKind::Kronecker || r[a] > 0.0 || s[b] > 0.0 {
                node[a + k1 * b] = blocks.len();
                blocks.push((a, b));
            }
        }
    }
    let nb = blocks.len();
    let mut edges = Vec::new();
    let mut w = Vec::new();
    for u in 0..nb {
        for v in (u + 1)..nb {
            let ((a, b), (j, h)) = (blocks[u], blocks[v]);
            let weight = match spec.kind {
                ProductKind::Kronecker => (r[a] * s[b] + r[j] * s[h]) / spec.v1,
                ProductKind::Cartesian if b == h => s[b] * (r[a] + r[j]) / spec.v1,
                ProductKind::Cartesian if a == j => r[a] * (s[b] + s[h]) / (c * spec.v1),
                ProductKind::Cartesian => 0.0,
            };
            if weight > 0.0 {
                edges.push((u, v));
                w.push(weight);
            }
        }
    }
    let l = Graph::new(nb, edges)?.laplacian(&w)?;
    let n = n1 * n2;
    let mut x = Mat::zeros(n, nb);
    for j in 0..n2 {
        for i in 0..n1 {
            x[(i + n1 * j, node[rows[i] + k1 * cols[j]])] = 1.0;
        }
    }
    let sizes: Vec<f64> = blocks.iter().map(|&(a, b)| r[a] * s[b]).collect();
    let y = Mat::from_column_slice(n, 1, spec.y.as_slice());
    let a = Vector::from_element(n, 1.0);
    let design = Design::Dense(x);
    let sol = QpProblem {
        y: &y,
        a: &a,
        x: &design,
        l: &l,
        c: &sizes,
        nu: spec.nu,
    }
    .solve()?;
    let fit = design.apply(&sol.theta);
    Ok(Mat::from_fn(n1, n2, |i, j| {
        fit[(i + n1 * j, 0)] + sol.alpha[0]
    }))
}

/// Number of distinct `(row, column)` label pairs.
pub fn num_blocks(rows: &[usize], cols: &[usize]) -> usize {
    num_clusters(rows) * num_clusters(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlpa::cartesian_direct;
    use crate::em::{estep_general, EmState, ModelSpec};

    fn data(n1: usize, n2: usize) -> Mat {
        Mat::from_fn(n1, n2, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64
        })
    }

    fn cart(n1: usize, n2: usize) -> ProductSpec {
        ProductSpec::new(
            data(n1, n2),
            Graph::chain(n1),
            Graph::chain(n2),
            ProductKind::Cartesian,
            1.0,
            10.0,
            Hyper::default(),
            (1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn estep_ratio_at_zero_difference() {
        let spec = ProductSpec::new(
            Mat::zeros(2, 1),
            Graph::chain(2),
            Graph::new(1, vec![]).unwrap(),
            ProductKind::Cartesian,
            0.0,
            100.0,
            Hyper::default(),
            (1.0, 1.0),
        )
        .unwrap();
        assert!((spec.row_resistances()[0] - 1.0).abs() < 1e-12);
        let st = ProductState {
            q1: vec![0.5],
            q2: vec![],
            alpha: 0.0,
            theta: Mat::zeros(2, 1),
            sigma2: 1.0,
            eta1: 0.5,
            eta2: 0.5,
        };
        let (q1, _) = estep_cartesian(&st, &spec, 0.01);
        assert!((q1[0] - 10.0 / 10.1).abs() < 1e-12);
    }

    #[test]
    fn empty_column_graph_reduces_to_multivariate_estep() {
        let y = data(5, 3);
        let rows = Graph::cycle(5);
        let spec = ProductSpec::new(
            y.clone(),
            rows.clone(),
            Graph::new(3, vec![]).unwrap(),
            ProductKind::Cartesian,
            0.0,
            10.0,
            Hyper::default(),
            (1.0, 1.0),
        )
        .unwrap();
        let model = ModelSpec::new(
            y.clone(),
            Design::Identity(5),
            vec![1.0; 5],
            0.0,
            rows,
            10.0,
            Hyper::default(),
        )
        .unwrap();
        let theta = y.map(|v| 0.7 * v);
        let st = ProductState {
            q1: vec![0.0; 5],
            q2: vec![],
            alpha: 0.0,
            theta: theta.clone(),
            sigma2: 0.8,
            eta1: 0.3,
            eta2: 0.5,
        };
        let em = EmState {
            q: vec![0.0; 5],
            alpha: vec![0.0; 3],
            theta,
            sigma2: 0.8,
            eta: 0.3,
        };
        let (q1, _) = estep_cartesian(&st, &spec, 0.2);
        let reference = estep_general(&em, &model, 0.2, model.resistances());
        for (a, b) in q1.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cartesian_mstep_matches_direct_solve() {
        let spec = cart(6, 5);
        let q1: Vec<f64> = (0..5).map(|i| 0.2 * i as f64).collect();
        let q2: Vec<f64> = (0..4).map(|i| 0.9 - 0.2 * i as f64).collect();
        let (_, theta) = product_coefficients(&spec, &q1, &q2, 0.5).unwrap();
        let w1: Vec<f64> = q1.iter().map(|&q| weight(q, 0.5, 10.0)).collect();
        let w2: Vec<f64> = q2.iter().map(|&q| weight(q, 0.5, 10.0)).collect();
        let direct = cartesian_direct(
            &centered(&spec.y),
            &spec.rows.laplacian(&w1).unwrap(),
            &spec.cols.laplacian(&w2).unwrap(),
        )
        .unwrap();
        assert!((&theta - &direct).norm() <= 1e-8 * direct.norm());
        assert!(theta.sum().abs() < 1e-10);
        let sylv = sylvester_laplacian(
            &centered(&spec.y),
            &spec.rows.laplacian(&w1).unwrap(),
            &spec.cols.laplacian(&w2).unwrap(),
        );
        assert!((&sylv - &direct).norm() <= 1e-10 * direct.norm());
    }

    #[test]
    fn cartesian_penalty_identity() {
        let spec = cart(4, 3);
        let theta = Mat::from_fn(4, 3, |i, j| ((i * 5 + j * 11) % 7) as f64 * 0.3 - 1.0);
        let q1 = vec![0.1, 0.5, 0.9];
        let q2 = vec![0.3, 0.8];
        let w1: Vec<f64> = q1.iter().map(|&q| weight(q, 0.2, 10.0)).collect();
        let w2: Vec<f64> = q2.iter().map(|&q| weight(q, 0.2, 10.0)).collect();
        let (lr, lc) = (
            spec.rows.laplacian(&w1).unwrap(),
            spec.cols.laplacian(&w2).unwrap(),
        );
        let vec_form =
            (theta.transpose() * &lr * &theta).trace() + (&theta * &lc * theta.transpose()).trace();
        let sum_form = product_penalty(&spec, &theta, &q1, &q2, 0.2);
        assert!((vec_form - sum_form).abs() <= 1e-12 * vec_form.abs());
    }

    #[test]
    fn kronecker_mean_field_close_to_exact_on_single_edges() {
        let spec = ProductSpec::new(
            Mat::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.0]),
            Graph::chain(2),
            Graph::chain(2),
            ProductKind::Kronecker,
            0.0,
            1.0,
            Hyper::default(),
            (1.0, 1.0),
        )
        .unwrap();
        let (v0, s2, eta1, eta2) = (0.9, 0.5, 0.4, 0.7);
        let theta = Mat::from_row_slice(2, 2, &[0.3, -0.1, 0.2, -0.4]);
        let mut st = ProductState {
            q1: vec![0.5],
            q2: vec![0.5],
            alpha: 0.0,
            theta: theta.clone(),
            sigma2: s2,
            eta1,
            eta2,
        };
        for _ in 0..200 {
            (st.q1, st.q2) = estep_kronecker(&st, &spec, v0);
        }
        // Exhaustive posterior over (g1, g2) with the same relaxed prior factor.
        let t = theta.as_slice();
        let mut joint = [0.0f64; 4];
        for g in 0..4 {
            let (g1, g2) = ((g & 1) as f64, (g >> 1) as f64);
            let mut lp = g1 * eta1.ln()
                + (1.0 - g1) * (1.0 - eta1).ln()
                + g2 * eta2.ln()
                + (1.0 - g2) * (1.0 - eta2).ln();
            let w = weight(g1 * g2, v0, 1.0);
            for e in &spec.kron {
                lp += 0.5 * e.r * w.ln() - w * (t[e.a] - t[e.b]).powi(2) / (2.0 * s2);
            }
            joint[g] = lp;
        }
        let m = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = joint.iter().map(|l| (l - m).exp()).sum();
        let p = |g: usize| (joint[g] - m).exp() / z;
        assert!((st.q1[0] - (p(1) + p(3))).abs() < 1e-3);
        assert!((st.q2[0] - (p(2) + p(3))).abs() < 1e-3);
    }

    #[test]
    fn product_elbo_monotone() {
        for kind in [ProductKind::Cartesian, ProductKind::Kronecker] {
            let spec = ProductSpec::new(
                data(6, 4),
                Graph::chain(6),
                Graph::cycle(4),
                kind,
                0.5,
                10.0,
                Hyper::default(),
                (2.0, 1.0),
            )
            .unwrap();
            for &v0 in &[0.01, 0.5] {
                let fit = run_product_em(&spec, v0, None, &EmOptions::default()).unwrap();
                for w in fit.trace.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                        "{kind:?} v0={v0}: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
                assert!(fit.state.theta.sum().abs() < 1e-9);
            }
        }
    }

    fn blocks() -> Mat {
        Mat::from_fn(8, 6, |i, j| {
            3.0 * (i / 4) as f64 - 2.0 * (j / 3) as f64
                + 0.05 * (((i * 3 + j * 5) % 7) as f64 - 3.0)
        })
    }

    #[test]
    fn cartesian_latent_steps_commute_with_transpose() {
        let (v1, c, v0) = (10.0, 2.0, 0.3);
        let spec = BiclusterSpec::new(
            blocks(),
            3,
            2,
            ProductKind::Cartesian,
            1.0,
            v1,
            c,
            Hyper::default(),
        )
        .unwrap();
        let flip = BiclusterSpec::new(
            blocks().transpose(),
            2,
            3,
            ProductKind::Cartesian,
            1.0,
            c * v1,
            1.0 / c,
            Hyper::default(),
        )
        .unwrap();
        let q1 = Mat::from_fn(8, 3, |i, j| ((i + j) % 3 + 1) as f64 / 6.0);
        let q2 = Mat::from_fn(6, 2, |l, h| if (l + h) % 2 == 0 { 0.7 } else { 0.3 });
        let m = mstep_bicluster(&q1, &q2, &spec, v0).unwrap();
        let t = mstep_bicluster(&q2, &q1, &flip, c * v0).unwrap();
        assert!((&m.theta.transpose() - &t.theta).amax() < 1e-10);
        assert!((m.sigma2 - t.sigma2).abs() < 1e-12 * m.sigma2);
        let (
            Centers::Cartesian { rows, cols },
            Centers::Cartesian {
                rows: trows,
                cols: tcols,
            },
        ) = (&m.centers, &t.centers)
        else {
            panic!("cartesian centers expected");
        };
        assert!(
            (&rows.transpose() - tcols).amax() < 1e-10
                && (&cols.transpose() - trows).amax() < 1e-10
        );
        let state = BiclusterState {
            q1,
            q2,
            alpha: m.alpha,
            theta: m.theta,
            centers: m.centers,
            sigma2: m.sigma2,
        };
        let tstate = BiclusterState {
            q1: state.q2.clone(),
            q2: state.q1.clone(),
            alpha: t.alpha,
            theta: t.theta,
            centers: t.centers,
            sigma2: t.sigma2,
        };
        let (a1, a2) = estep_bicluster(&state, &spec, v0).unwrap();
        let (b1, b2) = estep_bicluster(&tstate, &flip, c * v0).unwrap();
        assert!((&a1 - &b2).amax() < 1e-10 && (&a2 - &b1).amax() < 1e-10);
    }

    #[test]
    fn latent_msteps_are_stationary() {
        for kind in [ProductKind::Cartesian, ProductKind::Kronecker] {
            let spec =
                BiclusterSpec::new(blocks(), 3, 3, kind, 1.0, 10.0, 2.0, Hyper::default()).unwrap();
            let q1 = Mat::from_fn(8, 3, |i, j| ((i + j) % 3 + 1) as f64 / 6.0);
            let q2 = Mat::from_fn(6, 3, |l, h| ((2 * l + h) % 3 + 1) as f64 / 6.0);
            let m = mstep_bicluster(&q1, &q2, &spec, 0.3).unwrap();
            assert!(m.theta.sum().abs() < 1e-10);
            // Moves that keep the entries summing to zero must not lower the objective.
            let obj = |theta: &Mat, centers: &Centers| {
                data_term(&spec.y, m.alpha, theta, spec.nu)
                    + bicluster_penalty(theta, centers, &q1, &q2, &spec, 0.3)
            };
            let base = obj(&m.theta, &m.centers);
            assert!((base - m.objective).abs() < 1e-10 * base);
            for ((i, j), (k, l)) in [((0, 0), (1, 1)), ((3, 2), (7, 0)), ((7, 5), (2, 4))] {
                for eps in [1e-4, -1e-4] {
                    let mut t = m.theta.clone();
                    t[(i, j)] += eps;
                    t[(k, l)] -= eps;
                    assert!(
                        obj(&t, &m.centers) >= base - 1e-12,
                        "{kind:?} ({i},{j}) {eps}"
                    );
                }
            }
            let mut c = m.centers.clone();
            match &mut c {
                Centers::Cartesian { rows, .. } => rows[(1, 1)] += 1e-4,
                Centers::Kronecker(mu) => mu[(1, 1)] += 1e-4,
            }
            assert!(obj(&m.theta, &c) >= base - 1e-12);
        }
    }

    #[test]
    fn bicluster_elbo_monotone_and_path_recovers_blocks() {
        let truth_rows: Vec<usize> = (0..8).map(|i| i / 4).collect();
        let truth_cols: Vec<usize> = (0..6).map(|j| j / 3).collect();
        for kind in [ProductKind::Cartesian, ProductKind::Kronecker] {
            let spec = BiclusterSpec::new(blocks(), 3, 3, kind, 0.0, 100.0, 1.0, Hyper::default())
                .unwrap();
            let path = bicluster_path(
                &spec,
                &spec.default_grid(),
                &[1.0],
                PathMode::Warm,
                &ClusterOptions::default(),
            )
            .unwrap();
            for p in &path {
                for w in p.fit.trace.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                        "{kind:?} v0={}: {} -> {}",
                        p.v0,
                        w[0],
                        w[1]
                    );
                }
            }
            assert!(path
                .iter()
                .any(|p| canonical_labels(&p.rows.labels) == truth_rows
                    && canonical_labels(&p.cols.labels) == truth_cols));
            let sel = bicluster_select(&spec, &path, Execution::Sequential).unwrap();
            assert_eq!(
                (sel.rows.clone(), sel.cols.clone()),
                (truth_rows.clone(), truth_cols.clone()),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn all_equal_data_gives_single_bicluster() {
        for kind in [ProductKind::Cartesian, ProductKind::Kronecker] {
            let spec = BiclusterSpec::new(
                Mat::from_element(5, 4, 2.0),
                2,
                2,
                kind,
                0.0,
                10.0,
                1.0,
                Hyper::default(),
            )
            .unwrap();
            let fit = run_bicluster_em(&spec, 0.1, None, &ClusterOptions::default()).unwrap();
            let (r, c) = reduce_bicluster(&fit.state, MERGE_EPS);
            assert_eq!((r.k_hat(), c.k_hat()), (1, 1));
        }
    }

    #[test]
    fn kronecker_single_center_is_grand_mean() {
        let spec = BiclusterSpec::new(
            blocks(),
            1,
            1,
            ProductKind::Kronecker,
            0.0,
            10.0,
            1.0,
            Hyper::default(),
        )
        .unwrap();
        let (q1, q2) = (Mat::from_element(8, 1, 1.0), Mat::from_element(6, 1, 1.0));
        let m = mstep_bicluster(&q1, &q2, &spec, 0.1).unwrap();
        let Centers::Kronecker(mu) = &m.centers else {
            panic!("kronecker centers")
        };
        assert!((mu[(0, 0)] - m.theta.mean()).abs() < 1e-12);
        let st = BiclusterState {
            q1,
            q2,
            alpha: 0.0,
            theta: m.theta,
            centers: m.centers,
            sigma2: 1.0,
        };
        let (a, b) = estep_bicluster(&st, &spec, 0.1).unwrap();
        assert!(a.iter().chain(b.iter()).all(|&x| x == 1.0));
    }

    #[test]
    fn bound_constant_matches_direct_sum() {
        let (n1, n2, k1, k2, r, v0, v1) = (3, 2, 2, 3, 0.37, 0.05, 20.0);
        let rows = [0usize, 1, 1];
        let cols = [2usize, 0];
        let mut direct = 0.0;
        for &rj in &rows {
            for j in 0..k1 {
                for &ch in &cols {
                    for h in 0..k2 {
                        let g = (rj == j && ch == h) as u8 as f64;
                        direct += r * (g / v0 + (1.0 - g) / v1).ln();
                    }
                }
            }
        }
        assert!((kronecker_bound_constant(n1, n2, k1, k2, r, v0, v1) - direct).abs() < 1e-12);
    }

    #[test]
    fn score_is_label_permutation_invariant() {
        let spec = BiclusterSpec::new(
            blocks(),
            3,
            3,
            ProductKind::Kronecker,
            0.0,
            100.0,
            1.0,
            Hyper::default(),
        )
        .unwrap();
        let a =
            bicluster_score(&spec, &[0, 0, 0, 0, 1, 1, 1, 1], &[0, 0, 0, 1, 1, 1], 2.0).unwrap();
        let b =
            bicluster_score(&spec, &[2, 2, 2, 2, 0, 0, 0, 0], &[1, 1, 1, 2, 2, 2], 2.0).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }
}
