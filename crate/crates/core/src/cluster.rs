//! Clustering with latent centers: every row of `y` links to each of `k` centers through a
//! spike-or-slab edge, with exactly one spike edge per row.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::em::{Hyper, PathMode};
use crate::error::{Error, Result};
use crate::gaussian::{Design, Precision, QpProblem};
use crate::graph::Graph;
use crate::linalg::{
    cholesky, ln_choose, log_grid, row_dist2, softmax_in_place, xlogx, Mat, Vector,
};
use crate::par::Execution;
use crate::selection::MarginalProblem;

/// Default merge threshold for centers.
pub const MERGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ClusterSpec {
    /// `n x d` observations, one per row.
    pub y: Mat,
    /// Upper bound on the number of clusters.
    pub k: usize,
    pub nu: Precision,
    pub v1: f64,
    pub hyper: Hyper,
}

impl ClusterSpec {
    pub fn new(y: Mat, k: usize, nu: f64, v1: f64, hyper: Hyper) -> Result<Self> {
        let nu = Precision::from_f64(nu)?;
        hyper.validate()?;
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::Dimension("empty data".into()));
        }
        if k == 0 || k > y.nrows() {
            return Err(Error::InvalidParameter(format!(
                "k must lie in 1..={}, got {k}",
                y.nrows()
            )));
        }
        if !(v1 > 0.0 && v1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v1 must be positive, got {v1}"
            )));
        }
        Ok(ClusterSpec {
            y,
            k,
            nu,
            v1,
            hyper,
        })
    }

    /// `ceil(sqrt(n))` clusters.
    pub fn default_k(n: usize) -> usize {
        ((n as f64).sqrt().ceil() as usize).clamp(1, n.max(1))
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    /// 20 log-spaced values in `[1e-4 v1, v1)`; `v0 = v1` is excluded because the assignment
    /// step needs `v0 < v1`.
    pub fn default_grid(&self) -> Vec<f64> {
        let mut g = log_grid(1e-4 * self.v1, self.v1, 21);
        g.pop();
        g
    }

    /// Column means of `y` and the column-centered data.
    pub fn centered(&self) -> (Vec<f64>, Mat) {
        let (n, d) = (self.n(), self.d());
        let mut yc = self.y.clone();
        let mut means = vec![0.0; d];
        for c in 0..d {
            means[c] = self.y.column(c).sum() / n as f64;
            for i in 0..n {
                yc[(i, c)] -= means[c];
            }
        }
        (means, yc)
    }

    /// Minimizer of `n |ybar - alpha|^2 + nu |alpha|^2`.
    pub fn alpha(&self) -> Vec<f64> {
        let n = self.n() as f64;
        let (means, _) = self.centered();
        match self.nu {
            Precision::Infinite => vec![0.0; self.d()],
            Precision::Finite(nu) => means.iter().map(|m| n * m / (n + nu)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// `n x k` assignment probabilities, rows sum to one.
    pub q: Mat,
    pub alpha: Vec<f64>,
    /// `n x d`, columns sum to zero.
    pub theta: Mat,
    /// `k x d` centers.
    pub mu: Mat,
    pub sigma2: f64,
}

/// `1 / (1/v0 - 1/v1)`.
pub fn vbar(v0: f64, v1: f64) -> Result<f64> {
    if !(v0 > 0.0 && v0 < v1) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < v0 < v1, got v0={v0}, v1={v1}"
        )));
    }
    Ok(1.0 / (1.0 / v0 - 1.0 / v1))
}

/// Row-wise softmax of `-|theta_i - mu_j|^2 / (2 sigma^2 vbar)`.
pub fn estep_cluster(state: &ClusterState, v0: f64, v1: f64) -> Result<Mat> {
    let vb = vbar(v0, v1)?;
    Ok(soft_assign(&state.theta, &state.mu, state.sigma2 * vb))
}

pub(crate) fn soft_assign(theta: &Mat, mu: &Mat, scale: f64) -> Mat {
    let (n, k) = (theta.nrows(), mu.nrows());
    let mut q = Mat::zeros(n, k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = -row_dist2(theta, i, mu, j) / (2.0 * scale);
        }
        softmax_in_place(&mut row);
        for j in 0..k {
            q[(i, j)] = row[j];
        }
    }
    q
}

/// Edge precisions `q/v0 + (1 - q)/v1`.
pub fn center_weights(q: &Mat, v0: f64, v1: f64) -> Mat {
    q.map(|x| x / v0 + (1.0 - x) / v1)
}

/// Minimize `|yc - theta|^2 + sum_ij c_ij |theta_i - mu_j|^2` over `(theta, mu)` for column-centered
/// `yc`. The minimizer has centered columns, so the sum-zero constraint holds without a multiplier.
/// Centers are eliminated first: `(S - C^T D^{-1} C) mu = C^T D^{-1} yc` with `D = I + diag(C 1)`,
/// `S = diag(C^T 1)`, then `theta = D^{-1}(yc + C mu)`.
pub fn solve_centers(yc: &Mat, c: &Mat) -> Result<(Mat, Mat)> {
    let (n, d) = (yc.nrows(), yc.ncols());
    let k = c.ncols();
    if c.nrows() != n {
        return Err(Error::Dimension(format!(
            "weights have {} rows, data has {n}",
            c.nrows()
        )));
    }
    let dinv: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + c.row(i).sum())).collect();
    let mut schur = Mat::zeros(k, k);
    let mut rhs = Mat::zeros(k, d);
    for i in 0..n {
        for j in 0..k {
            let cij = c[(i, j)];
            if cij == 0.0 {
                continue;
            }
            schur[(j, j)] += cij;
            let t = cij * dinv[i];
            for l in 0..k {
                schur[(j, l)] -= t * c[(i, l)];
            }
            for col in 0..d {
                rhs[(j, col)] += t * yc[(i, col)];
            }
        }
    }
    let mu = cholesky(&schur, "center system")?.solve(&rhs);
    let mut theta = yc + c * &mu;
    for i in 0..n {
        for col in 0..d {
            theta[(i, col)] *= dinv[i];
        }
    }
    for col in 0..d {
        let mean = theta.column(col).sum() / n as f64;
        for i in 0..n {
            theta[(i, col)] -= mean;
        }
    }
    Ok((theta, mu))
}

/// Penalty `sum_ij c_ij |theta_i - mu_j|^2`.
pub fn center_penalty(theta: &Mat, mu: &Mat, c: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..theta.nrows() {
        for j in 0..mu.nrows() {
            s += c[(i, j)] * row_dist2(theta, i, mu, j);
        }
    }
    s
}

/// `|y - 1 alpha^T - theta|^2 + nu |alpha|^2 + sum_ij c_ij |theta_i - mu_j|^2`.
pub fn cluster_objective(spec: &ClusterSpec, alpha: &[f64], theta: &Mat, mu: &Mat, c: &Mat) -> f64 {
    let mut f = 0.0;
    for col in 0..spec.d() {
        for i in 0..spec.n() {
            let r = spec.y[(i, col)] - alpha[col] - theta[(i, col)];
            f += r * r;
        }
        if let Precision::Finite(nu) = spec.nu {
            f += nu * alpha[col] * alpha[col];
        }
    }
    f + center_penalty(theta, mu, c)
}

#[derive(Debug, Clone)]
pub struct ClusterMStep {
    pub alpha: Vec<f64>,
    pub theta: Mat,
    pub mu: Mat,
    pub sigma2: f64,
    pub objective: f64,
}

pub fn mstep_cluster(q: &Mat, spec: &ClusterSpec, v0: f64) -> Result<ClusterMStep> {
    let c = center_weights(q, v0, spec.v1);
    let (_, yc) = spec.centered();
    let (theta, mu) = solve_centers(&yc, &c)?;
    let alpha = spec.alpha();
    let f = cluster_objective(spec, &alpha, &theta, &mu, &c);
    let (n, k, d) = (spec.n() as f64, spec.k as f64, spec.d() as f64);
    let sigma2 = (f + spec.hyper.b) / ((2.0 * n + k) * d + spec.hyper.a + 2.0);
    Ok(ClusterMStep {
        alpha,
        theta,
        mu,
        sigma2,
        objective: f,
    })
}

/// Variational objective. The relaxed normalizer of the bipartite prior does not depend on the
/// assignments, and is included so values are comparable across `v0`.
pub fn cluster_elbo(state: &ClusterState, spec: &ClusterSpec, v0: f64) -> f64 {
    let (n, k, d) = (spec.n() as f64, spec.k as f64, spec.d() as f64);
    let s2 = state.sigma2;
    let c = center_weights(&state.q, v0, spec.v1);
    let f = cluster_objective(spec, &state.alpha, &state.theta, &state.mu, &c);
    let mut value = -0.5 * (2.0 * n + k) * d * (2.0 * PI * s2).ln() - f / (2.0 * s2);
    // Every bipartite edge has resistance (n + k - 1)/(n k); K_{n,k} has n^{k-1} k^{n-1} spanning trees.
    let r = (n + k - 1.0) / (n * k);
    let bound = -r * n * v0.ln() - r * n * (k - 1.0) * spec.v1.ln()
        + (k - 1.0) * n.ln()
        + (n - 1.0) * k.ln();
    value += 0.5 * d * bound;
    value -= n * k.ln();
    value -= state.q.iter().map(|&x| xlogx(x)).sum::<f64>();
    value + spec.hyper.ln_prior_sigma2(s2)
}

/// Farthest-point seeding from row `first`: repeatedly add the row farthest from the chosen set.
/// Ties go to the lower index.
pub fn seed_centers(yc: &Mat, k: usize, first: usize) -> Vec<usize> {
    let n = yc.nrows();
    let mut best = vec![f64::INFINITY; n];
    let mut chosen = Vec::with_capacity(k);
    let mut next = first;
    for _ in 0..k {
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(row_dist2(yc, i, yc, next));
        }
        next = (0..n).fold(0, |b, i| if best[i] > best[b] { i } else { b });
    }
    chosen
}

/// Lloyd sweeps allowed when refining a seeded assignment.
pub const LLOYD_MAX_ITER: usize = 100;

/// Number of farthest-point chains tried by [`initial_assignment`].
pub const SEED_STARTS: usize = 10;

/// Lloyd iterations from the given seed rows until the labels stop changing. A cluster that empties
/// keeps its last center. Returns the labels and the within-cluster sum of squares.
fn lloyd(yc: &Mat, seeds: &[usize]) -> (Vec<usize>, f64) {
    let (n, d, k) = (yc.nrows(), yc.ncols(), seeds.len());
    let mut centers = Mat::from_fn(k, d, |j, c| yc[(seeds[j], c)]);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let j = (0..k).fold(0, |b, j| {
                if row_dist2(yc, i, &centers, j) < row_dist2(yc, i, &centers, b) {
                    j
                } else {
                    b
                }
            });
            changed |= *label != j;
            *label = j;
        }
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            for c in 0..d {
                sums[(j, c)] += yc[(i, c)];
            }
        }
        for j in (0..k).filter(|&j| counts[j] > 0) {
            for c in 0..d {
                centers[(j, c)] = sums[(j, c)] / counts[j] as f64;
            }
        }
    }
    let sse = labels
        .iter()
        .enumerate()
        .map(|(i, &j)| row_dist2(yc, i, &centers, j))
        .sum();
    (labels, sse)
}

/// Hard initial assignment of the rows of `yc` into `k` clusters, as an `n x k` one-hot matrix.
/// Farthest-point chains start from the row farthest from the mean and from up to
/// `SEED_STARTS - 1` evenly spaced rows; each is refined by Lloyd iterations and the one with
/// the smallest within-cluster sum of squares is kept (earliest on ties).
pub(crate) fn initial_assignment(yc: &Mat, k: usize) -> Mat {
    let n = yc.nrows();
    let zero = Mat::zeros(1, yc.ncols());
    let far = (0..n).fold(0, |b, i| {
        if row_dist2(yc, i, &zero, 0) > row_dist2(yc, b, &zero, 0) {
            i
        } else {
            b
        }
    });
    let mut starts = vec![far];
    let extra = SEED_STARTS.saturating_sub(1).min(n);
    starts.extend((0..extra).map(|s| s * n / extra).filter(|&i| i != far));
    let (labels, _) = starts
        .iter()
        .map(|&first| lloyd(yc, &seed_centers(yc, k, first)))
        .fold((Vec::new(), f64::INFINITY), |best, cand| {
            if cand.1 < best.1 {
                cand
            } else {
                best
            }
        });
    one_hot(&labels, k)
}

/// M-step from the initial hard assignment, then an E-step.
pub fn initial_cluster_state(spec: &ClusterSpec, v0: f64) -> Result<ClusterState> {
    let (_, yc) = spec.centered();
    let q0 = initial_assignment(&yc, spec.k);
    let m = mstep_cluster(&q0, spec, v0)?;
    let mut state = ClusterState {
        q: q0,
        alpha: m.alpha,
        theta: m.theta,
        mu: m.mu,
        sigma2: m.sigma2,
    };
    state.q = estep_cluster(&state, v0, spec.v1)?;
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    /// Relative ELBO change.
    pub tol: f64,
    /// Largest center move per sweep, relative to the data scale.
    pub center_tol: f64,
    pub max_iter: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            tol: 1e-8,
            center_tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub state: ClusterState,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn run_cluster_em(
    spec: &ClusterSpec,
    v0: f64,
    init: Option<&ClusterState>,
    opts: &ClusterOptions,
) -> Result<ClusterFit> {
    vbar(v0, spec.v1)?;
    let mut state = match init {
        Some(s) => {
            let mut s = s.clone();
            s.q = estep_cluster(&s, v0, spec.v1)?;
            s
        }
        None => initial_cluster_state(spec, v0)?,
    };
    let scale = spec.y.amax().max(1.0);
    let mut trace = vec![cluster_elbo(&state, spec, v0)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let m = mstep_cluster(&state.q, spec, v0)?;
        let moved = (&m.mu - &state.mu).amax();
        state.alpha = m.alpha;
        state.theta = m.theta;
        state.mu = m.mu;
        state.sigma2 = m.sigma2;
        state.q = estep_cluster(&state, v0, spec.v1)?;
        let value = cluster_elbo(&state, spec, v0);
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite clustering ELBO at iteration {iterations} (v0={v0})"
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
    Ok(ClusterFit {
        state,
        trace,
        iterations,
        converged,
    })
}

/// Centers grouped within `eps`, with the induced assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedClustering {
    /// Center indices of each group, groups ordered by their smallest member.
    pub groups: Vec<Vec<usize>>,
    /// `k_hat x d` group means.
    pub mu: Mat,
    /// `n x k_hat` summed probabilities.
    pub q: Mat,
    /// Hard assignment in `0..k_hat`.
    pub labels: Vec<usize>,
}

impl ReducedClustering {
    pub fn k_hat(&self) -> usize {
        self.groups.len()
    }
}

/// Single-linkage grouping of centers closer than `eps`.
pub fn merge_centers(mu: &Mat, q: &Mat, eps: f64) -> ReducedClustering {
    let k = mu.nrows();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for j in 0..k {
        for l in (j + 1)..k {
            if row_dist2(mu, j, mu, l).sqrt() <= eps {
                let (a, b) = (find(&mut parent, j), find(&mut parent, l));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in 0..k {
        let root = find(&mut parent, j);
        let g = *index.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(j);
    }
    let kh = groups.len();
    let d = mu.ncols();
    let mut mu_t = Mat::zeros(kh, d);
    let mut q_t = Mat::zeros(q.nrows(), kh);
    for (g, members) in groups.iter().enumerate() {
        for &j in members {
            for c in 0..d {
                mu_t[(g, c)] += mu[(j, c)] / members.len() as f64;
            }
            for i in 0..q.nrows() {
                q_t[(i, g)] += q[(i, j)];
            }
        }
    }
    let labels = (0..q.nrows())
        .map(|i| (0..kh).fold(0, |b, g| if q_t[(i, g)] > q_t[(i, b)] { g } else { b }))
        .collect();
    ReducedClustering {
        groups,
        mu: mu_t,
        q: q_t,
        labels,
    }
}

/// Relabel by first appearance so equal partitions compare equal.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Number of distinct labels.
pub fn num_clusters(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// `n x k` one-hot matrix of `labels`.
pub fn one_hot(labels: &[usize], k: usize) -> Mat {
    let mut g = Mat::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        g[(i, l)] = 1.0;
    }
    g
}

/// Laplacian on the `k` centers with weight `(n_j + n_l) / v1` between centers `j` and `l`.
pub fn center_laplacian(sizes: &[f64], v1: f64) -> Mat {
    let k = sizes.len();
    let mut edges = Vec::new();
    let mut w = Vec::new();
    for j in 0..k {
        for l in (j + 1)..k {
            edges.push((j, l));
            w.push((sizes[j] + sizes[l]) / v1);
        }
    }
    Graph::new(k, edges)
        .expect("complete graph")
        .laplacian(&w)
        .expect("one weight per edge")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScore {
    pub value: f64,
    pub valid: bool,
    /// Nonempty clusters.
    pub k_eff: usize,
}

/// Log posterior of the partition `labels` (values in `0..k`) in the exact-cluster limit, including
/// the count of label assignments that give the same partition.
pub fn cluster_score(spec: &ClusterSpec, labels: &[usize]) -> Result<ClusterScore> {
    cluster_score_parts(&spec.y, labels, spec.k, spec.nu, spec.v1, &spec.hyper)
}

pub(crate) fn cluster_score_parts(
    y: &Mat,
    labels: &[usize],
    k: usize,
    nu: Precision,
    v1: f64,
    hyper: &Hyper,
) -> Result<ClusterScore> {
    let n = y.nrows();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidParameter(format!(
            "label {bad} out of range for k={k}"
        )));
    }
    let gamma = one_hot(labels, k);
    let sizes: Vec<f64> = (0..k).map(|j| gamma.column(j).sum()).collect();
    let l = center_laplacian(&sizes, v1);
    let a = Vector::from_element(n, 1.0);
    let k_eff = num_clusters(labels);
    let perm = ln_choose(k, k_eff) + statrs::function::factorial::ln_factorial(k_eff as u64);
    let gauss = MarginalProblem {
        y,
        a: &a,
        t: &gamma,
        c: &sizes,
        l: &l,
        nu,
        hyper,
    }
    .log_marginal();
    Ok(match gauss {
        Some(g) => ClusterScore {
            value: g + perm,
            valid: true,
            k_eff,
        },
        None => ClusterScore {
            value: f64::NEG_INFINITY,
            valid: false,
            k_eff,
        },
    })
}

/// Posterior mode of `(alpha, mu)` given the partition: returns the fitted `n x d` mean.
pub fn cluster_point_estimate(spec: &ClusterSpec, labels: &[usize]) -> Result<Mat> {
    let n = spec.n();
    let gamma = one_hot(labels, spec.k);
    let sizes: Vec<f64> = (0..spec.k).map(|j| gamma.column(j).sum()).collect();
    let l = center_laplacian(&sizes, spec.v1);
    let a = Vector::from_element(n, 1.0);
    let x = Design::Dense(gamma);
    let sol = QpProblem {
        y: &spec.y,
        a: &a,
        x: &x,
        l: &l,
        c: &sizes,
        nu: spec.nu,
    }
    .solve()?;
    let mut fit = x.apply(&sol.theta);
    for c in 0..spec.d() {
        for i in 0..n {
            fit[(i, c)] += sol.alpha[c];
        }
    }
    Ok(fit)
}

/// Bipartite-projection weights `lambda_il = sum_j gamma_ij gamma_lj / n_j`; rows sum to one.
pub fn projection_weights(labels: &[usize], k: usize) -> Result<Mat> {
    let n = labels.len();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::InvalidParameter(format!(
                "label {l} out of range for k={k}"
            )));
        }
        sizes[l] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!("cluster {j} is empty")));
    }
    Ok(Mat::from_fn(n, n, |i, l| {
        if labels[i] == labels[l] {
            1.0 / sizes[labels[i]] as f64
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone)]
pub struct ClusterPathPoint {
    pub v0: f64,
    pub fit: ClusterFit,
    pub reduced: ReducedClustering,
}

#[derive(Debug, Clone)]
pub struct ClusterPath {
    pub points: Vec<ClusterPathPoint>,
}

pub fn cluster_path(
    spec: &ClusterSpec,
    grid: &[f64],
    mode: PathMode,
    opts: &ClusterOptions,
) -> Result<ClusterPath> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty v0 grid".into()));
    }
    for &v0 in grid {
        vbar(v0, spec.v1)?;
    }
    let point = |v0: f64, fit: ClusterFit| {
        let reduced = merge_centers(&fit.state.mu, &fit.state.q, MERGE_EPS);
        ClusterPathPoint { v0, fit, reduced }
    };
    let points = match mode {
        PathMode::Warm => {
            let mut out: Vec<ClusterPathPoint> = Vec::with_capacity(grid.len());
            for &v0 in grid {
                let init = out.last().map(|p| &p.fit.state);
                let fit = run_cluster_em(spec, v0, init, opts)?;
                out.push(point(v0, fit));
            }
            out
        }
        PathMode::Cold(exec) => exec
            .map(grid, |&v0| {
                run_cluster_em(spec, v0, None, opts).map(|f| point(v0, f))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ClusterPath { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCandidate {
    /// Canonical labels.
    pub labels: Vec<usize>,
    pub v0s: Vec<f64>,
    pub score: ClusterScore,
}

#[derive(Debug, Clone)]
pub struct ClusterSelection {
    pub labels: Vec<usize>,
    pub score: f64,
    pub candidates: Vec<ClusterCandidate>,
    pub best: usize,
}

/// Distinct partitions in first-appearance order with the grid values that produced them.
pub fn dedup_partitions(
    points: impl IntoIterator<Item = (f64, Vec<usize>)>,
) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut out: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for (v0, labels) in points {
        let labels = canonical_labels(&labels);
        match index.get(&labels) {
            Some(&i) => out[i].1.push(v0),
            None => {
                index.insert(labels.clone(), out.len());
                out.push((labels, vec![v0]));
            }
        }
    }
    out
}

/// Valid first, then higher score, then fewer clusters.
pub fn better_partition(a: &ClusterScore, b: &ClusterScore) -> bool {
    match (a.valid, b.valid) {
        (true, false) => return true,
        (false, true) => return false,
        _ => {}
    }
    if a.value != b.value {
        return a.value > b.value;
    }
    a.k_eff < b.k_eff
}

pub fn select_clustering(
    spec: &ClusterSpec,
    path: &ClusterPath,
    exec: Execution,
) -> Result<ClusterSelection> {
    if path.points.is_empty() {
        return Err(Error::InvalidParameter("empty solution path".into()));
    }
    let parts = dedup_partitions(path.points.iter().map(|p| (p.v0, p.reduced.labels.clone())));
    let candidates = exec
        .map(&parts, |(labels, v0s)| {
            cluster_score(spec, labels).map(|score| ClusterCandidate {
                labels: labels.clone(),
                v0s: v0s.clone(),
                score,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.score.valid && best.is_none_or(|b| better_partition(&c.score, &candidates[b].score)) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::NoValidCandidate(candidates.len()))?;
    Ok(ClusterSelection {
        labels: candidates[best].labels.clone(),
        score: candidates[best].score.value,
        candidates,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::column;

    fn toy(k: usize) -> ClusterSpec {
        ClusterSpec::new(
            column(&[4.0, 2.0, -2.0, -4.0]),
            k,
            0.0,
            100.0,
            Hyper::default(),
        )
        .unwrap()
    }

    fn state(theta: &[f64], mu: &[f64], sigma2: f64) -> ClusterState {
        ClusterState {
            q: Mat::zeros(theta.len(), mu.len()),
            alpha: vec![0.0],
            theta: column(theta),
            mu: column(mu),
            sigma2,
        }
    }

    #[test]
    fn estep_examples() {
        let q = estep_cluster(&state(&[0.0], &[-1.0, 1.0], 1.0), 0.01, 100.0).unwrap();
        assert!((q[(0, 0)] - 0.5).abs() < 1e-15);
        let q = estep_cluster(&state(&[0.3, 2.0], &[1.0, 1.0, 1.0], 1.0), 0.01, 100.0).unwrap();
        assert!(q.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let (v0, v1, s2) = (0.5, 10.0, 2.0);
        let vb = vbar(v0, v1).unwrap();
        let gap = (2.0 * s2 * vb * 9f64.ln()).sqrt();
        let q = estep_cluster(&state(&[0.0], &[0.0, gap], s2), v0, v1).unwrap();
        assert!((q[(0, 0)] - 0.9).abs() < 1e-12);
        assert!(estep_cluster(&state(&[0.0], &[0.0], 1.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn centers_match_dense_joint_solve() {
        let (n, k, d) = (12, 3, 2);
        let y = Mat::from_fn(n, d, |i, c| ((i * 5 + c * 7) % 9) as f64 - 4.0);
        let spec = ClusterSpec::new(y, k, 1.0, 10.0, Hyper::default()).unwrap();
        let (_, yc) = spec.centered();
        let q = Mat::from_fn(n, k, |i, j| ((i + 2 * j) % 4 + 1) as f64);
        let q = Mat::from_fn(n, k, |i, j| q[(i, j)] / q.row(i).sum());
        let c = center_weights(&q, 0.3, 10.0);
        let (theta, mu) = solve_centers(&yc, &c).unwrap();
        // Joint system on (theta, mu, multiplier) per column.
        let dim = n + k + 1;
        let mut a = Mat::zeros(dim, dim);
        for i in 0..n {
            a[(i, i)] += 1.0;
            for j in 0..k {
                a[(i, i)] += c[(i, j)];
                a[(n + j, n + j)] += c[(i, j)];
                a[(i, n + j)] -= c[(i, j)];
                a[(n + j, i)] -= c[(i, j)];
            }
            a[(i, n + k)] = 1.0;
            a[(n + k, i)] = 1.0;
        }
        let lu = a.lu();
        for col in 0..d {
            let mut rhs = Vector::zeros(dim);
            for i in 0..n {
                rhs[i] = yc[(i, col)];
            }
            let x = lu.solve(&rhs).unwrap();
            for i in 0..n {
                assert!((x[i] - theta[(i, col)]).abs() < 1e-10);
            }
            for j in 0..k {
                assert!((x[n + j] - mu[(j, col)]).abs() < 1e-10);
            }
            assert!(x[n + k].abs() < 1e-10);
        }
    }

    #[test]
    fn hard_assignment_limit_gives_cluster_means() {
        let mut spec = toy(2);
        spec.v1 = 1e8;
        let q = one_hot(&[0, 0, 1, 1], 2);
        let m = mstep_cluster(&q, &spec, 1e-8).unwrap();
        assert!((m.mu[(0, 0)] - 3.0).abs() < 1e-5);
        assert!((m.mu[(1, 0)] + 3.0).abs() < 1e-5);
    }

    #[test]
    fn elbo_never_decreases() {
        for k in 2..=4 {
            let spec = toy(k);
            for &v0 in &[0.05, 1.0, 20.0] {
                let fit = run_cluster_em(&spec, v0, None, &ClusterOptions::default()).unwrap();
                for w in fit.trace.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                        "k={k} v0={v0}: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
            }
        }
    }

    #[test]
    fn merge_examples() {
        let mu = column(&[1.0, 1.0 + 1e-9, 5.0]);
        let q = Mat::from_row_slice(2, 3, &[0.3, 0.3, 0.4, 0.1, 0.1, 0.8]);
        let r = merge_centers(&mu, &q, MERGE_EPS);
        assert_eq!(r.groups, vec![vec![0, 1], vec![2]]);
        assert_eq!(r.labels, vec![0, 1]);
        assert!((r.q.row(0).sum() - 1.0).abs() < 1e-15);
        let r = merge_centers(&column(&[0.0, 1.0, 2.0]), &Mat::identity(3, 3), MERGE_EPS);
        assert_eq!(r.k_hat(), 3);
        assert_eq!(r.labels, vec![0, 1, 2]);
    }

    #[test]
    fn score_ignores_label_names() {
        let spec = toy(4);
        let a = cluster_score(&spec, &[0, 0, 1, 1]).unwrap();
        let b = cluster_score(&spec, &[3, 3, 1, 1]).unwrap();
        assert!((a.value - b.value).abs() < 1e-10);
        assert_eq!(a.k_eff, 2);
    }

    #[test]
    fn permutation_count_term() {
        let perm = ln_choose(4, 2) + statrs::function::factorial::ln_factorial(2);
        assert!((perm - 12f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn projection_weight_rows() {
        let lam = projection_weights(&[0, 1], 2).unwrap();
        assert_eq!(lam[(0, 1)], 0.0);
        let lam = projection_weights(&[0, 0, 0, 1], 2).unwrap();
        assert!((lam[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(lam.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-15));
        assert!(projection_weights(&[0, 0], 2).is_err());
    }

    #[test]
    fn merged_centers_at_large_v0() {
        let spec = toy(3);
        let fit = run_cluster_em(&spec, 90.0, None, &ClusterOptions::default()).unwrap();
        let r = merge_centers(&fit.state.mu, &fit.state.q, MERGE_EPS);
        assert_eq!(r.k_hat(), 1);
    }
}
