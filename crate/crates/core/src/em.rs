//! Variational EM for the spike-and-slab Laplacian model on a general base graph.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gaussian::{constrained_qp, solve_identity_plus_laplacian, Design, Precision};
use crate::graph::Graph;
use crate::linalg::{bernoulli_entropy, ln_beta, logistic, Mat};
use crate::par::Execution;

/// Inverse-gamma `(a/2, b/2)` prior on the noise variance and Beta `(A, B)` prior on the edge inclusion rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub a: f64,
    pub b: f64,
    pub big_a: f64,
    pub big_b: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            a: 1.0,
            b: 1.0,
            big_a: 1.0,
            big_b: 1.0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::InvalidParameter("a and b must be positive".into()));
        }
        if !(self.big_a >= 1.0 && self.big_b >= 1.0) {
            return Err(Error::InvalidParameter("A and B must be at least 1".into()));
        }
        Ok(())
    }

    /// Log density of the inverse-gamma prior at `s2`.
    pub fn ln_prior_sigma2(&self, s2: f64) -> f64 {
        let (ha, hb) = (self.a / 2.0, self.b / 2.0);
        ha * hb.ln() - statrs::function::gamma::ln_gamma(ha) - (ha + 1.0) * s2.ln() - hb / s2
    }

    /// Log density of the Beta prior at `eta`.
    pub fn ln_prior_eta(&self, eta: f64) -> f64 {
        mul_ln(self.big_a - 1.0, eta) + mul_ln(self.big_b - 1.0, 1.0 - eta)
            - ln_beta(self.big_a, self.big_b).expect("A, B >= 1")
    }
}

/// `c ln x` with `0 ln 0 = 0`.
pub(crate) fn mul_ln(c: f64, x: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * x.ln()
    }
}

/// One regression problem `y = X(alpha w + theta) + noise` with a graph prior on `theta`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub y: Mat,
    pub design: Design,
    pub w: Vec<f64>,
    pub nu: Precision,
    pub graph: Graph,
    pub v1: f64,
    pub hyper: Hyper,
    resistances: Vec<f64>,
    ln_spanning_trees: f64,
    is_tree: bool,
}

impl ModelSpec {
    pub fn new(
        y: Mat,
        design: Design,
        w: Vec<f64>,
        nu: f64,
        graph: Graph,
        v1: f64,
        hyper: Hyper,
    ) -> Result<Self> {
        let nu = Precision::from_f64(nu)?;
        hyper.validate()?;
        if !(v1 > 0.0 && v1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v1 must be positive, got {v1}"
            )));
        }
        if design.n() != y.nrows() {
            return Err(Error::Dimension(format!(
                "y has {} rows, design has {}",
                y.nrows(),
                design.n()
            )));
        }
        if design.p() != graph.p() || w.len() != graph.p() {
            return Err(Error::Dimension(format!(
                "design has {} columns, graph has {} nodes, w has {} entries",
                design.p(),
                graph.p(),
                w.len()
            )));
        }
        if y.ncols() == 0 {
            return Err(Error::Dimension("response has no columns".into()));
        }
        let sum_w: f64 = w.iter().sum();
        let norm_w = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(sum_w.abs() > 1e-12 * norm_w * (w.len() as f64).sqrt()) {
            return Err(Error::InvalidParameter(
                "grounding vector w must not be orthogonal to 1".into(),
            ));
        }
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        let is_tree = graph.m() + 1 == graph.p();
        let resistances = if is_tree {
            vec![1.0; graph.m()]
        } else {
            graph.effective_resistances()?
        };
        let ln_spanning_trees = if is_tree {
            0.0
        } else {
            graph.weighted_tree_logsum(&vec![1.0; graph.m()])?
        };
        Ok(ModelSpec {
            y,
            design,
            w,
            nu,
            graph,
            v1,
            hyper,
            resistances,
            ln_spanning_trees,
            is_tree,
        })
    }

    /// Identity design, `w = 1`, so `theta` lives on the nodes of `graph` directly.
    pub fn denoising(y: Mat, graph: Graph, nu: f64, v1: f64, hyper: Hyper) -> Result<Self> {
        let p = graph.p();
        ModelSpec::new(y, Design::Identity(p), vec![1.0; p], nu, graph, v1, hyper)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.graph.p()
    }

    pub fn m(&self) -> usize {
        self.graph.m()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn resistances(&self) -> &[f64] {
        &self.resistances
    }

    pub fn is_tree(&self) -> bool {
        self.is_tree
    }

    pub fn default_grid(&self) -> Vec<f64> {
        crate::linalg::log_grid(1e-4 * self.v1, self.v1, 20)
    }

    fn w_is_constant(&self) -> bool {
        let w0 = self.w[0];
        self.w.iter().all(|&v| v == w0)
    }

    /// Spike/slab precision per edge at inclusion probabilities `q`.
    pub fn edge_weights(&self, q: &[f64], v0: f64) -> Vec<f64> {
        q.iter().map(|&qe| qe / v0 + (1.0 - qe) / self.v1).collect()
    }

    /// Minimize the penalized least-squares objective with edge weights `weights`.
    pub fn fit_coefficients(&self, weights: &[f64]) -> Result<(Vec<f64>, Mat, f64)> {
        if let (Design::Identity(n), true) = (&self.design, self.w_is_constant()) {
            // w = c 1 and X = I: alpha and theta decouple exactly.
            let n = *n;
            let c = self.w[0];
            let d = self.d();
            let mut alpha = vec![0.0; d];
            let mut centered = self.y.clone();
            for k in 0..d {
                let s: f64 = self.y.column(k).sum();
                let mean = s / n as f64;
                alpha[k] = match self.nu {
                    Precision::Infinite => 0.0,
                    Precision::Finite(nu) => c * s / (c * c * n as f64 + nu),
                };
                for i in 0..n {
                    centered[(i, k)] -= mean;
                }
            }
            let mut theta = solve_identity_plus_laplacian(&self.graph, weights, &centered)?;
            // (I + L) preserves the ones direction; remove round-off drift from the constraint.
            for k in 0..d {
                let s: f64 = theta.column(k).sum() / n as f64;
                for i in 0..n {
                    theta[(i, k)] -= s;
                }
            }
            let f = self.objective(&alpha, &theta, weights);
            return Ok((alpha, theta, f));
        }
        let l = self.graph.laplacian(weights)?;
        let sol = constrained_qp(&self.y, &self.design, &self.w, self.nu, &l)?;
        Ok((sol.alpha, sol.theta, sol.objective))
    }

    /// `|y - X(w alpha^T + theta)|^2 + nu |alpha|^2 + sum_e weight_e |theta_i - theta_j|^2`.
    pub fn objective(&self, alpha: &[f64], theta: &Mat, weights: &[f64]) -> f64 {
        self.rss(alpha, theta) + self.alpha_penalty(alpha) + self.penalty(theta, weights)
    }

    pub fn rss(&self, alpha: &[f64], theta: &Mat) -> f64 {
        let mut beta = theta.clone();
        for k in 0..self.d() {
            for i in 0..self.p() {
                beta[(i, k)] += self.w[i] * alpha[k];
            }
        }
        (&self.y - self.design.apply(&beta)).norm_squared()
    }

    fn alpha_penalty(&self, alpha: &[f64]) -> f64 {
        match self.nu {
            Precision::Finite(nu) if nu > 0.0 => nu * alpha.iter().map(|a| a * a).sum::<f64>(),
            _ => 0.0,
        }
    }

    pub fn penalty(&self, theta: &Mat, weights: &[f64]) -> f64 {
        self.graph
            .edges()
            .iter()
            .zip(weights)
            .map(|(&(i, j), &w)| w * edge_dist2(theta, i, j))
            .sum()
    }
}

pub(crate) fn edge_dist2(theta: &Mat, i: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..theta.ncols() {
        let t = theta[(i, k)] - theta[(j, k)];
        s += t * t;
    }
    s
}

/// Variational state of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta: Mat,
    pub sigma2: f64,
    pub eta: f64,
}

/// Inclusion log-odds for one edge: spike versus slab with resistance exponent `r d / 2`.
pub(crate) fn edge_log_odds(
    eta: f64,
    dist2: f64,
    sigma2: f64,
    v0: f64,
    v1: f64,
    r: f64,
    d: usize,
) -> f64 {
    let prior = eta.ln() - (1.0 - eta).ln();
    let volume = -0.5 * r * d as f64 * (v0.ln() - v1.ln());
    let data = -dist2 / (2.0 * sigma2) * (1.0 / v0 - 1.0 / v1);
    prior + volume + data
}

pub(crate) fn inclusion(
    eta: f64,
    dist2: f64,
    sigma2: f64,
    v0: f64,
    v1: f64,
    r: f64,
    d: usize,
) -> f64 {
    if eta >= 1.0 {
        return 1.0;
    }
    if eta <= 0.0 {
        return 0.0;
    }
    logistic(edge_log_odds(eta, dist2, sigma2, v0, v1, r, d))
}

/// E-step for a tree base graph (every resistance equals one).
pub fn estep_tree(state: &EmState, spec: &ModelSpec, v0: f64) -> Vec<f64> {
    let ones = vec![1.0; spec.m()];
    estep_general(state, spec, v0, &ones)
}

/// E-step with per-edge effective resistances.
pub fn estep_general(state: &EmState, spec: &ModelSpec, v0: f64, r: &[f64]) -> Vec<f64> {
    spec.graph
        .edges()
        .iter()
        .zip(r)
        .map(|(&(i, j), &re)| {
            inclusion(
                state.eta,
                edge_dist2(&state.theta, i, j),
                state.sigma2,
                v0,
                spec.v1,
                re,
                spec.d(),
            )
        })
        .collect()
}

/// E-step using the resistances cached in `spec`.
pub fn estep(state: &EmState, spec: &ModelSpec, v0: f64) -> Vec<f64> {
    estep_general(state, spec, v0, spec.resistances())
}

#[derive(Debug, Clone)]
pub struct MStep {
    pub alpha: Vec<f64>,
    pub theta: Mat,
    pub sigma2: f64,
    pub eta: f64,
    /// Penalized objective at the new coefficients.
    pub objective: f64,
}

pub fn mstep(q: &[f64], spec: &ModelSpec, v0: f64) -> Result<MStep> {
    let weights = spec.edge_weights(q, v0);
    let (alpha, theta, f) = spec.fit_coefficients(&weights)?;
    let h = &spec.hyper;
    let (n, p, d, m) = (
        spec.n() as f64,
        spec.p() as f64,
        spec.d() as f64,
        spec.m() as f64,
    );
    let sigma2 = (f + h.b) / ((p + n) * d + h.a + 2.0);
    let q_sum: f64 = q.iter().sum();
    let denom = h.big_a + h.big_b + m - 2.0;
    let eta = if denom > 0.0 {
        ((h.big_a - 1.0 + q_sum) / denom).clamp(0.0, 1.0)
    } else {
        0.5
    };
    Ok(MStep {
        alpha,
        theta,
        sigma2,
        eta,
        objective: f,
    })
}

/// Variational lower bound, up to constants that depend on neither the state nor `v0`.
pub fn elbo(state: &EmState, spec: &ModelSpec, v0: f64) -> f64 {
    let (n, p, d) = (spec.n() as f64, spec.p() as f64, spec.d() as f64);
    let s2 = state.sigma2;
    let ln2pis = (2.0 * PI * s2).ln();
    let weights = spec.edge_weights(&state.q, v0);
    let f = spec.objective(&state.alpha, &state.theta, &weights);

    // Gaussian parts: n d likelihood terms, d alpha terms, (p - 1) d theta terms.
    let mut value = -0.5 * (n + 1.0 + p - 1.0) * d * ln2pis - f / (2.0 * s2);

    // Normalizer of the relaxed prior: expected log weights times resistances.
    let (lv0, lv1) = (v0.ln(), spec.v1.ln());
    let mut bound = spec.ln_spanning_trees;
    let sum_w: f64 = spec.w.iter().sum();
    let norm2_w: f64 = spec.w.iter().map(|v| v * v).sum();
    bound += (sum_w * sum_w / norm2_w).ln();
    for (&qe, &re) in state.q.iter().zip(spec.resistances()) {
        bound -= re * (qe * lv0 + (1.0 - qe) * lv1);
    }
    value += 0.5 * d * bound;

    for &qe in &state.q {
        value += mul_ln(qe, state.eta) + mul_ln(1.0 - qe, 1.0 - state.eta);
        value += bernoulli_entropy(qe);
    }
    value += spec.hyper.ln_prior_eta(state.eta);
    value += spec.hyper.ln_prior_sigma2(s2);
    value
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub state: EmState,
    /// ELBO after initialization and after every sweep.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmFit {
    pub fn elbo(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Robust variance estimate from edge differences: for an unchanged edge,
/// `|Delta|^2 / (2 sigma^2 d)` is chi-square with median ~0.4549 when `d = 1`.
fn sigma2_from_differences(theta: &Mat, g: &Graph) -> f64 {
    let d = theta.ncols() as f64;
    let mut v: Vec<f64> = g
        .edges()
        .iter()
        .map(|&(i, j)| edge_dist2(theta, i, j) / d)
        .collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite differences"));
    let med = v[v.len() / 2];
    med / (2.0 * 0.454_936_423_119_572_7)
}

/// Deterministic starting point: lightly penalized fit, `eta = 1/2`, variance from its residuals.
pub fn initial_state(spec: &ModelSpec, v0: f64) -> Result<EmState> {
    let slab = vec![1.0 / spec.v1; spec.m()];
    let (alpha, theta, f) = spec.fit_coefficients(&slab)?;
    Ok(state_from_fit(spec, v0, alpha, theta, f))
}

/// Starting state around given coefficients with penalized objective `f`.
pub(crate) fn state_from_fit(
    spec: &ModelSpec,
    v0: f64,
    alpha: Vec<f64>,
    theta: Mat,
    f: f64,
) -> EmState {
    let (n, p, d) = (spec.n(), spec.p(), spec.d());
    let rss = spec.rss(&alpha, &theta);
    let mut sigma2 = if n > p + 1 {
        rss / ((n - p - 1) * d) as f64
    } else {
        0.0
    };
    let scale = spec.y.norm_squared() / (n * d) as f64;
    if !(sigma2 > 1e-10 * scale) {
        sigma2 = sigma2_from_differences(&theta, &spec.graph);
    }
    let floor = (f + spec.hyper.b) / (((p + n) * d) as f64 + spec.hyper.a + 2.0);
    sigma2 = sigma2.max(floor);
    let mut state = EmState {
        q: vec![0.5; spec.m()],
        alpha,
        theta,
        sigma2,
        eta: 0.5,
    };
    state.q = estep(&state, spec, v0);
    state
}

fn check_v0(spec: &ModelSpec, v0: f64) -> Result<()> {
    if !(v0 > 0.0 && v0 <= spec.v1) {
        return Err(Error::InvalidParameter(format!(
            "v0 must lie in (0, v1={}], got {v0}",
            spec.v1
        )));
    }
    Ok(())
}

/// Run EM from `init` (or the default start). The E-step is re-run on `init` first so that a
/// state carried over from another `v0` is consistent with this one.
pub fn run_em(
    spec: &ModelSpec,
    v0: f64,
    init: Option<&EmState>,
    opts: &EmOptions,
) -> Result<EmFit> {
    run_em_with(
        spec,
        v0,
        init,
        opts,
        || initial_state(spec, v0),
        |q| mstep(q, spec, v0),
    )
}

/// EM loop with a pluggable start and M-step; E-step and ELBO are the general ones.
pub(crate) fn run_em_with(
    spec: &ModelSpec,
    v0: f64,
    init: Option<&EmState>,
    opts: &EmOptions,
    start: impl FnOnce() -> Result<EmState>,
    mstep: impl Fn(&[f64]) -> Result<MStep>,
) -> Result<EmFit> {
    check_v0(spec, v0)?;
    let mut state = match init {
        Some(s) => {
            let mut s = s.clone();
            s.q = estep(&s, spec, v0);
            s
        }
        None => start()?,
    };
    let mut trace = vec![elbo(&state, spec, v0)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let m = mstep(&state.q)?;
        state.alpha = m.alpha;
        state.theta = m.theta;
        state.sigma2 = m.sigma2;
        state.eta = m.eta;
        state.q = estep(&state, spec, v0);
        let value = elbo(&state, spec, v0);
        if !value.is_finite() || !state.sigma2.is_finite() {
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
    Ok(EmFit {
        state,
        trace,
        iterations,
        converged,
    })
}

/// Threshold inclusion probabilities at one half.
pub fn threshold(q: &[f64]) -> Vec<bool> {
    q.iter().map(|&v| v >= 0.5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMode {
    /// Sequential over the grid, each fit started from the previous one.
    Warm,
    /// Independent fits from the default start.
    Cold(Execution),
}

impl Default for PathMode {
    fn default() -> Self {
        PathMode::Cold(Execution::Parallel)
    }
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub v0: f64,
    pub fit: EmFit,
    pub gamma: Vec<bool>,
}

impl PathPoint {
    pub fn num_fused(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }
}

#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub points: Vec<PathPoint>,
}

pub fn solution_path(
    spec: &ModelSpec,
    grid: &[f64],
    mode: PathMode,
    opts: &EmOptions,
) -> Result<SolutionPath> {
    sweep(spec, grid, mode, |v0, init| run_em(spec, v0, init, opts))
}

/// Fit every grid value with `run`, warm-started or independently.
pub(crate) fn sweep<F>(
    spec: &ModelSpec,
    grid: &[f64],
    mode: PathMode,
    run: F,
) -> Result<SolutionPath>
where
    F: Fn(f64, Option<&EmState>) -> Result<EmFit> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty v0 grid".into()));
    }
    for &v0 in grid {
        check_v0(spec, v0)?;
    }
    let point = |v0: f64, fit: EmFit| PathPoint {
        v0,
        gamma: threshold(&fit.state.q),
        fit,
    };
    let points = match mode {
        PathMode::Warm => {
            let mut out: Vec<PathPoint> = Vec::with_capacity(grid.len());
            for &v0 in grid {
                let init = out.last().map(|p| &p.fit.state);
                let fit = run(v0, init)?;
                out.push(point(v0, fit));
            }
            out
        }
        PathMode::Cold(exec) => exec
            .map(grid, |&v0| run(v0, None).map(|f| point(v0, f)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(SolutionPath { points })
}

/// Wrap a slice as an `n x 1` matrix.
pub fn column(values: &[f64]) -> Mat {
    Mat::from_column_slice(values.len(), 1, values)
}
