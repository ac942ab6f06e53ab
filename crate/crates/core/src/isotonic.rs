//! Reduced isotonic regression: a chain model whose differences are constrained to be nonnegative.

use std::f64::consts::PI;

use crate::em::{
    column, elbo, estep, run_em_with, state_from_fit, sweep, EmFit, EmOptions, EmState, Hyper,
    MStep, ModelSpec, PathMode, SolutionPath,
};
use crate::error::{Error, Result};
use crate::gaussian::{logdet_w, Precision, WperpBasis};
use crate::graph::Graph;
use crate::linalg::{cholesky, Mat};
use crate::par::Execution;
use crate::selection::{argmax, dedup_patterns, ln_beta_term, Candidate, Score};

/// Result of [`isotonic_qp`].
#[derive(Debug, Clone)]
pub struct IsoSolution {
    pub theta: Vec<f64>,
    /// Linear solves performed.
    pub iterations: usize,
}

fn check_inputs(z: &[f64], m: &[f64], w: &[f64]) -> Result<()> {
    let n = z.len();
    if n == 0 || m.len() != n || w.len() + 1 != n {
        return Err(Error::Dimension(format!(
            "{n} values, {} masses, {} edge weights",
            m.len(),
            w.len()
        )));
    }
    if m.iter().any(|&x| !(x > 0.0)) || w.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidParameter(
            "masses must be positive and weights nonnegative".into(),
        ));
    }
    Ok(())
}

/// Block-constant minimizer for fixed pools; `starts` lists the first index of every pool.
fn solve_pools(z: &[f64], m: &[f64], w: &[f64], starts: &[usize]) -> Vec<f64> {
    let n = z.len();
    let s = starts.len();
    let mut diag = vec![0.0; s];
    let mut rhs = vec![0.0; s];
    let mut off = vec![0.0; s.saturating_sub(1)];
    for l in 0..s {
        let end = if l + 1 < s { starts[l + 1] } else { n };
        for i in starts[l]..end {
            diag[l] += m[i];
            rhs[l] += m[i] * z[i];
        }
        if l + 1 < s {
            let wb = w[end - 1];
            diag[l] += wb;
            diag[l + 1] += wb;
            off[l] = -wb;
        }
    }
    // Tridiagonal elimination; the matrix is diagonally dominant with positive masses.
    for l in 1..s {
        let f = off[l - 1] / diag[l - 1];
        diag[l] -= f * off[l - 1];
        rhs[l] -= f * rhs[l - 1];
    }
    let mut phi = vec![0.0; s];
    for l in (0..s).rev() {
        let next = if l + 1 < s { off[l] * phi[l + 1] } else { 0.0 };
        phi[l] = (rhs[l] - next) / diag[l];
    }
    let mut theta = vec![0.0; n];
    for l in 0..s {
        let end = if l + 1 < s { starts[l + 1] } else { n };
        theta[starts[l]..end].fill(phi[l]);
    }
    theta
}

/// Half-gradient of the objective.
fn gradient(theta: &[f64], z: &[f64], m: &[f64], w: &[f64]) -> Vec<f64> {
    let n = theta.len();
    let mut g: Vec<f64> = (0..n).map(|i| m[i] * (theta[i] - z[i])).collect();
    for i in 0..n - 1 {
        let t = w[i] * (theta[i + 1] - theta[i]);
        g[i] -= t;
        g[i + 1] += t;
    }
    g
}

/// Minimize `sum_i m_i (theta_i - z_i)^2 + sum_i w_i (theta_{i+1} - theta_i)^2` subject to
/// `theta_1 <= ... <= theta_n`, by a primal active-set method over pools of adjacent indices.
/// Starts from a single pool; a pool is split where its multiplier is most negative and pools are
/// merged at the first boundary hit when stepping toward an infeasible pool solution.
pub fn isotonic_qp(z: &[f64], m: &[f64], w: &[f64]) -> Result<IsoSolution> {
    check_inputs(z, m, w)?;
    let n = z.len();
    let scale = z.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let tol_gap = 1e-13 * scale;
    // Multipliers are sums of mass-weighted residuals; edge weights only enter across pool boundaries.
    let tol_mult = 1e-11 * scale * m.iter().sum::<f64>();
    // fused[i]: constraint theta_i <= theta_{i+1} is held with equality.
    let mut fused = vec![true; n - 1];
    let starts_of = |fused: &[bool]| -> Vec<usize> {
        std::iter::once(0)
            .chain((1..n).filter(|&i| !fused[i - 1]))
            .collect()
    };
    let mut theta = solve_pools(z, m, w, &[0]);
    let max_iter = 20 * n + 100;
    for it in 1..=max_iter {
        let target = solve_pools(z, m, w, &starts_of(&fused));
        // Step toward the target until the first free boundary closes.
        let mut step = 1.0;
        let mut block = None;
        for i in 0..n - 1 {
            if fused[i] {
                continue;
            }
            let d_target = target[i + 1] - target[i];
            if d_target < -tol_gap {
                let gap = (theta[i + 1] - theta[i]).max(0.0);
                let t = gap / (gap - d_target);
                if t < step {
                    step = t;
                    block = Some(i);
                }
            }
        }
        if let Some(i) = block {
            for (t, &g) in theta.iter_mut().zip(&target) {
                *t += step * (g - *t);
            }
            fused[i] = true;
            continue;
        }
        theta = target;
        let g = gradient(&theta, z, m, w);
        let mut worst: Option<(usize, f64)> = None;
        let mut lambda = 0.0;
        for i in 0..n - 1 {
            if !fused[i] {
                lambda = 0.0;
                continue;
            }
            if i == 0 || !fused[i - 1] {
                lambda = 0.0;
            }
            lambda -= g[i];
            if lambda < -tol_mult && worst.is_none_or(|(_, v)| lambda < v) {
                worst = Some((i, lambda));
            }
        }
        match worst {
            Some((i, _)) => fused[i] = false,
            None => {
                return Ok(IsoSolution {
                    theta,
                    iterations: it,
                })
            }
        }
    }
    Err(Error::NotConverged(format!(
        "pooling did not settle in {max_iter} steps"
    )))
}

/// Same problem solved by coordinate ascent on the dual (Hildreth's method) with a dense inverse.
pub fn isotonic_qp_dense(
    z: &[f64],
    m: &[f64],
    w: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    check_inputs(z, m, w)?;
    let n = z.len();
    let mut h = Mat::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = m[i];
    }
    for i in 0..n - 1 {
        h[(i, i)] += w[i];
        h[(i + 1, i + 1)] += w[i];
        h[(i, i + 1)] -= w[i];
        h[(i + 1, i)] -= w[i];
    }
    let hinv = cholesky(&h, "isotonic Hessian")?.inverse();
    let b: Vec<f64> = (0..n).map(|i| m[i] * z[i]).collect();
    let mut theta: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| hinv[(i, j)] * b[j]).sum())
        .collect();
    let mut lambda = vec![0.0; n - 1];
    let curv: Vec<f64> = (0..n - 1)
        .map(|i| hinv[(i, i)] + hinv[(i + 1, i + 1)] - 2.0 * hinv[(i, i + 1)])
        .collect();
    let scale = z.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    for _ in 0..max_sweeps {
        let mut moved: f64 = 0.0;
        for i in 0..n - 1 {
            // Constraint a^T theta <= 0 with a = e_i - e_{i+1}.
            let viol = theta[i] - theta[i + 1];
            let new = (lambda[i] + viol / curv[i]).max(0.0);
            let delta = new - lambda[i];
            if delta != 0.0 {
                lambda[i] = new;
                for (j, t) in theta.iter_mut().enumerate() {
                    *t -= delta * (hinv[(j, i)] - hinv[(j, i + 1)]);
                }
                moved = moved.max((delta * curv[i]).abs());
            }
        }
        if moved <= tol * scale {
            return Ok(theta);
        }
    }
    Err(Error::NotConverged(format!(
        "dual coordinate ascent did not converge in {max_sweeps} sweeps"
    )))
}

/// Chain model on `y` with a monotone mean.
#[derive(Debug, Clone)]
pub struct IsoSpec {
    pub model: ModelSpec,
}

impl IsoSpec {
    pub fn new(y: &[f64], nu: f64, v1: f64, hyper: Hyper) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::Dimension("need at least two observations".into()));
        }
        let model = ModelSpec::denoising(column(y), Graph::chain(y.len()), nu, v1, hyper)?;
        Ok(IsoSpec { model })
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn y(&self) -> &[f64] {
        self.model.y.as_slice()
    }

    pub fn default_grid(&self) -> Vec<f64> {
        self.model.default_grid()
    }

    fn mean(&self) -> f64 {
        self.y().iter().sum::<f64>() / self.n() as f64
    }

    fn centered(&self) -> Vec<f64> {
        let mean = self.mean();
        self.y().iter().map(|v| v - mean).collect()
    }

    /// Minimizer of `n (ybar - alpha)^2 + nu alpha^2`.
    pub fn alpha(&self) -> f64 {
        let n = self.n() as f64;
        match self.model.nu {
            Precision::Infinite => 0.0,
            Precision::Finite(nu) => n * self.mean() / (n + nu),
        }
    }
}

/// Monotone fit of the centered data with chain weights `weights`. Pools first, then the dense
/// dual method for moderate sizes if pooling fails.
pub fn monotone_fit(yc: &[f64], masses: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    match isotonic_qp(yc, masses, weights) {
        Ok(s) => Ok(s.theta),
        Err(Error::NotConverged(_)) if yc.len() <= 500 => {
            isotonic_qp_dense(yc, masses, weights, 1e-14, 1_000_000)
        }
        Err(e) => Err(e),
    }
}

/// E-step: the chain E-step applied to the nonnegative differences.
pub fn estep_iso(state: &EmState, spec: &IsoSpec, v0: f64) -> Vec<f64> {
    estep(state, &spec.model, v0)
}

pub fn mstep_iso(q: &[f64], spec: &IsoSpec, v0: f64) -> Result<MStep> {
    let model = &spec.model;
    let weights = model.edge_weights(q, v0);
    let ones = vec![1.0; spec.n()];
    let theta = monotone_fit(&spec.centered(), &ones, &weights)?;
    let alpha = vec![spec.alpha()];
    let theta = column(&theta);
    let f = model.objective(&alpha, &theta, &weights);
    let h = &model.hyper;
    let n = spec.n() as f64;
    let sigma2 = (f + h.b) / (2.0 * n + h.a + 2.0);
    let q_sum: f64 = q.iter().sum();
    let denom = h.big_a + h.big_b + (n - 1.0) - 2.0;
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

/// Start from the monotone fit with slab weights everywhere.
pub fn initial_iso_state(spec: &IsoSpec, v0: f64) -> Result<EmState> {
    let weights = vec![1.0 / spec.model.v1; spec.n() - 1];
    let ones = vec![1.0; spec.n()];
    let theta = column(&monotone_fit(&spec.centered(), &ones, &weights)?);
    let alpha = vec![spec.alpha()];
    let f = spec.model.objective(&alpha, &theta, &weights);
    Ok(state_from_fit(&spec.model, v0, alpha, theta, f))
}

pub fn run_iso_em(
    spec: &IsoSpec,
    v0: f64,
    init: Option<&EmState>,
    opts: &EmOptions,
) -> Result<EmFit> {
    run_em_with(
        &spec.model,
        v0,
        init,
        opts,
        || initial_iso_state(spec, v0),
        |q| mstep_iso(q, spec, v0),
    )
}

/// Variational objective; exact because the chain is a tree.
pub fn iso_elbo(state: &EmState, spec: &IsoSpec, v0: f64) -> f64 {
    elbo(state, &spec.model, v0)
}

pub fn iso_path(
    spec: &IsoSpec,
    grid: &[f64],
    mode: PathMode,
    opts: &EmOptions,
) -> Result<SolutionPath> {
    sweep(&spec.model, grid, mode, |v0, init| {
        run_iso_em(spec, v0, init, opts)
    })
}

/// Profiled score of one piece pattern, with the maximizing fit.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoScore {
    pub score: Score,
    /// Fitted mean `alpha + Z theta~`, length `n`.
    pub fit: Vec<f64>,
    pub sigma2: f64,
}

/// Maximum over `(alpha, nondecreasing theta~, sigma^2)` of the reduced log joint density of the
/// piece pattern `gamma` (`true` = adjacent values fused), with the inclusion rate integrated out.
pub fn iso_score(spec: &IsoSpec, gamma: &[bool]) -> Result<IsoScore> {
    let n = spec.n();
    if gamma.len() != n - 1 {
        return Err(Error::Dimension(format!(
            "{} edge flags for a chain of {n}",
            gamma.len()
        )));
    }
    let model = &spec.model;
    let h = &model.hyper;
    let yc = spec.centered();
    let mut starts = vec![0];
    starts.extend((1..n).filter(|&i| !gamma[i - 1]));
    let s = starts.len();
    let mut sizes = vec![0.0; s];
    let mut means = vec![0.0; s];
    let mut within = 0.0;
    for l in 0..s {
        let end = if l + 1 < s { starts[l + 1] } else { n };
        let block = &yc[starts[l]..end];
        sizes[l] = block.len() as f64;
        means[l] = block.iter().sum::<f64>() / sizes[l];
        within += block.iter().map(|v| (v - means[l]).powi(2)).sum::<f64>();
    }
    let slab = vec![1.0 / model.v1; s - 1];
    let phi = monotone_fit(&means, &sizes, &slab)?;
    let mut quad = within;
    for l in 0..s {
        quad += sizes[l] * (means[l] - phi[l]).powi(2);
        if l + 1 < s {
            quad += (phi[l + 1] - phi[l]).powi(2) / model.v1;
        }
    }
    let nf = n as f64;
    let ybar = spec.mean();
    let (alpha_dims, mut value) = match model.nu {
        Precision::Infinite => {
            quad += nf * ybar * ybar;
            (0.0, 0.0)
        }
        Precision::Finite(nu) => {
            quad += nf * nu * ybar * ybar / (nf + nu);
            (1.0, if nu > 0.0 { 0.5 * nu.ln() } else { 0.0 })
        }
    };
    let dims = nf + (s as f64 - 1.0) + alpha_dims;
    let sigma2 = (quad + h.b) / (dims + h.a + 2.0);
    value += -0.5 * dims * (2.0 * PI * sigma2).ln() - quad / (2.0 * sigma2);
    value += (s as f64 - 1.0) * std::f64::consts::LN_2;
    if s > 1 {
        let chain = Graph::chain(s);
        let l = chain.laplacian(&slab)?;
        value += 0.5 * logdet_w(&l, &WperpBasis::new(&sizes)?)?;
    }
    value += h.ln_prior_sigma2(sigma2);
    let num_fused = gamma.iter().filter(|&&g| g).count();
    let beta = ln_beta_term(num_fused, n - 1, h);
    let alpha = spec.alpha();
    let mut fit = vec![0.0; n];
    for l in 0..s {
        let end = if l + 1 < s { starts[l + 1] } else { n };
        fit[starts[l]..end].fill(alpha + phi[l]);
    }
    let score = match beta {
        Some(b) if (value + b).is_finite() => Score {
            value: value + b,
            valid: true,
            s,
        },
        _ => Score {
            value: f64::NEG_INFINITY,
            valid: false,
            s,
        },
    };
    Ok(IsoScore { score, fit, sigma2 })
}

#[derive(Debug, Clone)]
pub struct IsoSelection {
    pub gamma: Vec<bool>,
    pub score: f64,
    /// Number of pieces.
    pub s: usize,
    pub fit: Vec<f64>,
    pub candidates: Vec<Candidate>,
    pub best: usize,
}

pub fn iso_select(spec: &IsoSpec, path: &SolutionPath, exec: Execution) -> Result<IsoSelection> {
    if path.points.is_empty() {
        return Err(Error::InvalidParameter("empty solution path".into()));
    }
    let patterns = dedup_patterns(path.points.iter().map(|p| (p.v0, p.gamma.clone())));
    let scored = exec
        .map(&patterns, |(g, v0s)| {
            iso_score(spec, g).map(|sc| {
                let cand = Candidate {
                    num_fused: g.iter().filter(|&&x| x).count(),
                    gamma: g.clone(),
                    v0s: v0s.clone(),
                    score: sc.score.clone(),
                };
                (cand, sc.fit)
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (candidates, fits): (Vec<Candidate>, Vec<Vec<f64>>) = scored.into_iter().unzip();
    let best = argmax(&candidates)?;
    let c = &candidates[best];
    Ok(IsoSelection {
        gamma: c.gamma.clone(),
        score: c.score.value,
        s: c.score.s,
        fit: fits[best].clone(),
        candidates,
        best,
    })
}
