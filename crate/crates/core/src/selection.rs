//! Posterior scores of fused-edge patterns, model selection along a path, point estimates and metrics.

use std::collections::HashMap;

use crate::em::{Hyper, ModelSpec, SolutionPath};
use crate::error::{Error, Result};
use crate::gaussian::{Design, Precision, QpProblem, WperpBasis};
use crate::graph::ContractionResult;
use crate::linalg::{ln_beta, logdet_spd, Mat, Vector};
use crate::par::Execution;

/// Gaussian part of a log marginal likelihood for
/// `Y = a alpha^T + T theta + E`, `c^T theta = 0`, `theta` prior precision `L / sigma^2` on the
/// constraint subspace, InvGamma `(a/2, b/2)` on `sigma^2`; constants independent of the model dropped.
pub struct MarginalProblem<'a> {
    pub y: &'a Mat,
    pub a: &'a Vector,
    /// `n x s` design acting on the reduced parameters.
    pub t: &'a Mat,
    pub c: &'a [f64],
    /// `s x s` prior precision (a Laplacian).
    pub l: &'a Mat,
    pub nu: Precision,
    pub hyper: &'a Hyper,
}

impl MarginalProblem<'_> {
    /// `None` when a determinant degenerates.
    pub fn log_marginal(&self) -> Option<f64> {
        let (n, d) = (self.y.nrows(), self.y.ncols());
        let s = self.t.ncols();
        let basis = WperpBasis::new(self.c).ok()?;
        let tb = self.t * basis.matrix();
        let h = basis.restrict(&(self.t.transpose() * self.t + self.l));
        let k = basis.restrict(self.l);
        let ld_k = logdet_spd(&k)?;
        let ld_h = logdet_spd(&h)?;
        let mut value = 0.5 * d as f64 * (ld_k - ld_h);

        // Quadratic forms v^T (I - R) u via the Cholesky factor of H.
        let (ya, yy, aa) = if s > 1 {
            let ch = nalgebra::Cholesky::new(h)?;
            let whiten = |v: &Mat| -> Mat {
                let u = tb.transpose() * v;
                ch.l()
                    .solve_lower_triangular(&u)
                    .expect("triangular factor is nonsingular")
            };
            let am = Mat::from_column_slice(n, 1, self.a.as_slice());
            let wa = whiten(&am);
            let wy = whiten(self.y);
            let aa = self.a.norm_squared() - wa.norm_squared();
            let ya = self.y.transpose() * self.a - wy.transpose() * &wa;
            let yy = self.y.norm_squared() - wy.norm_squared();
            (ya, yy, aa)
        } else {
            (
                self.y.transpose() * self.a,
                self.y.norm_squared(),
                self.a.norm_squared(),
            )
        };
        let mut quad = yy;
        match self.nu {
            Precision::Infinite => {}
            Precision::Finite(nu) => {
                let denom = nu + aa;
                if !(denom > 0.0) {
                    return None;
                }
                if nu > 0.0 {
                    value += 0.5 * d as f64 * nu.ln();
                }
                value -= 0.5 * d as f64 * denom.ln();
                quad -= ya.norm_squared() / denom;
            }
        }
        let total = quad.max(0.0) + self.hyper.b;
        value -= 0.5 * ((n * d) as f64 + self.hyper.a) * total.ln();
        value.is_finite().then_some(value)
    }
}

/// Score of one fused-edge pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    /// Log posterior up to a pattern-independent constant; `-inf` when invalid.
    pub value: f64,
    pub valid: bool,
    pub s: usize,
}

/// Beta-function term of the edge-pattern prior after integrating the inclusion rate.
pub fn ln_beta_term(num_fused: usize, m: usize, hyper: &Hyper) -> Option<f64> {
    let on = num_fused as f64 + hyper.big_a - 1.0;
    let off = (m - num_fused) as f64 + hyper.big_b - 1.0;
    Some(ln_beta(on, off)? - ln_beta(hyper.big_a, hyper.big_b)?)
}

/// Reduced design `X Z` and constraint `Z^T w` for a contraction.
fn reduced(spec: &ModelSpec, c: &ContractionResult) -> (Mat, Vec<f64>) {
    let z = c.z();
    let t = match &spec.design {
        Design::Identity(_) => z.clone(),
        Design::Dense(x) => x * &z,
    };
    let mut cw = vec![0.0; c.s];
    for (i, &k) in c.membership.iter().enumerate() {
        cw[k] += spec.w[i];
    }
    (t, cw)
}

/// Laplacian of the contracted graph with slab precision per crossing edge.
fn reduced_prior(spec: &ModelSpec, c: &ContractionResult) -> Mat {
    let w: Vec<f64> = c.multiplicities().iter().map(|m| m / spec.v1).collect();
    c.contracted
        .laplacian(&w)
        .expect("weights match contracted edges")
}

pub fn log_posterior_score(spec: &ModelSpec, gamma: &[bool]) -> Result<Score> {
    let c = spec.graph.contract(gamma)?;
    let num_fused = gamma.iter().filter(|&&g| g).count();
    let beta = ln_beta_term(num_fused, spec.m(), &spec.hyper);
    let (t, cw) = reduced(spec, &c);
    let l = reduced_prior(spec, &c);
    let a = spec.design.apply_vec(&Vector::from_column_slice(&spec.w));
    let gauss = MarginalProblem {
        y: &spec.y,
        a: &a,
        t: &t,
        c: &cw,
        l: &l,
        nu: spec.nu,
        hyper: &spec.hyper,
    }
    .log_marginal();
    Ok(match (gauss, beta) {
        (Some(g), Some(b)) => Score {
            value: g + b,
            valid: true,
            s: c.s,
        },
        _ => Score {
            value: f64::NEG_INFINITY,
            valid: false,
            s: c.s,
        },
    })
}

/// One row of the candidate table.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub gamma: Vec<bool>,
    /// Grid values whose thresholded fit produced this pattern.
    pub v0s: Vec<f64>,
    pub num_fused: usize,
    pub score: Score,
}

/// Order candidates: valid first, then higher score, then more fused edges.
pub fn better(a: &Candidate, b: &Candidate) -> bool {
    match (a.score.valid, b.score.valid) {
        (true, false) => return true,
        (false, true) => return false,
        _ => {}
    }
    if a.score.value != b.score.value {
        return a.score.value > b.score.value;
    }
    a.num_fused > b.num_fused
}

/// Group identical patterns, keeping first-appearance order.
pub fn dedup_patterns(
    points: impl IntoIterator<Item = (f64, Vec<bool>)>,
) -> Vec<(Vec<bool>, Vec<f64>)> {
    let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut out: Vec<(Vec<bool>, Vec<f64>)> = Vec::new();
    for (v0, g) in points {
        match index.get(&g) {
            Some(&k) => out[k].1.push(v0),
            None => {
                index.insert(g.clone(), out.len());
                out.push((g, vec![v0]));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub gamma: Vec<bool>,
    pub score: f64,
    pub contraction: ContractionResult,
    pub alpha: Vec<f64>,
    /// `p x d` point estimate.
    pub beta: Mat,
    pub candidates: Vec<Candidate>,
    /// Index of the winner in `candidates`.
    pub best: usize,
}

pub fn score_candidates(
    spec: &ModelSpec,
    patterns: Vec<(Vec<bool>, Vec<f64>)>,
    exec: Execution,
) -> Result<Vec<Candidate>> {
    exec.map(&patterns, |(g, v0s)| {
        let score = log_posterior_score(spec, g)?;
        Ok(Candidate {
            num_fused: g.iter().filter(|&&x| x).count(),
            gamma: g.clone(),
            v0s: v0s.clone(),
            score,
        })
    })
    .into_iter()
    .collect()
}

/// Index of the best valid candidate.
pub fn argmax(candidates: &[Candidate]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.score.valid {
            continue;
        }
        if best.is_none_or(|b| better(c, &candidates[b])) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoValidCandidate(candidates.len()))
}

pub fn select(spec: &ModelSpec, path: &SolutionPath, exec: Execution) -> Result<SelectionResult> {
    if path.points.is_empty() {
        return Err(Error::InvalidParameter("empty solution path".into()));
    }
    let patterns = dedup_patterns(path.points.iter().map(|p| (p.v0, p.gamma.clone())));
    let candidates = score_candidates(spec, patterns, exec)?;
    let best = argmax(&candidates)?;
    let gamma = candidates[best].gamma.clone();
    let (alpha, beta, contraction) = point_estimate(spec, &gamma)?;
    Ok(SelectionResult {
        score: candidates[best].score.value,
        gamma,
        contraction,
        alpha,
        beta,
        candidates,
        best,
    })
}

/// Posterior mode of the reduced model: `beta = w alpha^T + Z theta~` with `(Z^T w)^T theta~ = 0`.
pub fn point_estimate(
    spec: &ModelSpec,
    gamma: &[bool],
) -> Result<(Vec<f64>, Mat, ContractionResult)> {
    let c = spec.graph.contract(gamma)?;
    let (t, cw) = reduced(spec, &c);
    let l = reduced_prior(spec, &c);
    let a = spec.design.apply_vec(&Vector::from_column_slice(&spec.w));
    let design = Design::Dense(t);
    let sol = QpProblem {
        y: &spec.y,
        a: &a,
        x: &design,
        l: &l,
        c: &cw,
        nu: spec.nu,
    }
    .solve()?;
    let d = spec.d();
    let mut beta = Mat::zeros(spec.p(), d);
    for i in 0..spec.p() {
        for k in 0..d {
            beta[(i, k)] = spec.w[i] * sol.alpha[k] + sol.theta[(c.membership[i], k)];
        }
    }
    Ok((sol.alpha, beta, c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub fdp: f64,
    pub pow: f64,
    pub mse: f64,
}

/// False discovery proportion and power of detected breaks (`gamma = 0` edges), with `0/0 = 1`,
/// and `|X(beta_hat - beta_true)|^2 / n`.
pub fn metrics(
    est: &[bool],
    truth: &[bool],
    beta_hat: &Mat,
    beta_true: &Mat,
    x: &Design,
) -> Result<Metrics> {
    if est.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimated edges vs {} true edges",
            est.len(),
            truth.len()
        )));
    }
    if beta_hat.shape() != beta_true.shape() || beta_hat.nrows() != x.p() {
        return Err(Error::Dimension("coefficient shapes do not match".into()));
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let breaks = est.iter().filter(|&&g| !g).count();
    let false_breaks = est.iter().zip(truth).filter(|(&g, &t)| !g && t).count();
    let true_breaks = truth.iter().filter(|&&t| !t).count();
    let missed = est.iter().zip(truth).filter(|(&g, &t)| g && !t).count();
    let fdp = ratio(false_breaks, breaks);
    let pow = 1.0 - ratio(missed, true_breaks);
    let mse = x.apply(&(beta_hat - beta_true)).norm_squared() / x.n() as f64;
    Ok(Metrics { fdp, pow, mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{column, Hyper};
    use crate::graph::Graph;

    fn spec(y: &[f64], nu: f64) -> ModelSpec {
        ModelSpec::denoising(
            column(y),
            Graph::chain(y.len()),
            nu,
            100.0,
            Hyper::default(),
        )
        .unwrap()
    }

    #[test]
    fn metric_examples() {
        let x = Design::Identity(3);
        let b = Mat::zeros(3, 1);
        let m = metrics(&[true, false], &[true, false], &b, &b, &x).unwrap();
        assert_eq!((m.fdp, m.pow, m.mse), (0.0, 1.0, 0.0));
        let x4 = Design::Identity(5);
        let b5 = Mat::zeros(5, 1);
        let m = metrics(
            &[true, false, false, false],
            &[true, true, false, false],
            &b5,
            &b5,
            &x4,
        )
        .unwrap();
        assert!((m.fdp - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.pow, 1.0);
        let m = metrics(&[true; 4], &[true, true, false, false], &b5, &b5, &x4).unwrap();
        assert_eq!((m.fdp, m.pow), (1.0, 0.0));
        assert!(metrics(&[true], &[true, false], &b, &b, &x).is_err());
    }

    #[test]
    fn beta_guard_flags_endpoints() {
        let sp = spec(&[0.0, 0.0, 10.0], 0.0);
        assert!(!log_posterior_score(&sp, &[true, true]).unwrap().valid);
        assert!(!log_posterior_score(&sp, &[false, false]).unwrap().valid);
        assert!(log_posterior_score(&sp, &[true, false]).unwrap().valid);
    }

    #[test]
    fn change_point_toy_prefers_true_split() {
        let mut sp = spec(&[0.0, 0.0, 10.0], 0.0);
        sp.hyper = Hyper {
            big_a: 2.0,
            big_b: 2.0,
            ..Hyper::default()
        };
        let all = [[true, true], [true, false], [false, true], [false, false]];
        let scores: Vec<f64> = all
            .iter()
            .map(|g| log_posterior_score(&sp, g).unwrap().value)
            .collect();
        let best = (0..4)
            .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
            .unwrap();
        assert_eq!(all[best], [true, false]);
    }

    #[test]
    fn edge_order_does_not_matter() {
        let g1 = Graph::new(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let g2 = Graph::new(4, vec![(2, 3), (0, 3), (0, 1), (1, 2)]).unwrap();
        let y = column(&[0.3, 0.1, 2.0, 2.4]);
        let s1 = ModelSpec::denoising(y.clone(), g1, 1.0, 10.0, Hyper::default()).unwrap();
        let s2 = ModelSpec::denoising(y, g2, 1.0, 10.0, Hyper::default()).unwrap();
        let a = log_posterior_score(&s1, &[true, false, true, false]).unwrap();
        let b = log_posterior_score(&s2, &[true, false, true, false]).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn single_block_estimate_is_shrunk_mean() {
        let sp = spec(&[1.0, 2.0, 6.0], 3.0);
        let (alpha, beta, c) = point_estimate(&sp, &[true, true]).unwrap();
        assert_eq!(c.s, 1);
        assert!((alpha[0] - 9.0 / 6.0).abs() < 1e-12);
        assert!(beta.iter().all(|&b| (b - 1.5).abs() < 1e-12));
    }

    #[test]
    fn dedup_keeps_first_order() {
        let d = dedup_patterns(vec![
            (1.0, vec![true]),
            (2.0, vec![false]),
            (3.0, vec![true]),
        ]);
        assert_eq!(
            d,
            vec![(vec![true], vec![1.0, 3.0]), (vec![false], vec![2.0])]
        );
    }
}
