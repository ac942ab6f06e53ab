//! Log marginal likelihood of a fused-edge pattern by direct covariance algebra and numerical
//! integration over the noise variance.

use nalgebra::{DMatrix, DVector};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::dense::{complement_basis, logdet_pd};
use crate::{Edge, OracleError, Result};

/// Largest reduced dimension and sample size accepted by [`quadrature_marginal`].
pub const MAX_PIECES: usize = 5;
pub const MAX_SAMPLES: usize = 12;

/// Integration range for `ln sigma^2`.
pub const LOG_SIGMA2_RANGE: (f64, f64) = (-20.0, 20.0);
pub const QUADRATURE_TOL: f64 = 1e-10;

/// `y = X (alpha w + theta) + noise`, `w^T theta = 0`, with `theta` constant on the components of
/// the `gamma` edges, slab precision `1/v1` on every other edge, `alpha ~ N(0, sigma^2 / nu)`,
/// `sigma^2 ~ InvGamma(a/2, b/2)` and a Beta `(big_a, big_b)` inclusion rate.
pub struct MarginalInput<'a> {
    /// `n x d`, columns independent given `sigma^2`.
    pub y: &'a DMatrix<f64>,
    /// `n x p`.
    pub x: &'a DMatrix<f64>,
    pub w: &'a [f64],
    pub p: usize,
    pub edges: &'a [Edge],
    pub gamma: &'a [bool],
    pub v1: f64,
    /// Positive, or infinite for `alpha = 0`.
    pub nu: f64,
    pub a: f64,
    pub b: f64,
    pub big_a: f64,
    pub big_b: f64,
}

fn components(p: usize, edges: &[Edge], gamma: &[bool]) -> (usize, Vec<usize>) {
    let mut parent: Vec<usize> = (0..p).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            x = parent[x];
        }
        x
    }
    for (&(i, j), &g) in edges.iter().zip(gamma) {
        if g {
            let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut label = vec![usize::MAX; p];
    let mut s = 0;
    let mut out = vec![0; p];
    for i in 0..p {
        let r = root(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = s;
            s += 1;
        }
        out[i] = label[r];
    }
    (s, out)
}

/// Adaptive Simpson on `[lo, hi]` to absolute tolerance `tol`.
fn simpson<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if diff.abs() <= 15.0 * tol {
            return Some(left + right + diff / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?,
        )
    }
    // Start from a fixed subdivision so a narrow peak cannot hide between the first nodes.
    let pieces = 64;
    let h = (hi - lo) / pieces as f64;
    let mut total = 0.0;
    for k in 0..pieces {
        let (a, b) = (lo + k as f64 * h, lo + (k + 1) as f64 * h);
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += step(f, a, b, fa, fm, fb, whole, tol / pieces as f64, 40)
            .ok_or_else(|| OracleError::Quadrature(format!("no convergence on [{a}, {b}]")))?;
    }
    Ok(total)
}

/// Full log marginal `ln p(y | gamma)` including every constant. Patterns whose Beta term is
/// undefined get `-inf`.
///
/// Given `sigma^2` the data are Gaussian with covariance
/// `sigma^2 (I + X w w^T X^T / nu + X Z B K^{-1} B^T Z^T X^T)`, where `Z` is the component
/// membership, `B` spans the complement of `Z^T w` and `K` is the contracted slab Laplacian on that
/// complement. The remaining integral runs over `ln sigma^2`.
pub fn quadrature_marginal(input: &MarginalInput) -> Result<f64> {
    let MarginalInput {
        y,
        x,
        w,
        p,
        edges,
        gamma,
        v1,
        nu,
        a,
        b,
        big_a,
        big_b,
    } = *input;
    let (n, d) = (y.nrows(), y.ncols());
    if x.nrows() != n || x.ncols() != p || w.len() != p || gamma.len() != edges.len() {
        return Err(OracleError::Invalid("dimension mismatch".into()));
    }
    if n > MAX_SAMPLES {
        return Err(OracleError::TooLarge(format!(
            "n = {n} exceeds {MAX_SAMPLES}"
        )));
    }
    if !(nu > 0.0 && v1 > 0.0 && a > 0.0 && b > 0.0) {
        return Err(OracleError::Invalid("nu, v1, a, b must be positive".into()));
    }
    let (s, member) = components(p, edges, gamma);
    if s > MAX_PIECES {
        return Err(OracleError::TooLarge(format!(
            "{s} pieces exceed {MAX_PIECES}"
        )));
    }
    let m = edges.len();
    let fused = gamma.iter().filter(|&&g| g).count() as f64;
    let (on, off) = (fused + big_a - 1.0, (m as f64 - fused) + big_b - 1.0);
    if !(on > 0.0 && off > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let beta_term = ln_beta(on, off) - ln_beta(big_a, big_b);

    let z = DMatrix::from_fn(p, s, |i, k| if member[i] == k { 1.0 } else { 0.0 });
    let mut lt = DMatrix::zeros(s, s);
    for &(i, j) in edges {
        let (ci, cj) = (member[i], member[j]);
        if ci != cj {
            lt[(ci, ci)] += 1.0 / v1;
            lt[(cj, cj)] += 1.0 / v1;
            lt[(ci, cj)] -= 1.0 / v1;
            lt[(cj, ci)] -= 1.0 / v1;
        }
    }
    let cw = z.transpose() * DVector::from_column_slice(w);
    let basis = complement_basis(cw.as_slice())?;
    let mut cov = DMatrix::identity(n, n);
    if nu.is_finite() {
        let aw = x * DVector::from_column_slice(w);
        cov += &aw * aw.transpose() / nu;
    }
    if basis.ncols() > 0 {
        let k = basis.transpose() * &lt * &basis;
        let kinv = k
            .cholesky()
            .ok_or(OracleError::NotPositiveDefinite(
                "contracted slab laplacian",
            ))?
            .inverse();
        let tb = x * &z * &basis;
        cov += &tb * kinv * tb.transpose();
    }
    let ld = logdet_pd(&cov, "marginal covariance")?;
    let ch = cov
        .cholesky()
        .ok_or(OracleError::NotPositiveDefinite("marginal covariance"))?;
    let quad: f64 = (0..d)
        .map(|c| {
            let col = y.column(c).into_owned();
            col.dot(&ch.solve(&col))
        })
        .sum();

    let nd = (n * d) as f64;
    let (ha, hb) = (a / 2.0, b / 2.0);
    // Log integrand in t = ln sigma^2, Jacobian included.
    let g = |t: f64| -> f64 {
        let s2 = t.exp();
        -0.5 * nd * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * d as f64 * ld - quad / (2.0 * s2)
            + ha * hb.ln()
            - ln_gamma(ha)
            - (ha + 1.0) * t
            - hb / s2
            + t
    };
    let (lo, hi) = LOG_SIGMA2_RANGE;
    let peak = (0..=4000)
        .map(|k| g(lo + (hi - lo) * k as f64 / 4000.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let f = |t: f64| (g(t) - peak).exp();
    if f(lo) > QUADRATURE_TOL || f(hi) > QUADRATURE_TOL {
        return Err(OracleError::Quadrature(
            "integrand not negligible at the ends of the range".into(),
        ));
    }
    let integral = simpson(&f, lo, hi, QUADRATURE_TOL)?;
    Ok(peak + integral.ln() + beta_term)
}
