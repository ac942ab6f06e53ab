//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn cholesky(m: &Mat, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// log det of a symmetric positive definite matrix; `None` when the factorization fails.
pub fn logdet_spd(m: &Mat) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let ch = Cholesky::new(m.clone())?;
    let l = ch.l_dirty();
    let mut s = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        s += d.ln();
    }
    Some(2.0 * s)
}

/// Submatrix dropping the last row and column.
pub fn grounded(l: &Mat) -> Mat {
    let p = l.nrows();
    l.view((0, 0), (p - 1, p - 1)).into_owned()
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Logistic function of a log-odds value.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax of a slice of log-weights.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// `x ln x` with the convention `0 ln 0 = 0`.
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Entropy of a Bernoulli(q) variable in nats.
pub fn bernoulli_entropy(q: f64) -> f64 {
    -(xlogx(q) + xlogx(1.0 - q))
}

/// log B(a, b); `None` unless both arguments are positive.
pub fn ln_beta(a: f64, b: f64) -> Option<f64> {
    if a > 0.0 && b > 0.0 {
        Some(statrs::function::beta::ln_beta(a, b))
    } else {
        None
    }
}

/// log of the binomial coefficient C(n, k).
pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    statrs::function::factorial::ln_binomial(n as u64, k as u64)
}

/// Row-wise squared Euclidean distance between row `i` of `a` and row `j` of `b`.
pub fn row_dist2(a: &Mat, i: usize, b: &Mat, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(j, c)];
        s += d * d;
    }
    s
}

/// `len` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..len)
        .map(|i| {
            if i + 1 == len {
                hi
            } else {
                (a + (b - a) * i as f64 / (len - 1) as f64).exp()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_and_binomial() {
        assert!((ln_beta(2.0, 3.0).unwrap() - (1.0f64 / 12.0).ln()).abs() < 1e-13);
        assert!(ln_beta(0.0, 1.0).is_none());
        assert!((ln_choose(4, 2) - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_and_logistic() {
        let mut v = [0.0, 9f64.ln()];
        softmax_in_place(&mut v);
        assert!((v[1] - 0.9).abs() < 1e-15);
        assert!((logistic(0.0) - 0.5).abs() < 1e-16);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(1e-2, 100.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert_eq!(g[19], 100.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
