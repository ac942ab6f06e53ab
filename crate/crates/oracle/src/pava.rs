//! Weighted pool-adjacent-violators.

use crate::{OracleError, Result};

/// Nondecreasing least-squares fit of `y` under positive `weights`.
pub fn pava(y: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if y.len() != weights.len() {
        return Err(OracleError::Invalid(format!(
            "{} values, {} weights",
            y.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(OracleError::Invalid("weights must be positive".into()));
    }
    // Blocks as (mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &w) in y.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (m2, w2, l2) = blocks.pop().expect("two blocks");
            let (m1, w1, l1) = blocks.pop().expect("two blocks");
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    Ok(blocks
        .iter()
        .flat_map(|&(m, _, l)| std::iter::repeat_n(m, l))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(pava(&[3.0, 1.0, 2.0], &[1.0; 3]).unwrap(), vec![2.0; 3]);
        let y = [-1.0, 0.0, 0.5, 4.0];
        assert_eq!(pava(&y, &[1.0; 4]).unwrap(), y.to_vec());
        assert_eq!(pava(&[2.0, 0.0], &[3.0, 1.0]).unwrap(), vec![1.5, 1.5]);
    }

    #[test]
    fn preserves_weighted_mean() {
        let y = [1.0, 5.0, 2.0, 2.5, -1.0, 7.0, 6.0];
        let w = [1.0, 0.5, 2.0, 1.0, 3.0, 1.0, 0.2];
        let fit = pava(&y, &w).unwrap();
        assert!(fit.windows(2).all(|p| p[0] <= p[1]));
        let mean = |v: &[f64]| v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        assert!((mean(&fit) - mean(&y)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(pava(&[1.0], &[0.0]).is_err());
    }
}
