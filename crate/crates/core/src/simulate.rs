//! Synthetic designs with seeded Gaussian noise.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Mat;

/// Name of the generator behind [`rng`], recorded in outputs.
pub const RNG_ALGORITHM: &str = "ChaCha8";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Piece-length layouts for change-point signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainShape {
    /// All pieces have the same length (up to rounding).
    Even,
    /// One piece is a fifth of the regular length.
    Uneven,
    /// One piece has length 2.
    VeryUneven,
}

/// Lengths of `pieces` consecutive segments covering `n` nodes.
pub fn piece_lengths(n: usize, pieces: usize, shape: ChainShape) -> Result<Vec<usize>> {
    if pieces == 0 || pieces > n {
        return Err(Error::InvalidParameter(format!(
            "cannot split {n} nodes into {pieces} pieces"
        )));
    }
    let even = |total: usize, k: usize| -> Vec<usize> {
        (0..k)
            .map(|j| (j + 1) * total / k - j * total / k)
            .collect()
    };
    if pieces == 1 || shape == ChainShape::Even {
        return Ok(even(n, pieces));
    }
    let short = match shape {
        ChainShape::Uneven => (n / pieces / 5).max(1),
        _ => 2.min(n - pieces + 1),
    };
    // The short piece sits in the middle of the chain.
    let mut lengths = even(n - short, pieces - 1);
    lengths.insert((pieces - 1) / 2, short);
    Ok(lengths)
}

/// Level of piece `j`: a fixed cycle whose consecutive values differ by at least 1.
pub fn chain_level(j: usize) -> f64 {
    const LEVELS: [f64; 5] = [0.0, 1.5, 0.5, 2.0, 1.0];
    LEVELS[j % LEVELS.len()]
}

/// Piecewise-constant signal on a chain.
pub fn chain_signal(n: usize, pieces: usize, shape: ChainShape) -> Result<Vec<f64>> {
    let lengths = piece_lengths(n, pieces, shape)?;
    Ok(lengths
        .iter()
        .enumerate()
        .flat_map(|(j, &len)| std::iter::repeat_n(chain_level(j), len))
        .collect())
}

/// Nondecreasing staircase with `pieces` steps of height `step`, centered at zero.
pub fn staircase(n: usize, pieces: usize, step: f64) -> Result<Vec<f64>> {
    let lengths = piece_lengths(n, pieces, ChainShape::Even)?;
    let mid = (pieces as f64 - 1.0) / 2.0;
    Ok(lengths
        .iter()
        .enumerate()
        .flat_map(|(j, &len)| std::iter::repeat_n(step * (j as f64 - mid), len))
        .collect())
}

/// Grid signal `ceil(2.8 cos(sqrt(i^2 + j^2) / (2 pi)) - 0.2)` with 1-based `(i, j)`, stored at
/// node `(j - 1) n1 + (i - 1)` to match [`Graph::grid`].
pub fn grid_signal(n1: usize, n2: usize) -> Vec<f64> {
    let mut out = vec![0.0; n1 * n2];
    for j in 1..=n2 {
        for i in 1..=n1 {
            let r = ((i * i + j * j) as f64).sqrt();
            out[(j - 1) * n1 + (i - 1)] =
                (2.8 * (r / (2.0 * std::f64::consts::PI)).cos() - 0.2).ceil();
        }
    }
    out
}

/// Block index of position `i` when `n` positions are cut into `blocks` equal runs.
pub fn block_of(i: usize, n: usize, blocks: usize) -> usize {
    i * blocks / n
}

/// Checkerboard mean: `blocks x blocks` equal blocks, value `2 (u + v - 6)` on block `(u, v)` (1-based).
pub fn checkerboard(n1: usize, n2: usize, blocks: usize) -> Result<Mat> {
    if blocks == 0 || n1 < blocks || n2 < blocks {
        return Err(Error::InvalidParameter(format!(
            "{n1}x{n2} matrix cannot hold {blocks}x{blocks} blocks"
        )));
    }
    Ok(Mat::from_fn(n1, n2, |i, j| {
        let u = block_of(i, n1, blocks) + 1;
        let v = block_of(j, n2, blocks) + 1;
        2.0 * (u as f64 + v as f64 - 6.0)
    }))
}

/// Hop distances from `source`; unreachable nodes get `usize::MAX`.
pub fn bfs_distances(g: &Graph, source: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); g.p()];
    for &(i, j) in g.edges() {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut dist = vec![usize::MAX; g.p()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Pick `anchors` distinct nodes uniformly, label every node by its nearest anchor (ties to the
/// earlier anchor) and return the labels `1..=anchors` as the signal.
pub fn anchor_signal<R: Rng>(g: &Graph, anchors: usize, rng: &mut R) -> Result<Vec<f64>> {
    if anchors == 0 || anchors > g.p() {
        return Err(Error::InvalidParameter(format!(
            "{anchors} anchors on {} nodes",
            g.p()
        )));
    }
    let picked = rand::seq::index::sample(rng, g.p(), anchors).into_vec();
    let dists: Vec<Vec<usize>> = picked.iter().map(|&a| bfs_distances(g, a)).collect();
    Ok((0..g.p())
        .map(|i| {
            let best = (0..anchors)
                .min_by_key(|&j| (dists[j][i], j))
                .expect("at least one anchor");
            (best + 1) as f64
        })
        .collect())
}

/// `truth + sigma * N(0, 1)` entrywise, column-major order.
pub fn add_noise<R: Rng>(truth: &Mat, sigma: f64, rng: &mut R) -> Mat {
    let mut out = truth.clone();
    if sigma > 0.0 {
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    out
}

/// Edges whose endpoint rows are exactly equal.
pub fn fused_edges(g: &Graph, beta: &Mat) -> Vec<bool> {
    g.edges()
        .iter()
        .map(|&(i, j)| beta.row(i) == beta.row(j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_cover_chain() {
        for shape in [ChainShape::Even, ChainShape::Uneven, ChainShape::VeryUneven] {
            let l = piece_lengths(1000, 20, shape).unwrap();
            assert_eq!(l.len(), 20);
            assert_eq!(l.iter().sum::<usize>(), 1000);
        }
        assert!(piece_lengths(1000, 20, ChainShape::Even)
            .unwrap()
            .iter()
            .all(|&x| x == 50));
        assert!(piece_lengths(1000, 20, ChainShape::Uneven)
            .unwrap()
            .contains(&10));
        assert!(piece_lengths(1000, 20, ChainShape::VeryUneven)
            .unwrap()
            .contains(&2));
    }

    #[test]
    fn chain_signal_has_requested_breaks() {
        let s = chain_signal(200, 4, ChainShape::Even).unwrap();
        let breaks = s.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(breaks, 3);
        assert!(s
            .windows(2)
            .all(|w| w[0] == w[1] || (w[0] - w[1]).abs() >= 1.0));
    }

    #[test]
    fn checkerboard_values() {
        let c = checkerboard(24, 12, 6).unwrap();
        assert_eq!(c[(0, 0)], -8.0);
        assert_eq!(c[(23, 11)], 12.0);
        assert!(c
            .iter()
            .all(|&v| v.fract() == 0.0 && (v as i64) % 2 == 0 && (-8.0..=12.0).contains(&v)));
        assert_eq!(c[(3, 1)], c[(0, 0)]);
        assert_ne!(c[(4, 0)], c[(0, 0)]);
    }

    #[test]
    fn grid_signal_is_piecewise_constant() {
        let s = grid_signal(21, 21);
        let mut levels: Vec<i64> = s.iter().map(|&v| v as i64).collect();
        levels.sort();
        levels.dedup();
        assert!(levels.len() >= 5);
        assert_eq!(
            s[0],
            (2.8 * (2f64.sqrt() / (2.0 * std::f64::consts::PI)).cos() - 0.2).ceil()
        );
    }

    #[test]
    fn anchors_partition_nodes() {
        let g = Graph::grid(10, 10);
        let s = anchor_signal(&g, 4, &mut rng(3)).unwrap();
        let mut labels: Vec<i64> = s.iter().map(|&v| v as i64).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn zero_noise_and_reproducibility() {
        let t = Mat::from_fn(4, 3, |i, j| (i + j) as f64);
        assert_eq!(add_noise(&t, 0.0, &mut rng(1)), t);
        assert_eq!(
            add_noise(&t, 1.0, &mut rng(9)),
            add_noise(&t, 1.0, &mut rng(9))
        );
        assert_ne!(
            add_noise(&t, 1.0, &mut rng(9)),
            add_noise(&t, 1.0, &mut rng(10))
        );
    }
}
