//! Spanning trees by exhaustive search.

use crate::dense::{laplacian, reduced};
use crate::{Edge, OracleError, Result};

/// Largest node count accepted by [`enumerate_spanning_trees`].
pub const MAX_NODES: usize = 8;

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn check(p: usize, edges: &[Edge]) -> Result<()> {
    if p == 0 || p > MAX_NODES {
        return Err(OracleError::TooLarge(format!(
            "spanning tree enumeration needs 1 <= p <= {MAX_NODES}, got {p}"
        )));
    }
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= p || j >= p || i == j) {
        return Err(OracleError::Invalid(format!(
            "bad edge ({i}, {j}) for {p} nodes"
        )));
    }
    Ok(())
}

/// Every spanning tree as a sorted list of edge indices. Each edge is either contracted into the
/// tree or deleted, depth first.
pub fn enumerate_spanning_trees(p: usize, edges: &[Edge]) -> Result<Vec<Vec<usize>>> {
    check(p, edges)?;
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(p - 1);
    let parent: Vec<usize> = (0..p).collect();
    recurse(p, edges, 0, &parent, &mut chosen, &mut out);
    Ok(out)
}

fn recurse(
    p: usize,
    edges: &[Edge],
    next: usize,
    parent: &[usize],
    chosen: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if chosen.len() == p - 1 {
        out.push(chosen.clone());
        return;
    }
    if edges.len() - next < p - 1 - chosen.len() {
        return;
    }
    let (i, j) = edges[next];
    let mut contracted = parent.to_vec();
    let (ri, rj) = (find(&mut contracted, i), find(&mut contracted, j));
    if ri != rj {
        contracted[ri] = rj;
        chosen.push(next);
        recurse(p, edges, next + 1, &contracted, chosen, out);
        chosen.pop();
    }
    recurse(p, edges, next + 1, parent, chosen, out);
}

/// Number of spanning trees from the reduced Laplacian determinant.
pub fn kirchhoff_count(p: usize, edges: &[Edge]) -> f64 {
    if p == 1 {
        return 1.0;
    }
    reduced(&laplacian(p, edges, &vec![1.0; edges.len()])).determinant()
}

/// `ln sum_T prod_{e in T} w_e` over the enumerated trees, accumulated in log space.
pub fn weighted_tree_logsum(p: usize, edges: &[Edge], weights: &[f64]) -> Result<f64> {
    if weights.len() != edges.len() {
        return Err(OracleError::Invalid(format!(
            "{} weights for {} edges",
            weights.len(),
            edges.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(OracleError::Invalid("weights must be positive".into()));
    }
    let terms: Vec<f64> = enumerate_spanning_trees(p, edges)?
        .iter()
        .map(|t| t.iter().map(|&e| weights[e].ln()).sum())
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Ok(top);
    }
    Ok(top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln())
}
