//! Undirected base graphs, Laplacians, products, contraction and effective resistance.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{grounded, logdet_spd, Mat};

/// Undirected simple graph with a fixed edge order. Edges are stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    p: usize,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
}

impl Graph {
    pub fn new(p: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut out = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            if a >= p || b >= p {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a},{b}) out of range for p={p}"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({},{})",
                    e.0, e.1
                )));
            }
            out.push(e);
        }
        Ok(Graph {
            p,
            edges: out,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.edges.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} edges",
                weights.len(),
                self.edges.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidGraph("edge weights must be positive".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Stored edge weights, or all ones.
    pub fn weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.edges.len()])
    }

    pub fn star(p: usize) -> Self {
        Graph::new(p, (1..p).map(|i| (0, i)).collect()).expect("star is valid")
    }

    pub fn chain(p: usize) -> Self {
        Graph::new(p, (1..p).map(|i| (i - 1, i)).collect()).expect("chain is valid")
    }

    pub fn cycle(p: usize) -> Self {
        let mut e: Vec<_> = (1..p).map(|i| (i - 1, i)).collect();
        if p > 2 {
            e.push((0, p - 1));
        }
        Graph::new(p, e).expect("cycle is valid")
    }

    /// `n1 x n2` grid; node `(i, j)` has index `j * n1 + i`.
    pub fn grid(n1: usize, n2: usize) -> Self {
        Graph::cartesian_product(&Graph::chain(n1), &Graph::chain(n2))
    }

    pub fn complete(p: usize) -> Self {
        let mut e = Vec::with_capacity(p * p.saturating_sub(1) / 2);
        for i in 0..p {
            for j in i + 1..p {
                e.push((i, j));
            }
        }
        Graph::new(p, e).expect("complete graph is valid")
    }

    /// Complete bipartite graph with parts `0..p` and `p..p+k`.
    pub fn complete_bipartite(p: usize, k: usize) -> Self {
        let mut e = Vec::with_capacity(p * k);
        for i in 0..p {
            for j in 0..k {
                e.push((i, p + j));
            }
        }
        Graph::new(p + k, e).expect("complete bipartite graph is valid")
    }

    /// Parse the edge-list text format: `i j` per line, `#` comments, optional `p=<n>` header.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut p: Option<usize> = None;
        let mut edges = Vec::new();
        let mut max_idx = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("p=") {
                let v = rest.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidGraph(format!("line {}: bad header '{line}'", lineno + 1))
                })?;
                p = Some(v);
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| {
                    Error::InvalidGraph(format!(
                        "line {}: expected 'i j', got '{line}'",
                        lineno + 1
                    ))
                })
            };
            let a = parse(it.next())?;
            let b = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::InvalidGraph(format!(
                    "line {}: trailing tokens",
                    lineno + 1
                )));
            }
            max_idx = Some(max_idx.map_or(a.max(b), |m: usize| m.max(a).max(b)));
            edges.push((a, b));
        }
        let p = p.unwrap_or_else(|| max_idx.map_or(0, |m| m + 1));
        Graph::new(p, edges)
    }

    pub fn from_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        Graph::parse_edge_list(&text)
    }

    /// Signed incidence matrix, row `e` has `+1` at `i` and `-1` at `j`.
    pub fn incidence(&self) -> Mat {
        let mut d = Mat::zeros(self.m(), self.p);
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            d[(e, i)] = 1.0;
            d[(e, j)] = -1.0;
        }
        d
    }

    /// `D^T diag(w) D`.
    pub fn laplacian(&self, w: &[f64]) -> Result<Mat> {
        if w.len() != self.m() {
            return Err(Error::Dimension(format!(
                "{} weights for {} edges",
                w.len(),
                self.m()
            )));
        }
        let mut l = Mat::zeros(self.p, self.p);
        for (&(i, j), &we) in self.edges.iter().zip(w) {
            l[(i, i)] += we;
            l[(j, j)] += we;
            l[(i, j)] -= we;
            l[(j, i)] -= we;
        }
        Ok(l)
    }

    pub fn unit_laplacian(&self) -> Mat {
        self.laplacian(&vec![1.0; self.m()]).expect("lengths agree")
    }

    pub fn adjacency(&self) -> Mat {
        let mut a = Mat::zeros(self.p, self.p);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Component label per node, labels numbered by first appearance in node order.
    pub fn components(&self) -> (usize, Vec<usize>) {
        components_of(self.p, self.edges.iter().copied())
    }

    pub fn is_connected(&self) -> bool {
        self.p > 0 && self.components().0 == 1
    }

    /// Effective resistance of every edge of a connected graph (unit weights).
    pub fn effective_resistances(&self) -> Result<Vec<f64>> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        resistances_connected(self.p, &self.edges)
    }

    /// Effective resistances computed separately inside each connected component.
    pub fn effective_resistances_by_component(&self) -> Result<Vec<f64>> {
        let (s, label) = self.components();
        if s == 1 {
            return self.effective_resistances();
        }
        let mut local = vec![0usize; self.p];
        let mut sizes = vec![0usize; s];
        for v in 0..self.p {
            local[v] = sizes[label[v]];
            sizes[label[v]] += 1;
        }
        let mut per: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); s];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            per[label[i]].push((e, local[i], local[j]));
        }
        let mut r = vec![0.0; self.m()];
        for c in 0..s {
            if per[c].is_empty() {
                continue;
            }
            let edges: Vec<_> = per[c].iter().map(|&(_, a, b)| (a, b)).collect();
            let rc = resistances_connected(sizes[c], &edges)?;
            for (k, &(e, _, _)) in per[c].iter().enumerate() {
                r[e] = rc[k];
            }
        }
        Ok(r)
    }

    /// `log sum_T prod_{e in T} w_e` over spanning trees, via a grounded minor of the Laplacian.
    pub fn weighted_tree_logsum(&self, w: &[f64]) -> Result<f64> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        if self.p == 1 {
            return Ok(0.0);
        }
        let l = self.laplacian(w)?;
        logdet_spd(&grounded(&l))
            .ok_or_else(|| Error::Numeric("grounded Laplacian not positive definite".into()))
    }

    /// Cartesian product; node `(i, k)` maps to `k * p1 + i`.
    /// Edge order: copies of `g1` edges for each `k`, then copies of `g2` edges for each `i`.
    pub fn cartesian_product(g1: &Graph, g2: &Graph) -> Graph {
        let (p1, p2) = (g1.p, g2.p);
        let mut e = Vec::with_capacity(p2 * g1.m() + p1 * g2.m());
        for k in 0..p2 {
            for &(i, j) in &g1.edges {
                e.push((k * p1 + i, k * p1 + j));
            }
        }
        for &(k, l) in &g2.edges {
            for i in 0..p1 {
                e.push((k * p1 + i, l * p1 + i));
            }
        }
        Graph::new(p1 * p2, e).expect("product of valid graphs is valid")
    }

    /// Kronecker (tensor) product; each pair of input edges yields two product edges.
    pub fn kronecker_product(g1: &Graph, g2: &Graph) -> Graph {
        let e = kronecker_edge_map(g1, g2)
            .into_iter()
            .map(|(pair, _, _)| pair)
            .collect();
        Graph::new(g1.p * g2.p, e).expect("product of valid graphs is valid")
    }

    /// Collapse components of the `gamma = 1` subgraph.
    pub fn contract(&self, gamma: &[bool]) -> Result<ContractionResult> {
        if gamma.len() != self.m() {
            return Err(Error::Dimension(format!(
                "gamma has {} entries for {} edges",
                gamma.len(),
                self.m()
            )));
        }
        let fused = self
            .edges
            .iter()
            .zip(gamma)
            .filter(|(_, &g)| g)
            .map(|(e, _)| *e);
        let (s, membership) = components_of(self.p, fused);
        let mut sizes = vec![0usize; s];
        for &z in &membership {
            sizes[z] += 1;
        }
        let mut omega: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for &(i, j) in &self.edges {
            let (a, b) = (membership[i], membership[j]);
            if a != b {
                *omega.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let edges: Vec<_> = omega.keys().copied().collect();
        let mult: Vec<f64> = omega.values().map(|&c| c as f64).collect();
        let contracted = Graph::new(s, edges)?;
        let contracted = if mult.is_empty() {
            contracted
        } else {
            contracted.with_weights(mult)?
        };
        Ok(ContractionResult {
            s,
            membership,
            sizes,
            contracted,
        })
    }
}

/// Product edge `(x, y)` for each input edge pair, with the originating edge indices.
pub fn kronecker_edge_map(g1: &Graph, g2: &Graph) -> Vec<((usize, usize), usize, usize)> {
    let p1 = g1.p;
    let mut out = Vec::with_capacity(2 * g1.m() * g2.m());
    for (e2, &(c, d)) in g2.edges.iter().enumerate() {
        for (e1, &(a, b)) in g1.edges.iter().enumerate() {
            let x = (c * p1 + a, d * p1 + b);
            let y = (d * p1 + a, c * p1 + b);
            out.push(((x.0.min(x.1), x.0.max(x.1)), e1, e2));
            out.push(((y.0.min(y.1), y.0.max(y.1)), e1, e2));
        }
    }
    out
}

/// Result of collapsing fused components.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionResult {
    pub s: usize,
    pub membership: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Graph on `s` nodes; edge weights are crossing multiplicities.
    pub contracted: Graph,
}

impl ContractionResult {
    /// `p x s` 0/1 membership matrix.
    pub fn z(&self) -> Mat {
        let mut z = Mat::zeros(self.membership.len(), self.s);
        for (i, &c) in self.membership.iter().enumerate() {
            z[(i, c)] = 1.0;
        }
        z
    }

    pub fn multiplicities(&self) -> Vec<f64> {
        self.contracted.weights()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn components_of(p: usize, edges: impl Iterator<Item = (usize, usize)>) -> (usize, Vec<usize>) {
    let mut uf = UnionFind::new(p);
    for (i, j) in edges {
        uf.union(i, j);
    }
    let mut label = vec![usize::MAX; p];
    let mut root_label = vec![usize::MAX; p];
    let mut s = 0;
    for v in 0..p {
        let r = uf.find(v);
        if root_label[r] == usize::MAX {
            root_label[r] = s;
            s += 1;
        }
        label[v] = root_label[r];
    }
    (s, label)
}

fn resistances_connected(p: usize, edges: &[(usize, usize)]) -> Result<Vec<f64>> {
    if p == 1 {
        return Ok(vec![]);
    }
    let g = Graph {
        p,
        edges: edges.to_vec(),
        weights: None,
    };
    let lg = grounded(&g.unit_laplacian());
    let ch = crate::linalg::cholesky(&lg, "grounded Laplacian")?;
    let inv = ch.inverse();
    let last = p - 1;
    let at = |a: usize, b: usize| {
        if a == last || b == last {
            0.0
        } else {
            inv[(a, b)]
        }
    };
    Ok(edges
        .iter()
        .map(|&(i, j)| at(i, i) + at(j, j) - 2.0 * at(i, j))
        .collect())
}
