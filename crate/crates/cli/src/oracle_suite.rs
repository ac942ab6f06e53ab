//! Library results checked against the brute-force references.

use nalgebra::DMatrix;
use rand::Rng;

use graphsel::em::{column, Hyper, ModelSpec};
use graphsel::isotonic::isotonic_qp;
use graphsel::selection::log_posterior_score;
use graphsel::simulate::{add_noise, rng};
use graphsel::Graph;
use graphsel_oracle::{
    dense, exact_log_partition, pava, quadrature_marginal, weighted_tree_logsum, MarginalInput,
    OracleReport,
};

use crate::commands::build_graph;
use crate::config::RunConfig;
use crate::error::CliError;

fn random_connected<R: Rng>(p: usize, extra: f64, r: &mut R) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..p).map(|i| (r.random_range(0..i), i)).collect();
    for i in 0..p {
        for j in (i + 1)..p {
            if !edges.contains(&(i, j)) && r.random::<f64>() < extra {
                edges.push((i, j));
            }
        }
    }
    Graph::new(p, edges).expect("valid edges")
}

/// Weighted spanning-tree sums, edge resistances and the log-partition pair on one graph.
fn graph_checks<R: Rng>(
    g: &Graph,
    label: &str,
    r: &mut R,
    out: &mut Vec<OracleReport>,
) -> Result<(), CliError> {
    let w: Vec<f64> = (0..g.m()).map(|_| r.random_range(0.1..10.0)).collect();
    let reference = weighted_tree_logsum(g.p(), g.edges(), &w)?;
    out.push(OracleReport::relative(
        format!("{label} log tree sum"),
        reference,
        g.weighted_tree_logsum(&w)?,
        1e-10,
    ));

    let res_ref = dense::resistances(g.p(), g.edges(), &vec![1.0; g.m()])?;
    let res = g.effective_resistances()?;
    let worst = res_ref
        .iter()
        .zip(&res)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(OracleReport::absolute(
        format!("{label} max resistance error"),
        0.0,
        worst,
        1e-10,
    ));

    let gamma: Vec<bool> = (0..g.m()).map(|_| r.random::<bool>()).collect();
    let (v0, v1) = (r.random_range(1e-3..1.0), r.random_range(1.0..1e3));
    let (f1, f2) = exact_log_partition(g.p(), g.edges(), &gamma, v0, v1)?;
    let ws: Vec<f64> = gamma
        .iter()
        .map(|&on| if on { 1.0 / v0 } else { 1.0 / v1 })
        .collect();
    let l1 = g.weighted_tree_logsum(&ws)?;
    let l2 = res.iter().zip(&ws).map(|(r, w)| r * w.ln()).sum::<f64>()
        + g.weighted_tree_logsum(&vec![1.0; g.m()])?;
    out.push(OracleReport::absolute(format!("{label} f1"), f1, l1, 1e-9));
    out.push(OracleReport::absolute(format!("{label} f2"), f2, l2, 1e-9));
    out.push(OracleReport::absolute(
        format!("{label} f2/f1 accuracy exp(f2 - f1)"),
        (f2 - f1).exp(),
        (l2 - l1).exp(),
        1e-9,
    ));
    Ok(())
}

/// Score differences between edge patterns on a five-node chain against numerical integration.
fn marginal_checks(seed: u64, out: &mut Vec<OracleReport>) -> Result<(), CliError> {
    let n = 5;
    let y = add_noise(&column(&[0.0, 0.0, 2.0, 2.0, 2.0]), 0.3, &mut rng(seed));
    let (nu, v1, hyper) = (1.0, 10.0, Hyper::default());
    let g = Graph::chain(n);
    let spec = ModelSpec::denoising(y.clone(), g.clone(), nu, v1, hyper)?;
    let yd = DMatrix::from_column_slice(n, 1, y.as_slice());
    let x = DMatrix::identity(n, n);
    let w = vec![1.0; n];
    let mut base: Option<f64> = None;
    for mask in 0..(1u32 << g.m()) {
        let gamma: Vec<bool> = (0..g.m()).map(|e| mask >> e & 1 == 1).collect();
        let lib = log_posterior_score(&spec, &gamma)?;
        let input = MarginalInput {
            y: &yd,
            x: &x,
            w: &w,
            p: n,
            edges: g.edges(),
            gamma: &gamma,
            v1,
            nu,
            a: hyper.a,
            b: hyper.b,
            big_a: hyper.big_a,
            big_b: hyper.big_b,
        };
        let reference = quadrature_marginal(&input)?;
        let name: String = gamma.iter().map(|&on| if on { '1' } else { '0' }).collect();
        if lib.valid != reference.is_finite() {
            out.push(OracleReport::absolute(
                format!("marginal validity {name}"),
                reference,
                lib.value,
                0.0,
            ));
            continue;
        }
        if !lib.valid {
            continue;
        }
        let offset = lib.value - reference;
        let b = *base.get_or_insert(offset);
        out.push(OracleReport::absolute(
            format!("marginal offset {name}"),
            b,
            offset,
            1e-4,
        ));
    }
    Ok(())
}

fn pava_checks<R: Rng>(
    instances: usize,
    r: &mut R,
    out: &mut Vec<OracleReport>,
) -> Result<(), CliError> {
    for i in 0..instances {
        let n = r.random_range(2..40);
        let y: Vec<f64> = (0..n)
            .map(|j| j as f64 / n as f64 + r.random_range(-1.0..1.0))
            .collect();
        let reference = pava(&y, &vec![1.0; n])?;
        let fit = isotonic_qp(&y, &vec![1.0; n], &vec![0.0; n - 1])?.theta;
        let worst = reference
            .iter()
            .zip(&fit)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.push(OracleReport::absolute(
            format!("monotone fit vs pava #{i}"),
            0.0,
            worst,
            1e-8,
        ));
    }
    Ok(())
}

/// The default suite, or the graph checks alone on the configured graph.
pub fn run_suite(cfg: &RunConfig) -> Result<Vec<OracleReport>, CliError> {
    let mut r = rng(cfg.seed);
    let mut out = Vec::new();
    if let Some(g) = build_graph(cfg, cfg.n)? {
        if !g.is_connected() {
            return Err(CliError::Config(
                "oracle checks need a connected graph".into(),
            ));
        }
        graph_checks(&g, "graph", &mut r, &mut out)?;
        return Ok(out);
    }
    for i in 0..cfg.instances {
        let p = r.random_range(2..=7);
        let g = random_connected(p, 0.4, &mut r);
        graph_checks(&g, &format!("graph #{i} (p={p})"), &mut r, &mut out)?;
    }
    marginal_checks(cfg.seed, &mut out)?;
    pava_checks(cfg.instances, &mut r, &mut out)?;
    Ok(out)
}
