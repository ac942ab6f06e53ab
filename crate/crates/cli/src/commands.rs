use std::fs;

use serde::Serialize;

use graphsel::bicluster::{
    bicluster_path, bicluster_select, reduce_bicluster, run_bicluster_em, BiclusterSpec,
    ProductKind,
};
use graphsel::cluster::{
    cluster_path, cluster_point_estimate, merge_centers, run_cluster_em, select_clustering,
    ClusterOptions, ClusterSpec, MERGE_EPS,
};
use graphsel::em::{column, run_em, solution_path, EmOptions, ModelSpec, PathMode};
use graphsel::gaussian::Design;
use graphsel::isotonic::{iso_path, iso_select, run_iso_em, IsoSpec};
use graphsel::linalg::Mat;
use graphsel::selection::{metrics, select, Candidate};
use graphsel::simulate::{
    add_noise, anchor_signal, chain_signal, checkerboard, fused_edges, grid_signal, rng, staircase,
    ChainShape, RNG_ALGORITHM,
};
use graphsel::{Execution, Graph};

use crate::config::{Mode, Model, RunConfig, Scenario, Shape};
use crate::error::CliError;
use crate::io::{read_matrix, write_json, write_matrix, write_table};

/// Every JSON output: what ran, with which library and generator, under which configuration.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    rng: &'static str,
    config: &'a RunConfig,
    result: T,
}

fn emit<T: Serialize>(
    cfg: &RunConfig,
    command: &'static str,
    file: &str,
    result: T,
) -> Result<(), CliError> {
    let env = Envelope {
        command,
        version: graphsel::VERSION,
        rng: RNG_ALGORITHM,
        config: cfg,
        result,
    };
    write_json(&cfg.out_file(file), &env)
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn bits(g: &[bool]) -> Vec<u8> {
    g.iter().map(|&b| b as u8).collect()
}

fn pattern(g: &[bool]) -> String {
    g.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn joined(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn labels_text(l: &[usize]) -> String {
    l.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn path_mode(cfg: &RunConfig) -> PathMode {
    match cfg.mode {
        Mode::SerialWarm => PathMode::Warm,
        Mode::ParallelCold => PathMode::Cold(Execution::Parallel),
    }
}

fn load_data(cfg: &RunConfig) -> Result<Mat, CliError> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("data file is required".into()))?;
    read_matrix(path, cfg.header)
}

/// Named graph on `p` nodes, or the edge-list file.
pub fn build_graph(cfg: &RunConfig, p: Option<usize>) -> Result<Option<Graph>, CliError> {
    if let Some(path) = &cfg.edge_list {
        let g = Graph::from_edge_list(path)?;
        if let Some(p) = p.filter(|&p| p != g.p()) {
            return Err(CliError::Config(format!(
                "edge list has {} nodes, expected {p}",
                g.p()
            )));
        }
        return Ok(Some(g));
    }
    let Some(name) = cfg.graph.as_deref() else {
        return Ok(None);
    };
    if let Some(dims) = name.strip_prefix("grid:") {
        let (a, b) = dims
            .split_once('x')
            .and_then(|(a, b)| {
                Some((
                    a.trim().parse::<usize>().ok()?,
                    b.trim().parse::<usize>().ok()?,
                ))
            })
            .ok_or_else(|| {
                CliError::Config(format!("bad grid graph '{name}', expected grid:N1xN2"))
            })?;
        if let Some(p) = p.filter(|&p| p != a * b) {
            return Err(CliError::Config(format!(
                "grid {a}x{b} has {} nodes, expected {p}",
                a * b
            )));
        }
        return Ok(Some(Graph::grid(a, b)));
    }
    let p = p.ok_or_else(|| CliError::Config(format!("graph '{name}' needs a node count (n)")))?;
    if p < 2 {
        return Err(CliError::Config("graphs need at least two nodes".into()));
    }
    Ok(Some(match name {
        "chain" => Graph::chain(p),
        "cycle" => Graph::cycle(p),
        "star" => Graph::star(p),
        "complete" => Graph::complete(p),
        _ => return Err(CliError::Config(format!("unknown graph '{name}'"))),
    }))
}

enum Built {
    General(ModelSpec),
    Cluster(ClusterSpec),
    Bicluster(BiclusterSpec),
    Isotonic(IsoSpec),
}

fn build(cfg: &RunConfig) -> Result<Built, CliError> {
    let y = load_data(cfg)?;
    let (nu, hyper) = (cfg.nu(), cfg.hyper());
    Ok(match cfg.model {
        Model::General => {
            let design = match &cfg.design {
                Some(path) => Design::Dense(read_matrix(path, cfg.header)?),
                None => Design::Identity(y.nrows()),
            };
            let g = build_graph(cfg, Some(design.p()))?.ok_or_else(|| {
                CliError::Config("the general model needs graph or edge-list".into())
            })?;
            let w = vec![1.0; g.p()];
            Built::General(ModelSpec::new(y, design, w, nu, g, cfg.v1, hyper)?)
        }
        Model::Cluster => {
            let k = cfg.k.unwrap_or_else(|| ClusterSpec::default_k(y.nrows()));
            Built::Cluster(ClusterSpec::new(y, k, nu, cfg.v1, hyper)?)
        }
        Model::BiclusterCartesian | Model::BiclusterKronecker => {
            let kind = if cfg.model == Model::BiclusterCartesian {
                ProductKind::Cartesian
            } else {
                ProductKind::Kronecker
            };
            let k1 = cfg.k1.unwrap_or_else(|| ClusterSpec::default_k(y.nrows()));
            let k2 = cfg.k2.unwrap_or_else(|| ClusterSpec::default_k(y.ncols()));
            Built::Bicluster(BiclusterSpec::new(
                y, k1, k2, kind, nu, cfg.v1, cfg.c, hyper,
            )?)
        }
        Model::Isotonic => {
            if y.ncols() != 1 {
                return Err(CliError::Config(format!(
                    "isotonic data must be one column, got {}",
                    y.ncols()
                )));
            }
            Built::Isotonic(IsoSpec::new(y.as_slice(), nu, cfg.v1, hyper)?)
        }
    })
}

#[derive(Serialize)]
struct GraphFitOut {
    v0: f64,
    iterations: usize,
    converged: bool,
    elbo: f64,
    sigma2: f64,
    eta: f64,
    alpha: Vec<f64>,
    q: Vec<f64>,
    gamma: Vec<u8>,
    theta: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ClusterFitOut {
    v0: f64,
    iterations: usize,
    converged: bool,
    elbo: f64,
    sigma2: f64,
    alpha: Vec<f64>,
    k_hat: usize,
    labels: Vec<usize>,
    centers: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BiclusterFitOut {
    v0: f64,
    c: f64,
    iterations: usize,
    converged: bool,
    elbo: f64,
    sigma2: f64,
    alpha: f64,
    row_labels: Vec<usize>,
    col_labels: Vec<usize>,
    fitted: Vec<Vec<f64>>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let v0 = cfg
        .v0
        .ok_or_else(|| CliError::Config("fit needs v0".into()))?;
    cfg.check_v0(v0)?;
    let built = build(cfg)?;
    prepare_out(cfg)?;
    let graph_out = |fit: graphsel::em::EmFit| GraphFitOut {
        v0,
        iterations: fit.iterations,
        converged: fit.converged,
        elbo: fit.elbo(),
        sigma2: fit.state.sigma2,
        eta: fit.state.eta,
        alpha: fit.state.alpha.clone(),
        gamma: bits(&graphsel::em::threshold(&fit.state.q)),
        q: fit.state.q.clone(),
        theta: rows_of(&fit.state.theta),
    };
    match built {
        Built::General(spec) => {
            let fit = run_em(&spec, v0, None, &EmOptions::default())?;
            emit(cfg, "fit", "state.json", graph_out(fit))
        }
        Built::Isotonic(spec) => {
            let fit = run_iso_em(&spec, v0, None, &EmOptions::default())?;
            emit(cfg, "fit", "state.json", graph_out(fit))
        }
        Built::Cluster(spec) => {
            let fit = run_cluster_em(&spec, v0, None, &ClusterOptions::default())?;
            let red = merge_centers(&fit.state.mu, &fit.state.q, MERGE_EPS);
            let out = ClusterFitOut {
                v0,
                iterations: fit.iterations,
                converged: fit.converged,
                elbo: *fit.trace.last().expect("trace is never empty"),
                sigma2: fit.state.sigma2,
                alpha: fit.state.alpha.clone(),
                k_hat: red.k_hat(),
                labels: red.labels.clone(),
                centers: rows_of(&red.mu),
                theta: rows_of(&fit.state.theta),
            };
            emit(cfg, "fit", "state.json", out)
        }
        Built::Bicluster(spec) => {
            if spec.v1 <= v0 {
                return Err(CliError::Config("biclustering needs v0 < v1".into()));
            }
            let fit = run_bicluster_em(&spec, v0, None, &ClusterOptions::default())?;
            let (rows, cols) = reduce_bicluster(&fit.state, MERGE_EPS);
            let out = BiclusterFitOut {
                v0,
                c: spec.c,
                iterations: fit.iterations,
                converged: fit.converged,
                elbo: *fit.trace.last().expect("trace is never empty"),
                sigma2: fit.state.sigma2,
                alpha: fit.state.alpha,
                row_labels: rows.labels.clone(),
                col_labels: cols.labels.clone(),
                fitted: rows_of(&fit.fitted()),
            };
            emit(cfg, "fit", "state.json", out)
        }
    }
}

/// Path rows: `v0, iterations, elbo, num_fused` plus model-specific columns. For clustering,
/// `num_fused` counts merges: `n - k_hat` (summed over both axes for biclustering).
pub fn cmd_path(cfg: &RunConfig) -> Result<(), CliError> {
    let built = build(cfg)?;
    let mode = path_mode(cfg);
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match &built {
        Built::General(spec) => {
            let path = solution_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                mode,
                &EmOptions::default(),
            )?;
            (
                vec!["v0", "iterations", "elbo", "num_fused"],
                path.points.iter().map(graph_row).collect(),
            )
        }
        Built::Isotonic(spec) => {
            let path = iso_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                mode,
                &EmOptions::default(),
            )?;
            (
                vec!["v0", "iterations", "elbo", "num_fused"],
                path.points.iter().map(graph_row).collect(),
            )
        }
        Built::Cluster(spec) => {
            let path = cluster_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                mode,
                &ClusterOptions::default(),
            )?;
            let rows = path
                .points
                .iter()
                .map(|p| {
                    vec![
                        p.v0.to_string(),
                        p.fit.iterations.to_string(),
                        p.fit
                            .trace
                            .last()
                            .expect("trace is never empty")
                            .to_string(),
                        (spec.n() - p.reduced.k_hat()).to_string(),
                        p.reduced.k_hat().to_string(),
                    ]
                })
                .collect();
            (vec!["v0", "iterations", "elbo", "num_fused", "k_hat"], rows)
        }
        Built::Bicluster(spec) => {
            let cs = cfg.c_values()?;
            let points = bicluster_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                &cs,
                mode,
                &ClusterOptions::default(),
            )?;
            let rows = points
                .iter()
                .map(|p| {
                    let fused = spec.n1() - p.rows.k_hat() + spec.n2() - p.cols.k_hat();
                    vec![
                        p.v0.to_string(),
                        p.fit.iterations.to_string(),
                        p.fit
                            .trace
                            .last()
                            .expect("trace is never empty")
                            .to_string(),
                        fused.to_string(),
                        p.c.to_string(),
                        p.rows.k_hat().to_string(),
                        p.cols.k_hat().to_string(),
                    ]
                })
                .collect();
            (
                vec![
                    "v0",
                    "iterations",
                    "elbo",
                    "num_fused",
                    "c",
                    "k1_hat",
                    "k2_hat",
                ],
                rows,
            )
        }
    };
    prepare_out(cfg)?;
    write_table(&cfg.out_file("path.csv"), &header, &rows)
}

fn graph_row(p: &graphsel::em::PathPoint) -> Vec<String> {
    vec![
        p.v0.to_string(),
        p.fit.iterations.to_string(),
        p.fit.elbo().to_string(),
        p.num_fused().to_string(),
    ]
}

fn candidate_rows(cands: &[Candidate], best: usize) -> Vec<Vec<String>> {
    cands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                i.to_string(),
                pattern(&c.gamma),
                c.num_fused.to_string(),
                c.score.s.to_string(),
                c.score.valid.to_string(),
                c.score.value.to_string(),
                joined(&c.v0s),
                (i == best).to_string(),
            ]
        })
        .collect()
}

const GRAPH_TABLE: [&str; 8] = [
    "id",
    "gamma",
    "num_fused",
    "pieces",
    "valid",
    "score",
    "v0s",
    "selected",
];

#[derive(Serialize)]
struct GraphSelectOut {
    score: f64,
    gamma: Vec<u8>,
    num_fused: usize,
    pieces: usize,
    alpha: Vec<f64>,
    candidates: usize,
}

#[derive(Serialize)]
struct ClusterSelectOut {
    score: f64,
    k_hat: usize,
    labels: Vec<usize>,
    candidates: usize,
}

#[derive(Serialize)]
struct BiclusterSelectOut {
    score: f64,
    c: f64,
    k1_hat: usize,
    k2_hat: usize,
    row_labels: Vec<usize>,
    col_labels: Vec<usize>,
    candidates: usize,
}

/// Path, candidate scores and the point estimate of the winner.
pub fn cmd_select(cfg: &RunConfig) -> Result<(), CliError> {
    let built = build(cfg)?;
    let mode = path_mode(cfg);
    let exec = Execution::Parallel;
    prepare_out(cfg)?;
    match &built {
        Built::General(spec) => {
            let path = solution_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                mode,
                &EmOptions::default(),
            )?;
            let sel = select(spec, &path, exec)?;
            write_table(
                &cfg.out_file("scores.csv"),
                &GRAPH_TABLE,
                &candidate_rows(&sel.candidates, sel.best),
            )?;
            write_matrix(&cfg.out_file("estimate.csv"), &sel.beta)?;
            let out = GraphSelectOut {
                score: sel.score,
                num_fused: sel.gamma.iter().filter(|&&g| g).count(),
                gamma: bits(&sel.gamma),
                pieces: sel.contraction.s,
                alpha: sel.alpha.clone(),
                candidates: sel.candidates.len(),
            };
            emit(cfg, "select", "selection.json", out)
        }
        Built::Isotonic(spec) => {
            let path = iso_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                mode,
                &EmOptions::default(),
            )?;
            let sel = iso_select(spec, &path, exec)?;
            write_table(
                &cfg.out_file("scores.csv"),
                &GRAPH_TABLE,
                &candidate_rows(&sel.candidates, sel.best),
            )?;
            write_matrix(&cfg.out_file("estimate.csv"), &column(&sel.fit))?;
            let out = GraphSelectOut {
                score: sel.score,
                num_fused: sel.gamma.iter().filter(|&&g| g).count(),
                gamma: bits(&sel.gamma),
                pieces: sel.s,
                alpha: vec![spec.alpha()],
                candidates: sel.candidates.len(),
            };
            emit(cfg, "select", "selection.json", out)
        }
        Built::Cluster(spec) => {
            let path = cluster_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                mode,
                &ClusterOptions::default(),
            )?;
            let sel = select_clustering(spec, &path, exec)?;
            let rows: Vec<Vec<String>> = sel
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    vec![
                        i.to_string(),
                        labels_text(&c.labels),
                        c.score.k_eff.to_string(),
                        c.score.valid.to_string(),
                        c.score.value.to_string(),
                        joined(&c.v0s),
                        (i == sel.best).to_string(),
                    ]
                })
                .collect();
            write_table(
                &cfg.out_file("scores.csv"),
                &["id", "labels", "k", "valid", "score", "v0s", "selected"],
                &rows,
            )?;
            write_matrix(
                &cfg.out_file("estimate.csv"),
                &cluster_point_estimate(spec, &sel.labels)?,
            )?;
            let out = ClusterSelectOut {
                score: sel.score,
                k_hat: graphsel::cluster::num_clusters(&sel.labels),
                labels: sel.labels.clone(),
                candidates: sel.candidates.len(),
            };
            emit(cfg, "select", "selection.json", out)
        }
        Built::Bicluster(spec) => {
            let cs = cfg.c_values()?;
            let points = bicluster_path(
                spec,
                &cfg.v0_values(spec.default_grid())?,
                &cs,
                mode,
                &ClusterOptions::default(),
            )?;
            let sel = bicluster_select(spec, &points, exec)?;
            let rows: Vec<Vec<String>> = sel
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    vec![
                        i.to_string(),
                        labels_text(&c.rows),
                        labels_text(&c.cols),
                        c.score.k1_eff.to_string(),
                        c.score.k2_eff.to_string(),
                        c.c.to_string(),
                        c.score.valid.to_string(),
                        c.score.value.to_string(),
                        joined(&c.v0s),
                        (i == sel.best).to_string(),
                    ]
                })
                .collect();
            write_table(
                &cfg.out_file("scores.csv"),
                &[
                    "id",
                    "row_labels",
                    "col_labels",
                    "k1",
                    "k2",
                    "c",
                    "valid",
                    "score",
                    "v0s",
                    "selected",
                ],
                &rows,
            )?;
            write_matrix(&cfg.out_file("estimate.csv"), &sel.fit)?;
            let out = BiclusterSelectOut {
                score: sel.score,
                c: sel.c,
                k1_hat: graphsel::cluster::num_clusters(&sel.rows),
                k2_hat: graphsel::cluster::num_clusters(&sel.cols),
                row_labels: sel.rows.clone(),
                col_labels: sel.cols.clone(),
                candidates: sel.candidates.len(),
            };
            emit(cfg, "select", "selection.json", out)
        }
    }
}

#[derive(Serialize)]
struct SimulateOut {
    scenario: Scenario,
    rows: usize,
    cols: usize,
    sigma: f64,
    seed: u64,
    graph_nodes: Option<usize>,
    graph_edges: Option<usize>,
}

fn write_edge_list(path: &std::path::Path, g: &Graph) -> Result<(), CliError> {
    let mut text = format!("p={}\n", g.p());
    for &(i, j) in g.edges() {
        text.push_str(&format!("{i} {j}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes `data.csv`, `truth.csv`, `graph.txt` for graph designs, and `simulation.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let scenario = cfg
        .scenario
        .ok_or_else(|| CliError::Config("simulate needs scenario".into()))?;
    let need = |v: Option<usize>, name: &str| {
        v.ok_or_else(|| CliError::Config(format!("scenario needs {name}")))
    };
    let mut r = rng(cfg.seed);
    let (truth, graph): (Mat, Option<Graph>) = match scenario {
        Scenario::Chain => {
            let n = need(cfg.n, "n")?;
            let shape = match cfg.shape {
                Shape::Even => ChainShape::Even,
                Shape::Uneven => ChainShape::Uneven,
                Shape::VeryUneven => ChainShape::VeryUneven,
            };
            (
                column(&chain_signal(n, cfg.pieces, shape)?),
                Some(Graph::chain(n)),
            )
        }
        Scenario::Staircase => {
            let n = need(cfg.n, "n")?;
            (
                column(&staircase(n, cfg.pieces, cfg.step)?),
                Some(Graph::chain(n)),
            )
        }
        Scenario::Grid => {
            let (n1, n2) = (need(cfg.n1, "n1")?, need(cfg.n2, "n2")?);
            (column(&grid_signal(n1, n2)), Some(Graph::grid(n1, n2)))
        }
        Scenario::Checkerboard => {
            let (n1, n2) = (need(cfg.n1, "n1")?, need(cfg.n2, "n2")?);
            (checkerboard(n1, n2, cfg.blocks)?, None)
        }
        Scenario::Anchor => {
            let g = build_graph(cfg, cfg.n)?.ok_or_else(|| {
                CliError::Config("the anchor scenario needs graph or edge-list".into())
            })?;
            (column(&anchor_signal(&g, cfg.anchors, &mut r)?), Some(g))
        }
        Scenario::Toy => (column(&[4.0, 2.0, -2.0, -4.0]), None),
    };
    let data = add_noise(&truth, cfg.sigma, &mut r);
    prepare_out(cfg)?;
    write_matrix(&cfg.out_file("data.csv"), &data)?;
    write_matrix(&cfg.out_file("truth.csv"), &truth)?;
    if let Some(g) = &graph {
        write_edge_list(&cfg.out_file("graph.txt"), g)?;
    }
    let out = SimulateOut {
        scenario,
        rows: data.nrows(),
        cols: data.ncols(),
        sigma: cfg.sigma,
        seed: cfg.seed,
        graph_nodes: graph.as_ref().map(Graph::p),
        graph_edges: graph.as_ref().map(Graph::m),
    };
    emit(cfg, "simulate", "simulation.json", out)
}

#[derive(Serialize)]
struct MetricsOut {
    fdp: f64,
    pow: f64,
    mse: f64,
    estimated_breaks: usize,
    true_breaks: usize,
}

/// FDP, POW and MSE of an estimate against the truth. Fused edges are those whose endpoint rows
/// are equal. The graph defaults to a chain over the rows.
pub fn cmd_metrics(cfg: &RunConfig) -> Result<(), CliError> {
    let est_path = cfg
        .estimate
        .as_ref()
        .ok_or_else(|| CliError::Config("metrics needs estimate".into()))?;
    let truth_path = cfg
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Config("metrics needs truth".into()))?;
    let est = read_matrix(est_path, cfg.header)?;
    let truth = read_matrix(truth_path, cfg.header)?;
    if est.shape() != truth.shape() {
        return Err(CliError::Config(format!(
            "estimate is {:?} but truth is {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    let g = match build_graph(cfg, Some(est.nrows()))? {
        Some(g) => g,
        None => Graph::chain(est.nrows()),
    };
    let design = match &cfg.design {
        Some(path) => Design::Dense(read_matrix(path, cfg.header)?),
        None => Design::Identity(est.nrows()),
    };
    let (ge, gt) = (fused_edges(&g, &est), fused_edges(&g, &truth));
    let m = metrics(&ge, &gt, &est, &truth, &design)?;
    let out = MetricsOut {
        fdp: m.fdp,
        pow: m.pow,
        mse: m.mse,
        estimated_breaks: ge.iter().filter(|&&f| !f).count(),
        true_breaks: gt.iter().filter(|&&f| !f).count(),
    };
    println!("fdp {} pow {} mse {}", m.fdp, m.pow, m.mse);
    prepare_out(cfg)?;
    emit(cfg, "metrics", "metrics.json", out)
}
