use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn graphsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphsel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Chain data with two well separated levels.
fn chain_data(dir: &TempDir) -> PathBuf {
    let p = dir.path().join("y.csv");
    let ys = [0.02, -0.01, 0.0, 0.01, -0.02, 3.01, 2.98, 3.0, 3.02, 2.99];
    fs::write(&p, ys.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
    p
}

#[test]
fn simulate_checkerboard_without_noise_is_the_truth() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = graphsel(&[
        "simulate",
        "--scenario",
        "checkerboard",
        "--n1",
        "24",
        "--n2",
        "12",
        "--sigma",
        "0",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = fs::read(out.join("data.csv")).unwrap();
    assert_eq!(data, fs::read(out.join("truth.csv")).unwrap());
    let rows = read_csv(&out.join("data.csv"));
    assert_eq!((rows.len(), rows[0].len()), (24, 12));
    let values: HashSet<i64> = rows
        .iter()
        .flatten()
        .map(|v| v.parse::<f64>().unwrap() as i64)
        .collect();
    assert!(values.iter().all(|v| v % 2 == 0 && (-8..=12).contains(v)));
    assert_eq!(values.len(), 11);
    let meta = json(&out.join("simulation.json"));
    assert_eq!(meta["rng"], "ChaCha8");
    assert!(meta["version"].is_string());
    assert_eq!(meta["config"]["n1"], 24);
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = graphsel(&[
            "simulate",
            "--scenario",
            "chain",
            "--n",
            "60",
            "--seed",
            seed,
            "--sigma",
            "0.5",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0);
        (
            fs::read(out.join("data.csv")).unwrap(),
            fs::read(out.join("graph.txt")).unwrap(),
        )
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let c = run("c", "8");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn fit_writes_state_and_checks_inputs() {
    let dir = TempDir::new().unwrap();
    let y = chain_data(&dir);
    let out = dir.path().join("fit");
    let o = graphsel(&[
        "fit",
        "--data",
        s(&y),
        "--graph",
        "chain",
        "--v0",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let state = json(&out.join("state.json"));
    assert_eq!(state["command"], "fit");
    assert_eq!(state["result"]["gamma"].as_array().unwrap().len(), 9);
    assert_eq!(state["config"]["v0"], 0.01);

    let missing = dir.path().join("nope.csv");
    let o = graphsel(&[
        "fit",
        "--data",
        s(&missing),
        "--graph",
        "chain",
        "--v0",
        "0.01",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));

    let o = graphsel(&[
        "fit",
        "--data",
        s(&y),
        "--graph",
        "chain",
        "--v0",
        "500",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn path_rows_follow_the_grid() {
    let dir = TempDir::new().unwrap();
    let y = chain_data(&dir);
    let out = dir.path().join("path");
    let o = graphsel(&[
        "path",
        "--data",
        s(&y),
        "--graph",
        "chain",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("path.csv"));
    assert_eq!(rows[0], ["v0", "iterations", "elbo", "num_fused"]);
    assert_eq!(rows.len(), 21);

    let o = graphsel(&[
        "path",
        "--data",
        s(&y),
        "--graph",
        "chain",
        "--v0-grid=",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

fn selected_patterns(dir: &TempDir, y: &Path, mode: &str) -> (HashSet<String>, serde_json::Value) {
    let out = dir.path().join(mode);
    let o = graphsel(&[
        "select",
        "--data",
        s(y),
        "--graph",
        "chain",
        "--mode",
        mode,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("scores.csv"));
    let patterns: Vec<String> = rows[1..].iter().map(|r| r[1].clone()).collect();
    let set: HashSet<String> = patterns.iter().cloned().collect();
    assert_eq!(set.len(), patterns.len(), "candidate table has duplicates");
    (set, json(&out.join("selection.json")))
}

#[test]
fn select_finds_the_single_break_in_both_modes() {
    let dir = TempDir::new().unwrap();
    let y = chain_data(&dir);
    let (warm, sel) = selected_patterns(&dir, &y, "serial-warm");
    let (cold, _) = selected_patterns(&dir, &y, "parallel-cold");
    assert_eq!(warm, cold);
    assert_eq!(sel["result"]["pieces"], 2);
    let gamma: Vec<u64> = sel["result"]["gamma"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(gamma, [1, 1, 1, 1, 0, 1, 1, 1, 1]);
    assert!(sel["result"]["score"].as_f64().unwrap().is_finite());
    let est = read_csv(&dir.path().join("serial-warm").join("estimate.csv"));
    assert_eq!(est.len(), 10);
}

#[test]
fn select_without_valid_candidates_exits_four() {
    let dir = TempDir::new().unwrap();
    let y = chain_data(&dir);
    let out = dir.path().join("bad");
    // A single spike variance equal to the slab fuses every edge, which the edge prior rules out
    // for A = B = 1.
    let o = graphsel(&[
        "select",
        "--data",
        s(&y),
        "--graph",
        "chain",
        "--v0-grid",
        "100",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        code(&o),
        4,
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn cluster_and_bicluster_select() {
    let dir = TempDir::new().unwrap();
    let y = dir.path().join("toy.csv");
    fs::write(&y, "4\n2\n-2\n-4\n").unwrap();
    let out = dir.path().join("cl");
    let o = graphsel(&[
        "select",
        "--model",
        "cluster",
        "--data",
        s(&y),
        "--k",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sel = json(&out.join("selection.json"));
    assert_eq!(sel["result"]["labels"], serde_json::json!([0, 0, 1, 1]));

    let sim = dir.path().join("cb");
    assert_eq!(
        code(&graphsel(&[
            "simulate",
            "--scenario",
            "checkerboard",
            "--n1",
            "12",
            "--n2",
            "6",
            "--blocks",
            "3",
            "--sigma",
            "0.3",
            "--out",
            s(&sim)
        ])),
        0
    );
    for model in ["bicluster-kronecker", "bicluster-cartesian"] {
        let out = dir.path().join(model);
        let o = graphsel(&[
            "select",
            "--model",
            model,
            "--data",
            s(&sim.join("data.csv")),
            "--k1",
            "3",
            "--k2",
            "3",
            "--v1",
            "10000",
            "--c-grid",
            "1",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let sel = json(&out.join("selection.json"));
        assert_eq!(sel["result"]["k1_hat"], 3, "{model}");
        assert_eq!(sel["result"]["k2_hat"], 3, "{model}");
    }
}

#[test]
fn metrics_of_a_perfect_estimate() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(
        code(&graphsel(&[
            "simulate",
            "--scenario",
            "chain",
            "--n",
            "40",
            "--sigma",
            "0",
            "--out",
            s(&sim)
        ])),
        0
    );
    let truth = sim.join("truth.csv");
    let out = dir.path().join("m");
    let o = graphsel(&[
        "metrics",
        "--estimate",
        s(&truth),
        "--truth",
        s(&truth),
        "--edge-list",
        s(&sim.join("graph.txt")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    assert_eq!(
        (
            m["result"]["fdp"].as_f64(),
            m["result"]["pow"].as_f64(),
            m["result"]["mse"].as_f64()
        ),
        (Some(0.0), Some(1.0), Some(0.0))
    );
    assert_eq!(m["result"]["true_breaks"], 3);

    // No breaks anywhere: both ratios are 0/0.
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, "1\n1\n1\n").unwrap();
    let o = graphsel(&[
        "metrics",
        "--estimate",
        s(&flat),
        "--truth",
        s(&flat),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["result"]["estimated_breaks"], 0);
    assert_eq!(m["result"]["fdp"].as_f64(), Some(1.0));

    let short = dir.path().join("short.csv");
    fs::write(&short, "1\n2\n").unwrap();
    let o = graphsel(&[
        "metrics",
        "--estimate",
        s(&short),
        "--truth",
        s(&truth),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_suite_passes_and_guards_size() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = graphsel(&["oracle", "--instances", "5", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rows = read_csv(&out.join("oracle_reports.csv"));
    assert_eq!(rows[0][0], "quantity");
    assert!(rows.iter().any(|r| r[0].contains("exp(f2 - f1)")));
    assert!(rows[1..].iter().all(|r| r[7] == "true"));

    let o = graphsel(&[
        "oracle",
        "--graph",
        "complete",
        "--n",
        "9",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("size guard"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let y = chain_data(&dir);
    let out = dir.path().join("cfg");
    let cfg = dir.path().join("run.json");
    let text = serde_json::json!({"data": y, "graph": "chain", "v0-grid": [0.001, 0.01, 0.1], "nu": "inf", "out": out});
    fs::write(&cfg, text.to_string()).unwrap();
    let o = graphsel(&["path", "--config", s(&cfg), "--v0-grid", "0.01,0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&out.join("path.csv")).len(), 3);

    fs::write(&cfg, r#"{"modle": "cluster"}"#).unwrap();
    assert_eq!(code(&graphsel(&["path", "--config", s(&cfg)])), 2);
}
