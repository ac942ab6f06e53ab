use graphsel::cluster::{cluster_path, select_clustering, ClusterOptions, ClusterSpec};
use graphsel::em::{column, Hyper, PathMode};
use graphsel::Execution;

#[test]
fn toy_data_splits_into_two_pairs() {
    for k in 2..=4 {
        let spec = ClusterSpec::new(
            column(&[4.0, 2.0, -2.0, -4.0]),
            k,
            0.0,
            100.0,
            Hyper::default(),
        )
        .unwrap();
        for mode in [PathMode::Warm, PathMode::Cold(Execution::Parallel)] {
            let path = cluster_path(
                &spec,
                &spec.default_grid(),
                mode,
                &ClusterOptions::default(),
            )
            .unwrap();
            for p in &path.points {
                eprintln!(
                    "k={k} {mode:?} v0={:.4} it={} conv={} khat={} labels={:?} mu={:?}",
                    p.v0,
                    p.fit.iterations,
                    p.fit.converged,
                    p.reduced.k_hat(),
                    p.reduced.labels,
                    p.fit.state.mu.as_slice()
                );
            }
            let sel = select_clustering(&spec, &path, Execution::Sequential).unwrap();
            for c in &sel.candidates {
                eprintln!("  cand {:?} score {}", c.labels, c.score.value);
            }
            assert_eq!(sel.labels, vec![0, 0, 1, 1]);
            let mut khats: Vec<usize> = path.points.iter().map(|p| p.reduced.k_hat()).collect();
            khats.dedup();
            assert!(khats.len() >= 2);
        }
    }
}
