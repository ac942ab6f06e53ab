use graphsel::dlpa::{cartesian_direct, dlpa};
use graphsel::isotonic::isotonic_qp;
use graphsel::linalg::{log_grid, softmax_in_place, Mat};
use graphsel::Graph;
use proptest::prelude::*;

/// Random connected graph: a random tree on `p` nodes plus extra edges picked by `mask`.
fn connected_graph(p: usize, parents: &[usize], mask: &[bool]) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..p).map(|v| (parents[v - 1] % v, v)).collect();
    let mut k = 0;
    for i in 0..p {
        for j in i + 1..p {
            if !edges.contains(&(i, j)) && mask.get(k).copied().unwrap_or(false) {
                edges.push((i, j));
            }
            k += 1;
        }
    }
    Graph::new(p, edges).unwrap()
}

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (2usize..9)
        .prop_flat_map(|p| {
            (
                Just(p),
                prop::collection::vec(0usize..64, p - 1),
                prop::collection::vec(any::<bool>(), p * (p - 1) / 2),
            )
        })
        .prop_map(|(p, parents, mask)| connected_graph(p, &parents, &mask))
}

proptest! {
    #[test]
    fn laplacian_rows_sum_to_zero_and_form_is_nonnegative(
        g in graph_strategy(),
        weights in prop::collection::vec(0.01f64..10.0, 36),
        x in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let w = &weights[..g.m()];
        let l = g.laplacian(w).unwrap();
        for i in 0..g.p() {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
        }
        let v = graphsel::linalg::Vector::from_column_slice(&x[..g.p()]);
        prop_assert!(v.dot(&(&l * &v)) >= -1e-12);
    }

    #[test]
    fn resistances_sum_to_nodes_minus_one(g in graph_strategy()) {
        let r = g.effective_resistances().unwrap();
        prop_assert!((r.iter().sum::<f64>() - (g.p() - 1) as f64).abs() < 1e-10);
        prop_assert!(r.iter().all(|&x| x > 0.0 && x <= 1.0 + 1e-12));
    }

    #[test]
    fn contraction_respects_fused_edges(g in graph_strategy(), bits in prop::collection::vec(any::<bool>(), 36)) {
        let gamma = &bits[..g.m()];
        let c = g.contract(gamma).unwrap();
        prop_assert_eq!(c.sizes.iter().sum::<usize>(), g.p());
        for (&(i, j), &fused) in g.edges().iter().zip(gamma) {
            if fused {
                prop_assert_eq!(c.membership[i], c.membership[j]);
            }
        }
        let crossing = g.edges().iter().filter(|&&(i, j)| c.membership[i] != c.membership[j]).count();
        prop_assert!((c.multiplicities().iter().sum::<f64>() - crossing as f64).abs() < 1e-12);
    }

    #[test]
    fn isotonic_fit_is_monotone_and_keeps_the_weighted_mean(
        z in prop::collection::vec(-10.0f64..10.0, 2..40),
        mw in prop::collection::vec((0.1f64..5.0, 0.0f64..5.0), 40),
    ) {
        let n = z.len();
        let m: Vec<f64> = mw[..n].iter().map(|p| p.0).collect();
        let w: Vec<f64> = mw[..n - 1].iter().map(|p| p.1).collect();
        let theta = isotonic_qp(&z, &m, &w).unwrap().theta;
        prop_assert!(theta.windows(2).all(|t| t[0] <= t[1] + 1e-9));
        let gap: f64 = (0..n).map(|i| m[i] * (theta[i] - z[i])).sum();
        prop_assert!(gap.abs() < 1e-8 * (1.0 + z.iter().map(|v| v.abs()).sum::<f64>()));
    }

    #[test]
    fn dlpa_matches_direct_solve(
        vals in prop::collection::vec(-3.0f64..3.0, 30),
        wr in prop::collection::vec(0.1f64..3.0, 4),
        wc in prop::collection::vec(0.1f64..3.0, 5),
    ) {
        let y = Mat::from_column_slice(5, 6, &vals);
        let lr = Graph::chain(5).laplacian(&wr).unwrap();
        let lc = Graph::chain(6).laplacian(&wc).unwrap();
        let it = dlpa(&y, &lr, &lc, 1e-13, 100_000).unwrap();
        let direct = cartesian_direct(&y, &lr, &lc).unwrap();
        prop_assert!((&it.theta - &direct).amax() < 1e-8 * (1.0 + direct.amax()));
    }

    #[test]
    fn softmax_is_a_distribution(mut v in prop::collection::vec(-700.0f64..700.0, 1..12)) {
        softmax_in_place(&mut v);
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn log_grid_is_increasing_with_exact_ends(lo in 1e-6f64..1.0, span in 2.0f64..1e6, len in 2usize..40) {
        let hi = lo * span;
        let g = log_grid(lo, hi, len);
        prop_assert_eq!(g.len(), len);
        prop_assert!((g[0] - lo).abs() <= 1e-12 * lo);
        prop_assert_eq!(g[len - 1], hi);
        prop_assert!(g.windows(2).all(|t| t[0] < t[1]));
    }
}
