use ist_core::clustering::{
    assign, birch_fit, kmeans_fit_traced, meanshift_fit, minibatch_kmeans_fit, BirchConfig, CfTree,
    ClusterMethod, ClusterModel, KMeansConfig, MeanShiftConfig, MiniBatchConfig,
};
use ndarray::{array, Array2};
use proptest::prelude::*;

fn points(max_rows: usize) -> impl Strategy<Value = Array2<f64>> {
    (2usize..max_rows, 1usize..4).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-10.0f64..10.0, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn brute_force(c: &Array2<f64>, x: &Array2<f64>) -> Vec<(usize, f64)> {
    x.outer_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, row) in c.outer_iter().enumerate() {
                let d: f64 = p
                    .iter()
                    .zip(row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lloyd_inertia_never_increases(x in points(60), k in 1usize..6, seed in any::<u64>()) {
        prop_assume!(x.nrows() >= k);
        let fit = kmeans_fit_traced(x.view(), &KMeansConfig::new(k, seed)).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", fit.inertia_history);
        }
        prop_assert!(fit.model.inertia <= fit.inertia_history[0] * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn assignment_matches_brute_force(x in points(80), k in 1usize..8, seed in any::<u64>()) {
        let mut rng_state = seed;
        let c = Array2::from_shape_fn((k, x.ncols()), |_| {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) * 20.0 - 10.0
        });
        let model = ClusterModel::from_centroids(ClusterMethod::KMeans, c.clone(), x.view(), 0.0).unwrap();
        let (a, d) = assign(&model, x.view()).unwrap();
        for (i, (bk, bd)) in brute_force(&c, &x).into_iter().enumerate() {
            prop_assert_eq!(a[i], bk);
            prop_assert_eq!(d[i], bd.sqrt());
        }
    }

    #[test]
    fn birch_statistics_match_recomputation(
        x in points(120),
        threshold in 0.1f64..6.0,
        branching in 2usize..6,
    ) {
        let tree = CfTree::build(x.view(), threshold, branching).unwrap();
        let leaves = tree.leaf_entries();
        let mut seen: Vec<usize> = leaves.iter().flat_map(|(_, m)| m.iter().copied()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..x.nrows()).collect::<Vec<_>>());
        for (cf, members) in tree.all_entries() {
            prop_assert_eq!(cf.count, members.len());
            for j in 0..x.ncols() {
                let ls: f64 = members.iter().map(|&i| x[[i, j]]).sum();
                prop_assert!((cf.linear_sum[j] - ls).abs() <= 1e-9 * (1.0 + ls.abs()));
            }
            let ss: f64 = members.iter().map(|&i| x.row(i).mapv(|v| v * v).sum()).sum();
            prop_assert!((cf.squared_sum - ss).abs() <= 1e-9 * (1.0 + ss));
        }
    }

    #[test]
    fn fitted_models_are_self_consistent(x in points(50), seed in any::<u64>()) {
        let models = [
            minibatch_kmeans_fit(x.view(), &MiniBatchConfig::new(2, seed)).unwrap(),
            birch_fit(x.view(), &BirchConfig::new(2, seed)).unwrap(),
        ];
        for m in models {
            prop_assert_eq!(m.len(), x.nrows());
            let (a, d) = assign(&m, x.view()).unwrap();
            prop_assert_eq!(&a, &m.assignments);
            prop_assert_eq!(&d, &m.distances);
        }
    }
}

#[test]
fn meanshift_finds_both_groups() {
    let x = array![
        [0.0, 0.0],
        [0.2, 0.0],
        [0.0, 0.2],
        [0.2, 0.2],
        [8.0, 8.0],
        [8.2, 8.0],
        [8.0, 8.2],
        [8.2, 8.2]
    ];
    let cfg = MeanShiftConfig {
        bandwidth: Some(1.5),
        ..Default::default()
    };
    let m = meanshift_fit(x.view(), &cfg).unwrap();
    assert_eq!(m.k(), 2);
    for target in [[0.1, 0.1], [8.1, 8.1]] {
        assert!(m
            .centroids
            .outer_iter()
            .any(|c| (c[0] - target[0]).abs() < 1e-2 && (c[1] - target[1]).abs() < 1e-2));
    }
}
