mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transit_sense::clustering::{
    dbscan_1d, prune_knn_outliers, prune_similarity_outliers, run_baseline, run_spectral,
    BaselineConfig, ClusterLabeling,
};
use transit_sense::eval::scenarios::simulation_movement_config;
use transit_sense::similarity::SimilarityGraph;
use transit_sense::trace::{LineTopology, Seconds};

use common::{naive_dbscan, unseen_middle};

#[test]
fn dbscan_matches_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(0..=50);
        let span = rng.random_range(1..2000);
        let xs: Vec<Seconds> = (0..n).map(|_| rng.random_range(0..span)).collect();
        let eps = rng.random_range(1..120);
        let min_pts = rng.random_range(1..6);
        let got = dbscan_1d(&xs, eps, min_pts).unwrap();
        let want = naive_dbscan(&xs, eps, min_pts);
        assert_eq!(
            got.labels(),
            want.as_slice(),
            "{xs:?} eps {eps} min {min_pts}"
        );
        assert_eq!(got.k(), want.iter().flatten().max().map_or(0, |m| m + 1));
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> (SimilarityGraph, ClusterLabeling) {
    let raw: Vec<Option<usize>> = (0..n)
        .map(|_| rng.random_bool(0.9).then(|| rng.random_range(0..4)))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let same = raw[i].is_some() && raw[i] == raw[j];
            if rng.random_bool(if same { 0.7 } else { 0.2 }) {
                edges.push((i, j, rng.random_range(0.01..2.0)));
            }
        }
    }
    (
        SimilarityGraph::from_edges(n, edges),
        ClusterLabeling::from_raw(&raw),
    )
}

fn survivors(l: &ClusterLabeling) -> Vec<usize> {
    (0..l.len()).filter(|&i| l.label(i).is_some()).collect()
}

/// Every surviving pair keeps its same-cluster relation.
fn refines(before: &ClusterLabeling, after: &ClusterLabeling) -> bool {
    let s = survivors(after);
    s.iter().all(|&i| before.label(i).is_some())
        && s.iter().all(|&i| {
            s.iter().all(|&j| {
                (before.label(i) == before.label(j)) == (after.label(i) == after.label(j))
            })
        })
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

proptest! {
    #[test]
    fn pruning_only_removes_and_is_monotone(
        seed in any::<u64>(),
        n in 1usize..40,
        k_nn in 1usize..8,
        a in 0.05f64..1.0,
        b in 0.05f64..1.0,
        f in 0.01f64..0.99,
        g in 0.01f64..0.99,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (graph, labeling) = random_graph(&mut rng, n);
        let (lo, hi) = (a.min(b), a.max(b));
        let loose = prune_knn_outliers(&graph, &labeling, k_nn, lo).unwrap();
        let strict = prune_knn_outliers(&graph, &labeling, k_nn, hi).unwrap();
        prop_assert!(refines(&labeling, &loose));
        prop_assert!(is_subset(&survivors(&strict), &survivors(&loose)));

        let (lo, hi) = (f.min(g), f.max(g));
        let loose = prune_similarity_outliers(&graph, &labeling, lo).unwrap();
        let strict = prune_similarity_outliers(&graph, &labeling, hi).unwrap();
        prop_assert!(refines(&labeling, &loose));
        prop_assert!(refines(&labeling, &strict));
        prop_assert!(is_subset(&survivors(&strict), &survivors(&loose)));
    }
}

#[test]
fn baseline_splits_a_train_that_spectral_keeps_whole() {
    let js = unseen_middle();
    let topo = LineTopology::linear("L", 3).unwrap();
    let base = run_baseline(
        &js,
        &topo,
        &BaselineConfig {
            eps: 60,
            min_pts: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(base.len(), 2);

    let spectral = run_spectral(&js, &topo, &simulation_movement_config()).unwrap();
    assert_eq!(spectral.timetable.len(), 1);
    assert_eq!(spectral.clusters.len(), 1);
    assert_eq!(spectral.clusters[0].len(), js.len());
}
