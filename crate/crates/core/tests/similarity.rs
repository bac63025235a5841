mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use transit_sense::similarity::{
    build_graph, hard_similarity, overlap, similarity, soft_similarity, Kernel, SimilarityParams,
    TimeComponent,
};
use transit_sense::trace::Journey;

use common::{brute_force_edges, random_instance};

fn journey_strategy(stations: u32, horizon: i64) -> impl Strategy<Value = Journey> {
    prop::collection::btree_map(0..stations, (0..horizon, 0..120i64), 0..=stations as usize)
        .prop_map(|m| Journey::new("d", 0, m.into_iter().map(|(s, (a, d))| (s, (a, a + d)))))
}

fn component() -> impl Strategy<Value = TimeComponent> {
    prop_oneof![
        Just(TimeComponent::Both),
        Just(TimeComponent::Arrival),
        Just(TimeComponent::Departure),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn kernels_are_symmetric_and_bounded(
        a in journey_strategy(10, 600),
        b in journey_strategy(10, 600),
        tss in 1.0f64..5000.0,
        tau in 0.0f64..300.0,
        c in component(),
    ) {
        let common = overlap(&a, &b, c).common as f64;
        for p in [SimilarityParams::soft(tss), SimilarityParams::hard(tau)] {
            let p = p.with_component(c);
            let ab = similarity(&a, &b, &p);
            prop_assert_eq!(ab, similarity(&b, &a, &p));
            prop_assert!((0.0..=common).contains(&ab));
        }
    }

    #[test]
    fn disjoint_journeys_score_zero(
        a in journey_strategy(5, 600),
        b in journey_strategy(5, 600),
        tss in 1.0f64..5000.0,
    ) {
        // shift b's stations out of a's range
        let b = Journey::new(
            "e",
            0,
            b.stops.iter().map(|(s, t)| (s.0 + 5, (t.first_seen, t.last_seen))),
        );
        prop_assert_eq!(overlap(&a, &b, TimeComponent::Both).common, 0);
        prop_assert_eq!(soft_similarity(&a, &b, &SimilarityParams::soft(tss)), 0.0);
        prop_assert_eq!(hard_similarity(&a, &b, &SimilarityParams::hard(1e9)), 0.0);
    }

    #[test]
    fn hard_threshold_is_inclusive(
        a in journey_strategy(6, 600),
        b in journey_strategy(6, 600),
        c in component(),
    ) {
        let o = overlap(&a, &b, c);
        if let Some(d) = o.max_diff {
            let at = SimilarityParams::hard(d as f64).with_component(c);
            prop_assert_eq!(hard_similarity(&a, &b, &at), o.common as f64);
            if d > 0 {
                let below = SimilarityParams::hard(d as f64 - 1.0).with_component(c);
                prop_assert_eq!(hard_similarity(&a, &b, &below), 0.0);
            }
        }
    }

    #[test]
    fn soft_kernel_matches_gaussian_and_decays(
        a in journey_strategy(6, 600),
        shift in 0i64..400,
        tss in 1.0f64..5000.0,
    ) {
        let b = Journey::new(
            "e",
            0,
            a.stops.iter().map(|(s, t)| (s.0, (t.first_seen + shift, t.last_seen + shift))),
        );
        let p = SimilarityParams::soft(tss);
        let n = a.stops.len() as f64;
        let v = soft_similarity(&a, &b, &p);
        if n == 0.0 {
            prop_assert_eq!(v, 0.0);
        } else {
            let expect = n * (-(shift as f64).powi(2) / tss).exp();
            prop_assert!((v - expect).abs() <= 1e-12 * n);
            prop_assert_eq!(soft_similarity(&a, &a, &p), n);
            let farther = Journey::new(
                "f",
                0,
                b.stops.iter().map(|(s, t)| (s.0, (t.first_seen + 1, t.last_seen + 1))),
            );
            prop_assert!(soft_similarity(&a, &farther, &p) <= v);
        }
    }
}

#[test]
fn graph_equals_all_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = [
        SimilarityParams::soft(600.0).with_component(TimeComponent::Departure),
        SimilarityParams::soft(30.0),
        SimilarityParams::soft(600.0).with_min_weight(0.0),
        SimilarityParams::soft(5000.0).with_min_weight(0.5),
        SimilarityParams::hard(60.0),
        SimilarityParams::hard(0.0).with_component(TimeComponent::Arrival),
    ];
    let mut nonempty = 0;
    for _ in 0..50 {
        let js = random_instance(&mut rng, 50);
        for p in &params {
            let g = build_graph(&js, p).unwrap();
            let edges: Vec<_> = g.edges().collect();
            assert_eq!(edges, brute_force_edges(&js, p), "{:?}", p.kind);
            for (i, j, w) in edges {
                assert_eq!(g.weight(j, i), w);
            }
            if g.edge_count() > 0 && p.kind == Kernel::Soft {
                nonempty += 1;
            }
        }
    }
    assert!(nonempty > 100);
}
