use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use transit_sense::eval::{adjusted_rand_index, match_arrivals, ArrivalMatch};

/// Exhaustive search over partial one-to-one pairings within the window.
/// Returns (cost, pairs) with unmatched truths costing the window.
fn exhaustive(est: &[f64], truth: &[f64], window: f64) -> (f64, usize) {
    fn go(i: usize, est: &[f64], truth: &[f64], used: &mut Vec<bool>, w: f64) -> (f64, usize) {
        if i == est.len() {
            let unmatched = used.iter().filter(|u| !**u).count();
            return (w * unmatched as f64, 0);
        }
        // estimate i left unmatched
        let mut best = go(i + 1, est, truth, used, w);
        for j in 0..truth.len() {
            let d = (est[i] - truth[j]).abs();
            if used[j] || d > w {
                continue;
            }
            used[j] = true;
            let (c, p) = go(i + 1, est, truth, used, w);
            used[j] = false;
            let cand = (c + d, p + 1);
            if cand.0 < best.0 - 1e-9 || ((cand.0 - best.0).abs() <= 1e-9 && cand.1 > best.1) {
                best = cand;
            }
        }
        best
    }
    go(0, est, truth, &mut vec![false; truth.len()], window)
}

fn cost(m: &ArrivalMatch, window: f64) -> f64 {
    m.total_abs_error() + window * m.unmatched_true.len() as f64
}

/// Repeatedly pairs the closest remaining estimate and truth.
fn greedy(est: &[f64], truth: &[f64], window: f64) -> f64 {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in est.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if (e - t).abs() <= window {
                pairs.push(((e - t).abs(), i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut ue, mut ut) = (vec![false; est.len()], vec![false; truth.len()]);
    let mut total = 0.0;
    for (d, i, j) in pairs {
        if !ue[i] && !ut[j] {
            ue[i] = true;
            ut[j] = true;
            total += d;
        }
    }
    total + window * ut.iter().filter(|u| !**u).count() as f64
}

#[test]
fn matching_is_optimal_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let window = 60.0;
    let mut strictly_better = 0;
    for _ in 0..500 {
        let ne = rng.random_range(0..=8);
        let nt = rng.random_range(0..=8);
        let span = rng.random_range(60.0..600.0);
        // tenths of a second keep the oracle's sums exact enough
        let draw = |rng: &mut ChaCha8Rng| (rng.random_range(0.0..span) * 10.0f64).round() / 10.0;
        let est: Vec<f64> = (0..ne).map(|_| draw(&mut rng)).collect();
        let truth: Vec<f64> = (0..nt).map(|_| draw(&mut rng)).collect();
        let m = match_arrivals(&est, &truth, window);
        let (best, pairs) = exhaustive(&est, &truth, window);

        assert!((cost(&m, window) - best).abs() < 1e-6, "{est:?} {truth:?}");
        assert_eq!(m.pairs.len(), pairs);
        assert_eq!(m.pairs.len() + m.unmatched_est.len(), ne);
        assert_eq!(m.pairs.len() + m.unmatched_true.len(), nt);
        assert!(m.pairs.iter().all(|(e, t)| (e - t).abs() <= window));

        let g = greedy(&est, &truth, window);
        assert!(cost(&m, window) <= g + 1e-6);
        if cost(&m, window) < g - 1e-6 {
            strictly_better += 1;
        }
    }
    assert!(strictly_better > 0);
}

#[test]
fn ari_is_invariant_to_relabeling() {
    let a = [0, 0, 1, 1, 2, 2, 2];
    let b = [5, 5, 3, 3, 9, 9, 9];
    assert_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
    let c = [0, 1, 0, 1, 0, 1, 0];
    assert!(adjusted_rand_index(&a, &c).unwrap() < 0.1);
}
