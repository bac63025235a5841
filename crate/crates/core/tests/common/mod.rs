//! Reference implementations shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use transit_sense::similarity::{similarity, SimilarityParams};
use transit_sense::trace::{Journey, Seconds};

/// Weights of the fitted model reported for the original deployment.
pub const PLANTED: [f64; 6] = [-7.3645, 0.00033, 0.06824, 0.00682, 0.00014, 0.00251];

pub fn planted_features(rng: &mut ChaCha8Rng) -> [f64; 5] {
    [
        rng.random_range(0.0..400.0),
        rng.random_range(0.0..200.0),
        rng.random_range(0.0..600.0),
        rng.random_range(0.0..300.0),
        rng.random_range(60.0..600.0),
    ]
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Random journeys grouped around a few trains so that many pairs overlap.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> Vec<Journey> {
    (0..n)
        .map(|i| {
            let base = rng.random_range(0..4) * 240 + rng.random_range(0..40);
            let from = rng.random_range(0..8u32);
            let to = rng.random_range(from..10);
            let mut stops = Vec::new();
            for s in from..=to {
                if rng.random_bool(0.8) {
                    let a = base + 120 * s as i64 + rng.random_range(-20..=20);
                    stops.push((s, (a, a + rng.random_range(0..60))));
                }
            }
            Journey::new(format!("d{i}"), 0, stops)
        })
        .collect()
}

/// Random journey over `stations` stations; each station is kept with
/// probability one half.
pub fn random_journey(rng: &mut ChaCha8Rng, stations: u32, horizon: i64) -> Journey {
    let mut stops = Vec::new();
    for s in 0..stations {
        if rng.random_bool(0.5) {
            let a = rng.random_range(0..horizon);
            stops.push((s, (a, a + rng.random_range(0..120))));
        }
    }
    Journey::new("d", 0, stops)
}

pub fn brute_force_edges(journeys: &[Journey], p: &SimilarityParams) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..journeys.len() {
        for j in i + 1..journeys.len() {
            let w = similarity(&journeys[i], &journeys[j], p);
            if w > p.min_weight {
                out.push((i, j, w));
            }
        }
    }
    out
}

/// Quadratic DBSCAN straight from the definition.
pub fn naive_dbscan(xs: &[Seconds], eps: Seconds, min_pts: usize) -> Vec<Option<usize>> {
    let n = xs.len();
    let near = |p: usize, q: usize| (xs[p] - xs[q]).abs() <= eps;
    let core: Vec<bool> = (0..n)
        .map(|p| (0..n).filter(|&q| near(p, q)).count() >= min_pts)
        .collect();
    let mut comp = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut stack = vec![s];
        let mut members = Vec::new();
        comp[s] = id;
        while let Some(p) = stack.pop() {
            members.push(p);
            for q in 0..n {
                if core[q] && comp[q] == usize::MAX && near(p, q) {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        comps.push(members);
    }
    // number components by earliest timestamp
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by_key(|&c| comps[c].iter().map(|&p| xs[p]).min());
    let mut rank = vec![0; comps.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    (0..n)
        .map(|p| {
            if core[p] {
                return Some(rank[comp[p]]);
            }
            (0..n)
                .filter(|&q| core[q] && near(p, q))
                .min_by_key(|&q| ((xs[p] - xs[q]).abs(), xs[q]))
                .map(|q| rank[comp[q]])
        })
        .collect()
}

/// One train over stations 0, 1, 2. Riders boarding at 0 are never seen at
/// 1; everybody is seen at 2.
pub fn unseen_middle() -> Vec<Journey> {
    let mut js = Vec::new();
    for d in 0..6 {
        js.push(Journey::new(
            format!("a{d}"),
            0,
            [(0, (d * 10, 100)), (2, (400, 430 + d))],
        ));
        js.push(Journey::new(
            format!("b{d}"),
            0,
            [(1, (150 + d * 10, 250)), (2, (400, 430 + d))],
        ));
    }
    js
}
