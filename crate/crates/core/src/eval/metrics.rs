use std::collections::HashMap;
use std::hash::Hash;

use log::warn;
use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One-to-one pairing of estimated and true arrivals at one station.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrivalMatch {
    /// `(estimated, true)` pairs, ordered by true time.
    pub pairs: Vec<(f64, f64)>,
    pub unmatched_est: Vec<f64>,
    pub unmatched_true: Vec<f64>,
}

impl ArrivalMatch {
    pub fn total_abs_error(&self) -> f64 {
        self.pairs.iter().map(|(e, t)| (e - t).abs()).sum()
    }
}

// costs are compared as integer microseconds
const SCALE: f64 = 1e6;

/// Pairs estimates with truths at most `window` seconds apart, minimising
/// the total absolute difference where a truth left unmatched costs the full
/// window. A pair exactly `window` apart is still preferred to no pair.
pub fn match_arrivals(est: &[f64], truth: &[f64], window: f64) -> ArrivalMatch {
    let mut e: Vec<f64> = est.to_vec();
    let mut t: Vec<f64> = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);

    // connected blocks of the window graph: both lists sorted, so a block
    // ends where no later estimate reaches back to an earlier truth
    let mut out = ArrivalMatch::default();
    let (mut i, mut j) = (0usize, 0usize);
    while i < e.len() || j < t.len() {
        let (bi, bj) = (i, j);
        let mut reach = f64::NEG_INFINITY;
        loop {
            let next_e = e.get(i).copied();
            let next_t = t.get(j).copied();
            let take_e = match (next_e, next_t) {
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let v = if take_e {
                next_e.unwrap()
            } else {
                next_t.unwrap()
            };
            if i + j > bi + bj && v > reach {
                break;
            }
            reach = reach.max(v + window);
            if take_e {
                i += 1;
            } else {
                j += 1;
            }
        }
        solve_block(&e[bi..i], &t[bj..j], window, &mut out);
    }
    out.pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

fn solve_block(e: &[f64], t: &[f64], window: f64, out: &mut ArrivalMatch) {
    if e.is_empty() || t.is_empty() {
        out.unmatched_est.extend_from_slice(e);
        out.unmatched_true.extend_from_slice(t);
        return;
    }
    // columns: truths, then one "unmatched" slot per estimate; a pair is
    // worth the window minus its difference, plus one unit to break ties
    // toward matching
    let w = (window * SCALE).round() as i64;
    let weights = Matrix::from_fn(e.len(), t.len() + e.len(), |(r, c)| {
        if c >= t.len() {
            return 0;
        }
        let d = (e[r] - t[c]).abs();
        if d <= window {
            (d * SCALE).round() as i64 - w - 1
        } else {
            0
        }
    });
    let (_, assign) = kuhn_munkres_min(&weights);
    let mut used = vec![false; t.len()];
    for (r, &c) in assign.iter().enumerate() {
        if c < t.len() && (e[r] - t[c]).abs() <= window {
            used[c] = true;
            out.pairs.push((e[r], t[c]));
        } else {
            out.unmatched_est.push(e[r]);
        }
    }
    out.unmatched_true
        .extend(t.iter().zip(&used).filter(|(_, u)| !**u).map(|(x, _)| *x));
}

/// Fraction of truths matched within `window`; `None` without truths.
pub fn hit_rate(est: &[f64], truth: &[f64], window: f64) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    Some(match_arrivals(est, truth, window).pairs.len() as f64 / truth.len() as f64)
}

/// Root mean squared difference of matched pairs, in minutes.
pub fn rmse_minutes(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let mse = pairs.iter().map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / pairs.len() as f64;
    Some(mse.sqrt() / 60.0)
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Hash + Eq, B: Hash + Eq>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("labelings differ in length"));
    }
    let n = a.len();
    let mut ia: HashMap<&A, usize> = HashMap::new();
    let mut ib: HashMap<&B, usize> = HashMap::new();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: Vec<usize> = Vec::new();
    let mut rb: Vec<usize> = Vec::new();
    for (x, y) in a.iter().zip(b) {
        let next = ia.len();
        let p = *ia.entry(x).or_insert(next);
        let next = ib.len();
        let q = *ib.entry(y).or_insert(next);
        if p == ra.len() {
            ra.push(0);
        }
        if q == rb.len() {
            rb.push(0);
        }
        ra[p] += 1;
        rb[q] += 1;
        *table.entry((p, q)).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial (all one cluster or all singletons)
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize, what: &str) -> Option<f64> {
    if den == 0 {
        warn!("{what} undefined: zero denominator");
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn classification_report(
    predictions: &[bool],
    labels: &[bool],
) -> Result<ClassificationReport> {
    if predictions.len() != labels.len() {
        return Err(invalid("predictions and labels differ in length"));
    }
    let mut r = ClassificationReport::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => r.tp += 1,
            (true, false) => r.fp += 1,
            (false, false) => r.tn += 1,
            (false, true) => r.fn_ += 1,
        }
    }
    r.precision = ratio(r.tp, r.tp + r.fp, "precision");
    r.recall = ratio(r.tp, r.tp + r.fn_, "recall");
    r.accuracy = ratio(r.tp + r.tn, predictions.len(), "accuracy");
    r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn_, "f1");
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_rate_examples() {
        assert_eq!(hit_rate(&[10.0, 200.0], &[10.0, 200.0], 60.0), Some(1.0));
        assert_eq!(hit_rate(&[10.0, 500.0], &[30.0, 200.0], 60.0), Some(0.5));
        assert_eq!(hit_rate(&[100.0, 290.0], &[10.0, 200.0], 60.0), Some(0.0));
        assert_eq!(hit_rate(&[1.0], &[], 60.0), None);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_minutes(&[(5.0, 5.0)]), Some(0.0));
        assert_eq!(rmse_minutes(&[(30.0, 0.0), (130.0, 100.0)]), Some(0.5));
        assert_eq!(rmse_minutes(&[(60.0, 0.0), (40.0, 100.0)]), Some(1.0));
        assert_eq!(rmse_minutes(&[]), None);
    }

    #[test]
    fn matching_trades_pairs_against_window() {
        // two pairs 45 + 50 apart cost more than one pair 5 apart plus a miss
        let m = match_arrivals(&[45.0, 100.0], &[0.0, 50.0], 50.0);
        assert_eq!(m.pairs, vec![(45.0, 50.0)]);
        assert_eq!(m.unmatched_true, vec![0.0]);
        // a shifted chain never beats exact pairs plus one miss
        let m = match_arrivals(&[0.0, 60.0, 120.0], &[60.0, 120.0, 180.0], 60.0);
        assert_eq!(m.pairs, vec![(60.0, 60.0), (120.0, 120.0)]);
        // a pair at exactly the window is kept
        let m = match_arrivals(&[0.0], &[60.0], 60.0);
        assert_eq!(m.pairs.len(), 1);
        let m = match_arrivals(&[0.0, 10.0, 20.0], &[11.0], 60.0);
        assert_eq!(m.pairs, vec![(10.0, 11.0)]);
        assert_eq!(m.unmatched_est, vec![0.0, 20.0]);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 9, 9]).unwrap(),
            1.0
        );
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn classification_examples() {
        let r = classification_report(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.accuracy, r.f1),
            (Some(1.0), Some(1.0), Some(1.0), Some(1.0))
        );
        let labels: Vec<bool> = (0..100).map(|i| i < 5).collect();
        let r = classification_report(&[false; 100], &labels).unwrap();
        assert_eq!(r.accuracy, Some(0.95));
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.precision, None);
        assert!(classification_report(&[true], &[]).is_err());
    }
}
