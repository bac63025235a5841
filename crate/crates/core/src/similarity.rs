//! Journey similarity and sparse similarity graphs.
//!
//! Two journeys are compared on the stations where both were observed. The
//! spatial term is the number of such stations; the temporal term is the
//! largest absolute time difference over them. The soft kernel damps the
//! count with a Gaussian of that difference, the hard kernel keeps the count
//! only when the difference is within `tau`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::trace::{Journey, Seconds, StationId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Soft,
    Hard,
}

/// Which per-station timestamps enter the temporal term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeComponent {
    /// Both first-seen and last-seen times.
    #[default]
    Both,
    Arrival,
    Departure,
}

impl TimeComponent {
    fn diff(self, a: (Seconds, Seconds), b: (Seconds, Seconds)) -> Seconds {
        let da = (a.0 - b.0).abs();
        let dd = (a.1 - b.1).abs();
        match self {
            TimeComponent::Both => da.max(dd),
            TimeComponent::Arrival => da,
            TimeComponent::Departure => dd,
        }
    }

    /// Sort key used for blocking; any pair within the temporal bound has
    /// keys within the bound too.
    fn key(self, first_seen: Seconds, last_seen: Seconds) -> Seconds {
        match self {
            TimeComponent::Arrival => first_seen,
            TimeComponent::Both | TimeComponent::Departure => last_seen,
        }
    }
}

pub const DEFAULT_TWO_SIGMA_SQ: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    pub kind: Kernel,
    /// Soft kernel bandwidth `2σ²`, in seconds squared.
    pub two_sigma_sq: f64,
    /// Hard kernel threshold, in seconds.
    pub tau: f64,
    /// Edges with weight at or below this floor are not stored.
    pub min_weight: f64,
    pub component: TimeComponent,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams::soft(DEFAULT_TWO_SIGMA_SQ)
    }
}

impl SimilarityParams {
    pub fn soft(two_sigma_sq: f64) -> Self {
        SimilarityParams {
            kind: Kernel::Soft,
            two_sigma_sq,
            tau: 60.0,
            min_weight: (-9.0f64).exp(),
            component: TimeComponent::Both,
        }
    }

    pub fn hard(tau: f64) -> Self {
        SimilarityParams {
            kind: Kernel::Hard,
            two_sigma_sq: DEFAULT_TWO_SIGMA_SQ,
            tau,
            min_weight: 0.0,
            component: TimeComponent::Both,
        }
    }

    pub fn with_component(mut self, component: TimeComponent) -> Self {
        self.component = component;
        self
    }

    pub fn with_min_weight(mut self, min_weight: f64) -> Self {
        self.min_weight = min_weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.two_sigma_sq > 0.0) {
            return Err(invalid("two_sigma_sq must be positive"));
        }
        if !(self.tau >= 0.0) {
            return Err(invalid("tau must be non-negative"));
        }
        if !(self.min_weight >= 0.0) {
            return Err(invalid("min_weight must be non-negative"));
        }
        Ok(())
    }

    /// Largest temporal difference that can still produce an edge between
    /// journeys sharing at most `max_overlap` stations.
    fn temporal_bound(&self, max_overlap: usize) -> f64 {
        match self.kind {
            Kernel::Hard => self.tau,
            Kernel::Soft => {
                // exp underflows to zero past ~745.
                let log_floor = if self.min_weight > 0.0 {
                    self.min_weight.ln()
                } else {
                    -746.0
                };
                let span = (max_overlap.max(1) as f64).ln() - log_floor;
                if span <= 0.0 {
                    return -1.0;
                }
                (self.two_sigma_sq * span).sqrt() * (1.0 + 1e-9) + 1.0
            }
        }
    }
}

/// Spatial and temporal agreement of two journeys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub common: usize,
    /// `None` when the journeys share no station.
    pub max_diff: Option<Seconds>,
}

pub fn overlap(a: &Journey, b: &Journey, component: TimeComponent) -> Overlap {
    let (small, large) = if a.stops.len() <= b.stops.len() {
        (a, b)
    } else {
        (b, a)
    };
    let mut common = 0;
    let mut max_diff: Option<Seconds> = None;
    for (s, ta) in &small.stops {
        if let Some(tb) = large.stops.get(s) {
            common += 1;
            let d = component.diff((ta.first_seen, ta.last_seen), (tb.first_seen, tb.last_seen));
            max_diff = Some(max_diff.map_or(d, |m| m.max(d)));
        }
    }
    Overlap { common, max_diff }
}

/// `common · exp(−max_diff² / 2σ²)`.
pub fn soft_similarity(a: &Journey, b: &Journey, params: &SimilarityParams) -> f64 {
    let o = overlap(a, b, params.component);
    match o.max_diff {
        None => 0.0,
        Some(d) => {
            let d = d as f64;
            o.common as f64 * (-(d * d) / params.two_sigma_sq).exp()
        }
    }
}

/// `common` when `max_diff ≤ tau`, else zero.
pub fn hard_similarity(a: &Journey, b: &Journey, params: &SimilarityParams) -> f64 {
    let o = overlap(a, b, params.component);
    match o.max_diff {
        Some(d) if d as f64 <= params.tau => o.common as f64,
        _ => 0.0,
    }
}

pub fn similarity(a: &Journey, b: &Journey, params: &SimilarityParams) -> f64 {
    match params.kind {
        Kernel::Soft => soft_similarity(a, b, params),
        Kernel::Hard => hard_similarity(a, b, params),
    }
}

/// Sparse symmetric weighted graph over journeys `0..n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl SimilarityGraph {
    /// Builds a graph from an edge list; duplicate pairs keep the last weight.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (i, j, w) in edges {
            if i == j || w <= 0.0 {
                continue;
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for row in &mut adjacency {
            row.sort_by_key(|e| e.0);
            // keep last occurrence for duplicates
            let mut dedup: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(j, w) in row.iter() {
                match dedup.last_mut() {
                    Some(last) if last.0 == j => last.1 = w,
                    _ => dedup.push((j, w)),
                }
            }
            *row = dedup;
        }
        SimilarityGraph { n, adjacency }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|e| e.1).sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |k| self.adjacency[i][k].1)
    }

    /// Edges with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .filter(move |e| e.0 > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Induced subgraph on `vertices`, renumbered in the given order.
    pub fn subgraph(&self, vertices: &[usize]) -> SimilarityGraph {
        let mut index = vec![usize::MAX; self.n];
        for (k, &v) in vertices.iter().enumerate() {
            index[v] = k;
        }
        let adjacency = vertices
            .iter()
            .map(|&v| {
                let mut row: Vec<(usize, f64)> = self.adjacency[v]
                    .iter()
                    .filter(|e| index[e.0] != usize::MAX)
                    .map(|&(j, w)| (index[j], w))
                    .collect();
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        SimilarityGraph {
            n: vertices.len(),
            adjacency,
        }
    }

    /// Dumps `i,j,weight` rows for `i < j`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "weight"])?;
        for (i, j, wt) in self.edges() {
            w.write_record([i.to_string(), j.to_string(), format!("{wt}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the similarity graph of `journeys`.
///
/// Candidate pairs are restricted to journeys that share a station with
/// timestamps there within the largest difference that can still yield a
/// weight above `min_weight`; every candidate is then scored exactly, so the
/// result equals scoring all pairs.
pub fn build_graph(journeys: &[Journey], params: &SimilarityParams) -> Result<SimilarityGraph> {
    params.validate()?;
    let n = journeys.len();
    let max_overlap = journeys.iter().map(|j| j.stops.len()).max().unwrap_or(0);
    let bound = params.temporal_bound(max_overlap);
    if bound < 0.0 {
        return Ok(SimilarityGraph::from_edges(n, []));
    }

    let mut per_station: std::collections::BTreeMap<StationId, Vec<(Seconds, usize)>> =
        Default::default();
    for (idx, j) in journeys.iter().enumerate() {
        for (s, t) in &j.stops {
            per_station
                .entry(*s)
                .or_default()
                .push((params.component.key(t.first_seen, t.last_seen), idx));
        }
    }
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for list in per_station.values_mut() {
        list.sort_unstable();
        for p in 0..list.len() {
            let (kp, ip) = list[p];
            for &(kq, iq) in &list[p + 1..] {
                if (kq - kp) as f64 > bound {
                    break;
                }
                candidates.push((ip.min(iq), ip.max(iq)));
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let edges = candidates.into_iter().filter_map(|(i, j)| {
        let w = similarity(&journeys[i], &journeys[j], params);
        (w > params.min_weight).then_some((i, j, w))
    });
    Ok(SimilarityGraph::from_edges(n, edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(stops: &[(u32, Seconds, Seconds)]) -> Journey {
        Journey::new("d", 0, stops.iter().map(|&(s, a, d)| (s, (a, d))))
    }

    #[test]
    fn overlap_examples() {
        let a = j(&[(1, 0, 10), (2, 100, 110), (3, 200, 210)]);
        assert_eq!(
            overlap(&a, &a, TimeComponent::Both),
            Overlap {
                common: 3,
                max_diff: Some(0)
            }
        );
        let b = j(&[(5, 0, 10)]);
        assert_eq!(
            overlap(&a, &b, TimeComponent::Both),
            Overlap {
                common: 0,
                max_diff: None
            }
        );
        let j1 = j(&[(1, 0, 10), (2, 100, 110)]);
        let j2 = j(&[(2, 105, 112), (3, 200, 205)]);
        assert_eq!(
            overlap(&j1, &j2, TimeComponent::Both),
            Overlap {
                common: 1,
                max_diff: Some(5)
            }
        );
        assert_eq!(overlap(&j1, &j2, TimeComponent::Arrival).max_diff, Some(5));
        assert_eq!(
            overlap(&j1, &j2, TimeComponent::Departure).max_diff,
            Some(2)
        );
    }

    #[test]
    fn soft_examples() {
        let p = SimilarityParams::soft(30.0);
        let a = j(&[(1, 0, 10), (2, 100, 110), (3, 200, 210)]);
        assert_eq!(soft_similarity(&a, &a, &p), 3.0);
        assert_eq!(soft_similarity(&a, &j(&[(7, 0, 0)]), &p), 0.0);
        let x = j(&[(1, 0, 0), (2, 100, 100)]);
        let y = j(&[(1, 5, 5), (2, 100, 100)]);
        let s = soft_similarity(&x, &y, &p);
        assert!((s - 2.0 * (-25.0f64 / 30.0).exp()).abs() < 1e-12);
        assert!((s - 0.8692).abs() < 1e-4);
    }

    #[test]
    fn hard_boundary_is_inclusive() {
        let p = SimilarityParams::hard(10.0);
        let a = j(&[(1, 0, 0), (2, 50, 50), (3, 90, 90)]);
        let b = j(&[(1, 10, 10), (2, 50, 50), (3, 90, 90)]);
        let c = j(&[(1, 11, 11), (2, 50, 50), (3, 90, 90)]);
        assert_eq!(hard_similarity(&a, &b, &p), 3.0);
        assert_eq!(hard_similarity(&a, &c, &p), 0.0);
        assert_eq!(hard_similarity(&a, &j(&[(9, 0, 0)]), &p), 0.0);
    }

    #[test]
    fn graph_examples() {
        let p = SimilarityParams::soft(30.0);
        let g = build_graph(&[j(&[(1, 0, 0)]), j(&[(2, 0, 0)])], &p).unwrap();
        assert_eq!(g.edge_count(), 0);

        let same = j(&[(1, 0, 5), (2, 60, 65)]);
        let g = build_graph(&[same.clone(), same.clone(), same], &p).unwrap();
        assert_eq!(
            g.edges().collect::<Vec<_>>(),
            vec![(0, 1, 2.0), (0, 2, 2.0), (1, 2, 2.0)]
        );
        assert_eq!(g.weight(2, 1), 2.0);
        assert_eq!(g.degree(0), 4.0);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SimilarityParams::soft(0.0);
        assert!(p.validate().is_err());
        p = SimilarityParams::hard(-1.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn subgraph_renumbers() {
        let g = SimilarityGraph::from_edges(4, [(0, 1, 1.0), (1, 3, 2.0), (2, 3, 0.5)]);
        let s = g.subgraph(&[3, 1]);
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1, 2.0)]);
    }

    #[test]
    fn csv_dump() {
        let g = SimilarityGraph::from_edges(3, [(0, 2, 1.5)]);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,weight\n0,2,1.5\n");
    }
}
