use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::envelope::{build_timetable, EnvelopeConfig, EstimatedTimetable, TripVisits};
use super::prune::{prune_knn_outliers, prune_similarity_outliers};
use super::reconcile::{anchor_sparse_stations, reconcile_fragments, TravelTimeStats};
use super::spectral::{spectral_cluster, ClusterCount, DEFAULT_K_MAX};
use crate::error::{invalid, Result};
use crate::similarity::{build_graph, SimilarityParams};
use crate::trace::{Journey, JourneyKey, LineTopology, Seconds};

/// Sliding windows `[w·stride, w·stride + length)`; a journey belongs to
/// every window containing its start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: Seconds,
    pub stride: Seconds,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length: 3600,
            stride: 1800,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length <= 0 || self.stride <= 0 || self.stride > self.length {
            return Err(invalid("windows need 0 < stride <= length"));
        }
        Ok(())
    }

    /// Indices of the windows containing time `t`; windows start at time zero.
    pub fn windows_of(&self, t: Seconds) -> std::ops::RangeInclusive<i64> {
        let last = t.div_euclid(self.stride);
        let first = ((t - self.length).div_euclid(self.stride) + 1).max(0);
        first..=last
    }

    pub fn start(&self, w: i64) -> Seconds {
        w * self.stride
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MovementConfig {
    pub similarity: SimilarityParams,
    pub window: WindowSpec,
    pub k: ClusterCount,
    /// Upper bound for the eigengap search; derived from the headway when unset.
    pub k_max: Option<usize>,
    pub nominal_headway: Option<Seconds>,
    pub seed: u64,
    pub k_nn: usize,
    pub agreement: f64,
    pub quantile_floor: f64,
    pub dedup_overlap: f64,
    /// Clusters with fewer journeys are discarded.
    pub min_cluster_size: usize,
    pub envelope: EnvelopeConfig,
    pub reconcile: bool,
    pub max_gap: f64,
    /// Station estimates with fewer visits are re-anchored on a neighbour; 0 disables.
    pub min_support: usize,
    /// Trips observed at fewer stations are dropped after reconciliation.
    pub min_trip_stations: usize,
}

impl Default for MovementConfig {
    fn default() -> Self {
        MovementConfig {
            similarity: SimilarityParams::default(),
            window: WindowSpec::default(),
            k: ClusterCount::Auto,
            k_max: None,
            nominal_headway: None,
            seed: 0,
            k_nn: 10,
            agreement: 0.5,
            quantile_floor: 0.1,
            dedup_overlap: 0.5,
            min_cluster_size: 1,
            envelope: EnvelopeConfig::default(),
            reconcile: true,
            max_gap: 60.0,
            min_support: 0,
            min_trip_stations: 1,
        }
    }
}

impl MovementConfig {
    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.window.validate()?;
        self.envelope.validate()?;
        if !(self.dedup_overlap > 0.0 && self.dedup_overlap <= 1.0) {
            return Err(invalid("dedup_overlap must lie in (0, 1]"));
        }
        if self.nominal_headway.is_some_and(|h| h <= 0) {
            return Err(invalid("nominal_headway must be positive"));
        }
        Ok(())
    }

    pub fn resolved_k_max(&self) -> usize {
        match (self.k_max, self.nominal_headway) {
            (Some(k), _) => k,
            (None, Some(h)) => (2 * self.window.length / h).max(2) as usize,
            (None, None) => DEFAULT_K_MAX,
        }
    }

    fn window_seed(&self, w: i64) -> u64 {
        self.seed ^ (w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Journeys of each window, ordered by (start, device, journey counter).
pub fn window_assignments(journeys: &[Journey], spec: &WindowSpec) -> BTreeMap<i64, Vec<usize>> {
    let mut out: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, j) in journeys.iter().enumerate() {
        if j.stops.is_empty() {
            continue;
        }
        for w in spec.windows_of(j.start()) {
            out.entry(w).or_default().push(i);
        }
    }
    for list in out.values_mut() {
        list.sort_by(|&a, &b| {
            let (x, y) = (&journeys[a], &journeys[b]);
            (x.start(), &x.device, x.journey_seq).cmp(&(y.start(), &y.device, y.journey_seq))
        });
    }
    out
}

/// Clusters one window's journeys; returns positions into `journeys`.
pub fn cluster_window(
    journeys: &[Journey],
    cfg: &MovementConfig,
    window: i64,
) -> Result<Vec<Vec<usize>>> {
    if journeys.is_empty() {
        return Ok(Vec::new());
    }
    let graph = build_graph(journeys, &cfg.similarity)?;
    if graph.edge_count() == 0 {
        return Ok(Vec::new());
    }
    let labeling = spectral_cluster(&graph, cfg.k, cfg.resolved_k_max(), cfg.window_seed(window))?;
    let labeling = prune_knn_outliers(&graph, &labeling, cfg.k_nn, cfg.agreement)?;
    let labeling = prune_similarity_outliers(&graph, &labeling, cfg.quantile_floor)?;
    Ok(labeling
        .clusters()
        .into_iter()
        .filter(|c| c.len() >= cfg.min_cluster_size.max(1))
        .collect())
}

/// Keeps one cluster per group of clusters that share at least
/// `min_overlap` of the smaller one's members, preferring the larger.
/// Clusters are decided in the order offered.
#[derive(Clone, Debug, Default)]
pub struct ClusterDeduper {
    min_overlap: f64,
    kept: Vec<Option<Vec<JourneyKey>>>,
    index: HashMap<JourneyKey, Vec<usize>>,
}

impl ClusterDeduper {
    pub fn new(min_overlap: f64) -> Self {
        ClusterDeduper {
            min_overlap,
            ..Default::default()
        }
    }

    pub fn offer(&mut self, mut cluster: Vec<JourneyKey>) {
        cluster.sort();
        cluster.dedup();
        if cluster.is_empty() {
            return;
        }
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for key in &cluster {
            for &c in self.index.get(key).into_iter().flatten() {
                *shared.entry(c).or_default() += 1;
            }
        }
        let conflicts: Vec<usize> = shared
            .into_iter()
            .filter(|&(c, n)| {
                let other = self.kept[c].as_ref().map_or(0, Vec::len);
                n as f64 >= self.min_overlap * other.min(cluster.len()) as f64
            })
            .map(|e| e.0)
            .collect();
        if conflicts
            .iter()
            .any(|&c| self.kept[c].as_ref().map_or(0, Vec::len) >= cluster.len())
        {
            return;
        }
        for c in conflicts {
            for key in self.kept[c].take().unwrap_or_default() {
                if let Some(v) = self.index.get_mut(&key) {
                    v.retain(|&x| x != c);
                }
            }
        }
        let id = self.kept.len();
        for key in &cluster {
            self.index.entry(key.clone()).or_default().push(id);
        }
        self.kept.push(Some(cluster));
    }

    /// Surviving clusters in the order they were accepted.
    pub fn clusters(&self) -> Vec<Vec<JourneyKey>> {
        self.kept.iter().flatten().cloned().collect()
    }
}

/// Envelopes of the given clusters, with fragments reconciled when enabled.
pub fn assemble_timetable(
    clusters: &[Vec<usize>],
    journeys: &[Journey],
    topology: &LineTopology,
    cfg: &MovementConfig,
) -> EstimatedTimetable {
    let trips = clusters
        .iter()
        .map(|members| {
            let mut t = TripVisits::default();
            for &i in members {
                t.add_journey(i, &journeys[i], topology);
            }
            t
        })
        .collect();
    let tt = build_timetable(trips, topology, &cfg.envelope);
    let mut trips = if cfg.reconcile && tt.trips.len() >= 2 {
        let stats = TravelTimeStats::from_trips(&tt.trips, topology);
        let mut trips = reconcile_fragments(tt.trips, &stats, cfg.max_gap);
        if cfg.min_support > 1 {
            anchor_sparse_stations(&mut trips, &stats, cfg.min_support);
        }
        trips
    } else {
        tt.trips
    };
    trips.retain(|t| t.envelope.len() >= cfg.min_trip_stations);
    EstimatedTimetable::from_trips(trips, topology)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralRun {
    pub timetable: EstimatedTimetable,
    /// Deduplicated clusters as journey indices.
    pub clusters: Vec<Vec<usize>>,
    pub windows: usize,
}

/// Clusters of one window as journey keys; `idx` lists the window's
/// journeys in window order.
pub fn window_clusters(
    journeys: &[Journey],
    idx: &[usize],
    cfg: &MovementConfig,
    window: i64,
) -> Result<Vec<Vec<JourneyKey>>> {
    let local: Vec<Journey> = idx.iter().map(|&i| journeys[i].clone()).collect();
    Ok(cluster_window(&local, cfg, window)?
        .into_iter()
        .map(|c| c.into_iter().map(|p| journeys[idx[p]].key()).collect())
        .collect())
}

/// Deduplicates per-window clusters, offered in window order, and builds
/// the timetable. Every key must name one of `journeys`.
pub fn combine_windows<'a, I>(
    per_window: I,
    journeys: &[Journey],
    topology: &LineTopology,
    cfg: &MovementConfig,
) -> (Vec<Vec<usize>>, EstimatedTimetable)
where
    I: IntoIterator<Item = &'a Vec<Vec<JourneyKey>>>,
{
    let mut dedup = ClusterDeduper::new(cfg.dedup_overlap);
    for clusters in per_window {
        for c in clusters {
            dedup.offer(c.clone());
        }
    }
    let lookup: HashMap<JourneyKey, usize> = journeys
        .iter()
        .enumerate()
        .map(|(i, j)| (j.key(), i))
        .collect();
    let clusters: Vec<Vec<usize>> = dedup
        .clusters()
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.iter().map(|k| lookup[k]).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let timetable = assemble_timetable(&clusters, journeys, topology, cfg);
    (clusters, timetable)
}

/// Windowed spectral movement inference over one line and direction.
pub fn run_spectral(
    journeys: &[Journey],
    topology: &LineTopology,
    cfg: &MovementConfig,
) -> Result<SpectralRun> {
    cfg.validate()?;
    let windows: Vec<(i64, Vec<usize>)> = window_assignments(journeys, &cfg.window)
        .into_iter()
        .collect();
    let per_window: Vec<Vec<Vec<JourneyKey>>> = windows
        .par_iter()
        .map(|(w, idx)| window_clusters(journeys, idx, cfg, *w))
        .collect::<Result<_>>()?;
    let (clusters, timetable) = combine_windows(&per_window, journeys, topology, cfg);
    Ok(SpectralRun {
        timetable,
        clusters,
        windows: windows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(d: &str) -> JourneyKey {
        JourneyKey {
            device: crate::trace::DeviceId::new(d),
            seq: 0,
        }
    }

    #[test]
    fn windows_of_time() {
        let w = WindowSpec::default();
        assert_eq!(w.windows_of(0), 0..=0);
        assert_eq!(w.windows_of(1800), 0..=1);
        assert_eq!(w.windows_of(3599), 0..=1);
        assert_eq!(w.windows_of(3600), 1..=2);
    }

    #[test]
    fn dedup_keeps_larger_cluster() {
        let mut d = ClusterDeduper::new(0.5);
        d.offer(vec![key("a"), key("b")]);
        d.offer(vec![key("a"), key("b"), key("c")]);
        d.offer(vec![key("c"), key("x")]);
        d.offer(vec![key("y")]);
        assert_eq!(
            d.clusters(),
            vec![vec![key("a"), key("b"), key("c")], vec![key("y")]]
        );
    }

    #[test]
    fn k_max_from_headway() {
        let cfg = MovementConfig {
            nominal_headway: Some(180),
            ..Default::default()
        };
        assert_eq!(cfg.resolved_k_max(), 40);
        assert_eq!(MovementConfig::default().resolved_k_max(), DEFAULT_K_MAX);
    }
}
