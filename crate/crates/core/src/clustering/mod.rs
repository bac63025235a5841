//! Train-trip identification.
//!
//! Two paths turn journeys into an [`EstimatedTimetable`]: a per-station
//! baseline that clusters timestamps with DBSCAN and then links clusters
//! across stations by shared devices, and a spectral path that clusters whole
//! journeys on their similarity graph, prunes outliers and reconciles
//! fragments. Both end in the same envelope extraction.

mod baseline;
mod dbscan;
mod envelope;
mod pipeline;
mod prune;
mod reconcile;
mod spectral;

pub use baseline::{
    baseline_reidentify, run_baseline, BaselineConfig, StationClusters, DEFAULT_TOLERANCE,
};
pub use dbscan::dbscan_1d;
pub use envelope::{
    extract_timetable, quantile, ArrivalEvidence, EnvelopeConfig, EstimatedTimetable,
    StationEstimate, TrainTrip, Visit,
};
pub use pipeline::{
    assemble_timetable, cluster_window, combine_windows, run_spectral, window_assignments,
    window_clusters, ClusterDeduper, MovementConfig, SpectralRun, WindowSpec,
};
pub use prune::{prune_knn_outliers, prune_similarity_outliers};
pub use reconcile::{anchor_sparse_stations, reconcile_fragments, TravelTimeStats};
pub use spectral::{
    eigengap_k, normalized_laplacian, spectral_cluster, ClusterCount, DEFAULT_K_MAX,
};

use serde::{Deserialize, Serialize};

/// Per-journey cluster labels; `None` marks an outlier.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    labels: Vec<Option<usize>>,
    k: usize,
}

impl ClusterLabeling {
    /// Builds a labeling from arbitrary label values, renumbering them
    /// `0..k` in order of first appearance.
    pub fn from_raw(raw: &[Option<usize>]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                l.map(|v| {
                    let next = map.len();
                    *map.entry(v).or_insert(next)
                })
            })
            .collect();
        ClusterLabeling {
            labels,
            k: map.len(),
        }
    }

    pub fn all_outliers(n: usize) -> Self {
        ClusterLabeling {
            labels: vec![None; n],
            k: 0,
        }
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Members of each cluster in label order, each sorted ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                out[*l].push(i);
            }
        }
        out
    }

    /// Same clusters with some members moved to outlier; emptied clusters
    /// are dropped and the remaining ones keep their relative order.
    pub(crate) fn without(&self, drop: &[bool]) -> Self {
        let raw: Vec<Option<usize>> = self
            .labels
            .iter()
            .zip(drop)
            .map(|(l, &d)| if d { None } else { *l })
            .collect();
        let mut present = vec![false; self.k];
        for l in raw.iter().flatten() {
            present[*l] = true;
        }
        let mut remap = vec![usize::MAX; self.k];
        let mut next = 0;
        for (l, p) in present.iter().enumerate() {
            if *p {
                remap[l] = next;
                next += 1;
            }
        }
        ClusterLabeling {
            labels: raw.iter().map(|l| l.map(|v| remap[v])).collect(),
            k: next,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_raw_compacts_in_first_appearance_order() {
        let l = ClusterLabeling::from_raw(&[Some(7), None, Some(3), Some(7)]);
        assert_eq!(l.labels(), &[Some(0), None, Some(1), Some(0)]);
        assert_eq!(l.k(), 2);
        assert_eq!(l.clusters(), vec![vec![0, 3], vec![2]]);
    }

    #[test]
    fn without_drops_emptied_clusters() {
        let l = ClusterLabeling::from_raw(&[Some(0), Some(1), Some(2), Some(2)]);
        let p = l.without(&[false, true, false, false]);
        assert_eq!(p.labels(), &[Some(0), None, Some(1), Some(1)]);
        assert_eq!(p.k(), 2);
    }
}
