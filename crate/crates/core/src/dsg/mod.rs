//! Demand-supply-gap estimation.
//!
//! Connected-device counts are scaled to passenger counts with per-bin
//! ratios against fare-gate entries. Each estimated departure yields a
//! feature vector (scaled waiting and missed counts, wait-time spread,
//! headway) scored by a hierarchy of bootstrapped logistic models.

mod features;
mod hierarchy;
mod logistic;
mod scaling;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use features::{
    departures_by_station, extract_all_features, extract_features, origin_waits,
    write_features_csv, DepartureFeatures, DsgFeatures, FeatureConfig, PlatformWait, FEATURE_COUNT,
    FEATURE_NAMES,
};
pub use hierarchy::{
    train_hierarchy, DsgModel, LabeledSample, ModelHierarchy, ModelLevel, Prediction, SampleKey,
    Severity, StationModel, TrainingMetadata,
};
pub use logistic::{
    cross_val_probs, cv_f1, default_grid, f1_at, fit_preprocessing, forward_select,
    grid_search_cutoff, normalize, predict_proba, sigmoid, stratified_folds, train_logistic,
    winsor_cap, winsorize, LogisticProblem, Normalization, TrainConfig,
};
pub use scaling::{
    device_counts, estimate_scaling, read_gate_csv, time_bin, write_gate_csv, BinCount,
    ScalingEstimate, ScalingFactor, ScalingTable, DEFAULT_ALPHA, SCALING_BIN,
};

pub use crate::sim::DSG_WINDOW;
use crate::trace::Seconds;

/// One departure's contribution to its window: commuters intending to board
/// and those left behind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEvent {
    pub key: SampleKey,
    pub time: f64,
    pub intending: f64,
    pub left_behind: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDsg {
    pub key: SampleKey,
    pub window_start: Seconds,
    pub intending: f64,
    pub left_behind: f64,
    pub pct: f64,
}

/// Left-behind share per key and window, in percent. Windows nobody
/// intended to board in are skipped.
pub fn window_dsg_percentage(events: &[WindowEvent], width: Seconds) -> Vec<WindowDsg> {
    let mut acc: BTreeMap<(SampleKey, Seconds), (f64, f64)> = BTreeMap::new();
    for e in events {
        let w = (e.time / width as f64).floor() as Seconds * width;
        let a = acc.entry((e.key.clone(), w)).or_default();
        a.0 += e.intending;
        a.1 += e.left_behind;
    }
    acc.into_iter()
        .filter(|(_, (i, _))| *i > 0.0)
        .map(
            |((key, window_start), (intending, left_behind))| WindowDsg {
                key,
                window_start,
                intending,
                left_behind,
                pct: (100.0 * left_behind / intending).clamp(0.0, 100.0),
            },
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::StationId;

    fn ev(s: u32, t: f64, i: f64, l: f64) -> WindowEvent {
        WindowEvent {
            key: SampleKey {
                line: "L".into(),
                station: StationId(s),
            },
            time: t,
            intending: i,
            left_behind: l,
        }
    }

    #[test]
    fn percentages() {
        let out = window_dsg_percentage(
            &[
                ev(0, 10.0, 60.0, 15.0),
                ev(0, 900.0, 40.0, 5.0),
                ev(0, 1800.0, 30.0, 0.0),
            ],
            1800,
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].pct, 20.0);
        assert_eq!(out[1].pct, 0.0);
        assert_eq!(out[1].window_start, 1800);
    }

    #[test]
    fn empty_windows_skipped() {
        assert!(
            window_dsg_percentage(&[ev(0, 10.0, 0.0, 0.0), ev(1, 10.0, 0.0, 0.0)], 1800).is_empty()
        );
    }
}
