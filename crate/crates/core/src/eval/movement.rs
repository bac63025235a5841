use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{adjusted_rand_index, match_arrivals, rmse_minutes};
use super::scenarios::clean_scenario;
use crate::clustering::{
    run_baseline, run_spectral, BaselineConfig, EstimatedTimetable, MovementConfig,
};
use crate::error::Result;
use crate::sim::{GroundTruthTimetable, ScenarioConfig, SimulationRun};
use crate::trace::{vectorize_journeys, Journey, Seconds, StationId, DEFAULT_GAP_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MovementExperiment {
    pub scenario: ScenarioConfig,
    pub movement: MovementConfig,
    pub baseline: BaselineConfig,
    /// Hit threshold and matching window, seconds.
    pub hit_window: f64,
    /// Only true arrivals in `[start, end)` are scored; all when unset.
    pub eval_period: Option<(Seconds, Seconds)>,
    pub gap_threshold: Seconds,
}

impl Default for MovementExperiment {
    fn default() -> Self {
        MovementExperiment {
            scenario: clean_scenario(),
            movement: MovementConfig::default(),
            baseline: BaselineConfig::default(),
            hit_window: 60.0,
            eval_period: None,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StationScore {
    pub truths: usize,
    pub estimates: usize,
    pub matched: usize,
    pub hit_rate: Option<f64>,
    pub rmse_min: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub trains_estimated: usize,
    pub hit_rate: Option<f64>,
    pub rmse_min: Option<f64>,
    pub per_station: BTreeMap<StationId, StationScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub journeys: usize,
    pub true_trains: usize,
    pub spectral: MethodScore,
    pub baseline: MethodScore,
    /// Agreement of the spectral clusters with the boarded train, over clustered journeys.
    pub spectral_ari: Option<f64>,
}

/// Scores `est` against the true arrivals at every station.
pub fn score_timetable(
    est: &EstimatedTimetable,
    truth: &GroundTruthTimetable,
    window: f64,
    period: Option<(Seconds, Seconds)>,
) -> MethodScore {
    let (lo, hi) = period.unwrap_or((Seconds::MIN, Seconds::MAX));
    let mut per_station = BTreeMap::new();
    let mut all_pairs = Vec::new();
    let (mut matched, mut truths) = (0usize, 0usize);
    for (station, arrivals) in truth.arrivals_by_station() {
        let t: Vec<f64> = arrivals
            .iter()
            .filter(|&&a| a >= lo && a < hi)
            .map(|&a| a as f64)
            .collect();
        let e: Vec<f64> = est
            .arrivals_at(station)
            .into_iter()
            .filter(|&a| a >= lo as f64 - window && a < hi as f64 + window)
            .collect();
        let m = match_arrivals(&e, &t, window);
        let score = StationScore {
            truths: t.len(),
            estimates: e.len(),
            matched: m.pairs.len(),
            hit_rate: (!t.is_empty()).then(|| m.pairs.len() as f64 / t.len() as f64),
            rmse_min: rmse_minutes(&m.pairs),
        };
        matched += m.pairs.len();
        truths += t.len();
        all_pairs.extend(m.pairs);
        per_station.insert(station, score);
    }
    MethodScore {
        trains_estimated: est.len(),
        hit_rate: (truths > 0).then(|| matched as f64 / truths as f64),
        rmse_min: rmse_minutes(&all_pairs),
        per_station,
    }
}

/// Journeys of a simulation run.
pub fn run_journeys(run: &SimulationRun, gap_threshold: Seconds) -> Result<Vec<Journey>> {
    Ok(vectorize_journeys(
        run.observation.records.iter().cloned(),
        &run.topology,
        gap_threshold,
    )?
    .journeys)
}

/// Simulates one seed and scores both clustering paths on the same trace.
pub fn run_movement_experiment(exp: &MovementExperiment, seed: u64) -> Result<EvalReport> {
    let run = exp.scenario.run(seed)?;
    let journeys = run_journeys(&run, exp.gap_threshold)?;
    let movement = MovementConfig {
        seed,
        ..exp.movement.clone()
    };
    let spectral = run_spectral(&journeys, &run.topology, &movement)?;
    let baseline = run_baseline(&journeys, &run.topology, &exp.baseline)?;

    let mut est_labels = Vec::new();
    let mut true_labels = Vec::new();
    let mut seen = vec![false; journeys.len()];
    for (c, members) in spectral.clusters.iter().enumerate() {
        for &i in members {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            if let Some(t) = run.journey_train(&journeys[i]) {
                est_labels.push(c);
                true_labels.push(t.clone());
            }
        }
    }
    let spectral_ari = if est_labels.is_empty() {
        None
    } else {
        Some(adjusted_rand_index(&est_labels, &true_labels)?)
    };

    Ok(EvalReport {
        seed,
        journeys: journeys.len(),
        true_trains: run.timetable.trains.len(),
        spectral: score_timetable(
            &spectral.timetable,
            &run.timetable,
            exp.hit_window,
            exp.eval_period,
        ),
        baseline: score_timetable(&baseline, &run.timetable, exp.hit_window, exp.eval_period),
        spectral_ari,
    })
}
