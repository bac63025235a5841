use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_report, ClassificationReport};
use super::movement::run_journeys;
use super::scenarios::{dsg_lines, simulation_movement_config};
use crate::clustering::{run_spectral, EstimatedTimetable, MovementConfig};
use crate::dsg::{
    device_counts, estimate_scaling, extract_all_features, train_hierarchy, window_dsg_percentage,
    DepartureFeatures, FeatureConfig, LabeledSample, ModelHierarchy, ModelLevel, SampleKey,
    ScalingTable, TrainConfig, WindowEvent, DEFAULT_ALPHA, DSG_WINDOW, SCALING_BIN,
};
use crate::dsg::{BinCount, Prediction, WindowDsg};
use crate::error::{invalid, Result};
use crate::sim::{DsgWindowLabel, ScenarioConfig, SimulationRun};
use crate::trace::{Journey, LineTopology, Seconds, DEFAULT_GAP_THRESHOLD};

/// A simulated line with its vectorized journeys.
pub type SimulatedLine = (SimulationRun, Vec<Journey>);

/// Several lines simulated over several days; models are trained on some
/// days and tested on the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DsgExperiment {
    pub lines: Vec<ScenarioConfig>,
    pub movement: MovementConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub train_days: Vec<u64>,
    pub test_days: Vec<u64>,
    /// Largest gap between an estimated and a true departure for labeling.
    pub match_window: f64,
    pub gap_threshold: Seconds,
    pub alpha: f64,
}

impl Default for DsgExperiment {
    fn default() -> Self {
        DsgExperiment {
            lines: dsg_lines(),
            movement: simulation_movement_config(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            train_days: (0..4).collect(),
            test_days: (100..103).collect(),
            match_window: 60.0,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// An estimated departure with its features and, when it matches a true
/// departure, the truth: (left anyone behind, impacted commuters missed two
/// or more trains on average).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureRecord {
    pub key: SampleKey,
    pub departure: DepartureFeatures,
    pub truth: Option<(bool, bool)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayData {
    pub day: u64,
    pub departures: Vec<DepartureRecord>,
    pub windows: Vec<(SampleKey, DsgWindowLabel)>,
}

impl DayData {
    pub fn samples(&self) -> Vec<LabeledSample> {
        self.departures
            .iter()
            .filter_map(|d| {
                let (dsg, severe) = d.truth?;
                Some(LabeledSample {
                    key: d.key.clone(),
                    features: d.departure.features,
                    dsg,
                    severe,
                })
            })
            .collect()
    }
}

fn line_seed(day: u64, line: usize) -> u64 {
    day.wrapping_mul(1_000_003).wrapping_add(line as u64)
}

/// Keeps each device with probability `keep`. The draw per device is fixed
/// by `seed`, so lower levels are subsets of higher ones.
pub fn downsample_devices(journeys: &[Journey], keep: f64, seed: u64) -> Vec<Journey> {
    if keep >= 1.0 {
        return journeys.to_vec();
    }
    let devices: BTreeSet<_> = journeys.iter().map(|j| &j.device).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept: BTreeSet<_> = devices
        .into_iter()
        .filter(|_| rng.random::<f64>() < keep)
        .collect();
    journeys
        .iter()
        .filter(|j| kept.contains(&j.device))
        .cloned()
        .collect()
}

/// Departure features of one line with counts scaled against `gate`.
pub fn line_features(
    journeys: &[Journey],
    timetable: &EstimatedTimetable,
    gate: &[BinCount],
    features: &FeatureConfig,
    alpha: f64,
) -> Result<Vec<DepartureFeatures>> {
    let est = estimate_scaling(gate, &device_counts(journeys, SCALING_BIN), alpha)?;
    let scaling = ScalingTable::from_factors(&est.factors, SCALING_BIN, alpha);
    Ok(extract_all_features(
        journeys, timetable, &scaling, features,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedDeparture {
    pub departure: DepartureFeatures,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinePrediction {
    pub departures: Vec<PredictedDeparture>,
    /// Estimated DSG percentage per 30-minute window.
    pub windows: Vec<WindowDsg>,
}

fn window_event(key: &SampleKey, d: &DepartureFeatures, flagged: bool) -> WindowEvent {
    WindowEvent {
        key: key.clone(),
        time: d.depart,
        intending: d.first_waiting as f64,
        left_behind: if flagged { d.first_missed as f64 } else { 0.0 },
    }
}

/// Scores every estimated departure of one observed line with the full
/// hierarchy and estimates the DSG percentage of each window.
pub fn predict_line(
    journeys: &[Journey],
    topology: &LineTopology,
    timetable: &EstimatedTimetable,
    gate: &[BinCount],
    model: &ModelHierarchy,
    features: &FeatureConfig,
    alpha: f64,
) -> Result<LinePrediction> {
    let mut departures = Vec::new();
    let mut events = Vec::new();
    for d in line_features(journeys, timetable, gate, features, alpha)? {
        let key = SampleKey {
            line: topology.line_id.clone(),
            station: d.station,
        };
        let prediction = model.predict(&d.features, &key);
        events.push(window_event(&key, &d, prediction.dsg));
        departures.push(PredictedDeparture {
            departure: d,
            prediction,
        });
    }
    Ok(LinePrediction {
        departures,
        windows: window_dsg_percentage(&events, DSG_WINDOW),
    })
}

/// Features and truth for one simulated line on one day, observing a
/// `keep` fraction of devices.
pub fn line_day(
    exp: &DsgExperiment,
    run: &SimulationRun,
    journeys: &[Journey],
    seed: u64,
) -> Result<DayData> {
    let line = run.topology.line_id.clone();
    let timetable = if journeys.is_empty() {
        EstimatedTimetable::default()
    } else {
        run_spectral(
            journeys,
            &run.topology,
            &MovementConfig {
                seed,
                ..exp.movement.clone()
            },
        )?
        .timetable
    };
    let feats = line_features(
        journeys,
        &timetable,
        &run.outcome.gate_counts(SCALING_BIN),
        &exp.features,
        exp.alpha,
    )?;

    let mut truth: BTreeMap<_, Vec<(f64, bool, bool)>> = BTreeMap::new();
    for ev in &run.outcome.departures {
        truth.entry(ev.station).or_default().push((
            ev.depart as f64,
            ev.left_behind > 0,
            ev.left_behind > 0 && ev.mean_missed_of_left_behind >= 2.0,
        ));
    }
    let departures = feats
        .into_iter()
        .map(|d| {
            let t = truth.get(&d.station).and_then(|v| {
                v.iter()
                    .map(|&(t, a, b)| ((t - d.depart).abs(), a, b))
                    .filter(|x| x.0 <= exp.match_window)
                    .min_by(|x, y| x.0.total_cmp(&y.0))
                    .map(|x| (x.1, x.2))
            });
            DepartureRecord {
                key: SampleKey {
                    line: line.clone(),
                    station: d.station,
                },
                departure: d,
                truth: t,
            }
        })
        .collect();
    let windows = run
        .outcome
        .windows
        .iter()
        .map(|w| {
            (
                SampleKey {
                    line: line.clone(),
                    station: w.station,
                },
                w.clone(),
            )
        })
        .collect();
    Ok(DayData {
        day: seed,
        departures,
        windows,
    })
}

/// Simulates every line for `day`.
pub fn simulate_day(exp: &DsgExperiment, day: u64) -> Result<Vec<SimulatedLine>> {
    exp.lines
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let run = sc.run(line_seed(day, i))?;
            let journeys = run_journeys(&run, exp.gap_threshold)?;
            Ok((run, journeys))
        })
        .collect()
}

/// Day data from already simulated lines, observing a `keep` fraction of devices.
pub fn observe_day(
    exp: &DsgExperiment,
    day: u64,
    runs: &[SimulatedLine],
    keep: f64,
) -> Result<DayData> {
    let mut out = DayData {
        day,
        ..DayData::default()
    };
    for (i, (run, journeys)) in runs.iter().enumerate() {
        let seed = line_seed(day, i);
        let j = downsample_devices(journeys, keep, seed ^ 0xD0_5A_4D);
        let d = line_day(exp, run, &j, seed)?;
        out.departures.extend(d.departures);
        out.windows.extend(d.windows);
    }
    Ok(out)
}

fn days(exp: &DsgExperiment, ids: &[u64]) -> Result<Vec<DayData>> {
    ids.par_iter()
        .map(|&d| observe_day(exp, d, &simulate_day(exp, d)?, 1.0))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub key: SampleKey,
    pub window_start: Seconds,
    pub truth: bool,
    pub predicted: bool,
    pub true_pct: f64,
    pub est_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub report: ClassificationReport,
    pub windows: Vec<WindowScore>,
    /// Mean absolute DSG percentage error per `line/station`.
    pub station_mae: BTreeMap<String, f64>,
    pub median_mae: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Scores 30-minute windows: a window is flagged when any departure in it
/// is; its estimated percentage counts commuters seen missing the first
/// train they waited for, at flagged departures only.
pub fn score_windows(
    h: &ModelHierarchy,
    days: &[DayData],
    level: ModelLevel,
) -> Result<LevelScore> {
    let mut windows = Vec::new();
    for day in days {
        let mut flagged: BTreeSet<(SampleKey, Seconds)> = BTreeSet::new();
        let mut events = Vec::new();
        for d in &day.departures {
            let p = h.predict_at(&d.departure.features, &d.key, level);
            let w = (d.departure.depart / DSG_WINDOW as f64).floor() as Seconds * DSG_WINDOW;
            if p.dsg {
                flagged.insert((d.key.clone(), w));
            }
            events.push(window_event(&d.key, &d.departure, p.dsg));
        }
        let est: BTreeMap<(SampleKey, Seconds), f64> = window_dsg_percentage(&events, DSG_WINDOW)
            .into_iter()
            .map(|w| ((w.key, w.window_start), w.pct))
            .collect();
        for (key, label) in &day.windows {
            let k = (key.clone(), label.window_start);
            windows.push(WindowScore {
                key: key.clone(),
                window_start: label.window_start,
                truth: label.positive,
                predicted: flagged.contains(&k),
                true_pct: label.dsg_pct,
                est_pct: est.get(&k).copied().unwrap_or(0.0),
            });
        }
    }
    let pred: Vec<bool> = windows.iter().map(|w| w.predicted).collect();
    let truth: Vec<bool> = windows.iter().map(|w| w.truth).collect();
    let report = classification_report(&pred, &truth)?;
    let mut errs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for w in &windows {
        errs.entry(format!("{}/{}", w.key.line, w.key.station))
            .or_default()
            .push((w.est_pct - w.true_pct).abs());
    }
    let station_mae: BTreeMap<String, f64> = errs
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let median_mae = median(station_mae.values().copied().collect());
    Ok(LevelScore {
        report,
        windows,
        station_mae,
        median_mae,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsgReport {
    pub train_samples: usize,
    pub train_positives: usize,
    pub station_models: usize,
    pub line_models: usize,
    pub selected_features: Vec<String>,
    pub network: LevelScore,
    pub line: LevelScore,
    pub station: LevelScore,
}

pub fn train_on_days(exp: &DsgExperiment, train: &[DayData]) -> Result<ModelHierarchy> {
    let samples: Vec<LabeledSample> = train.iter().flat_map(|d| d.samples()).collect();
    train_hierarchy(&samples, &exp.train)
}

/// Trains on the training days and scores every hierarchy level on the
/// test days.
pub fn run_dsg_experiment(exp: &DsgExperiment) -> Result<(ModelHierarchy, DsgReport)> {
    if exp.lines.is_empty() || exp.train_days.is_empty() || exp.test_days.is_empty() {
        return Err(invalid(
            "the experiment needs lines, training days and test days",
        ));
    }
    let train = days(exp, &exp.train_days)?;
    let test = days(exp, &exp.test_days)?;
    let h = train_on_days(exp, &train)?;
    let report = DsgReport {
        train_samples: h.metadata.samples,
        train_positives: h.metadata.positives,
        station_models: h.stations.len(),
        line_models: h.lines.len(),
        selected_features: h.metadata.selected_features.clone(),
        network: score_windows(&h, &test, ModelLevel::Network)?,
        line: score_windows(&h, &test, ModelLevel::Line)?,
        station: score_windows(&h, &test, ModelLevel::Station)?,
    };
    Ok((h, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub sampling: f64,
    pub departures: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Trains once on full data, then tests on the test days observed through
/// device down-sampling at every `step` fraction from 0 to 1.
pub fn run_robustness_sweep(
    exp: &DsgExperiment,
    step: f64,
) -> Result<(ModelHierarchy, Vec<RobustnessPoint>)> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(invalid("step must lie in (0, 1]"));
    }
    let train = days(exp, &exp.train_days)?;
    let h = train_on_days(exp, &train)?;
    let sims: Vec<(u64, Vec<SimulatedLine>)> = exp
        .test_days
        .par_iter()
        .map(|&d| Ok((d, simulate_day(exp, d)?)))
        .collect::<Result<_>>()?;
    let levels: Vec<f64> = (0..=(1.0 / step).round() as usize)
        .map(|i| (i as f64 * step).min(1.0))
        .collect();
    let points = levels
        .par_iter()
        .map(|&keep| {
            let test: Vec<DayData> = sims
                .iter()
                .map(|(d, runs)| observe_day(exp, *d, runs, keep))
                .collect::<Result<_>>()?;
            let s = score_windows(&h, &test, ModelLevel::Station)?;
            Ok(RobustnessPoint {
                sampling: keep,
                departures: test.iter().map(|d| d.departures.len()).sum(),
                precision: s.report.precision,
                recall: s.report.recall,
                f1: s.report.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((h, points))
}

pub fn write_robustness_csv<W: std::io::Write>(
    writer: W,
    points: &[RobustnessPoint],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sampling", "departures", "precision", "recall", "f1"])?;
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    for p in points {
        w.write_record([
            format!("{:.2}", p.sampling),
            p.departures.to_string(),
            f(p.precision),
            f(p.recall),
            f(p.f1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
