use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scaling::ScalingTable;
use crate::clustering::EstimatedTimetable;
use crate::error::Result;
use crate::trace::{Journey, StationId};

pub const FEATURE_COUNT: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "waiting_count",
    "missed_count",
    "wait_q3",
    "wait_sd",
    "headway",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DsgFeatures {
    pub waiting_count: f64,
    pub missed_count: f64,
    pub wait_q3: f64,
    pub wait_sd: f64,
    pub headway: f64,
}

impl DsgFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.waiting_count,
            self.missed_count,
            self.wait_q3,
            self.wait_sd,
            self.headway,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        DsgFeatures {
            waiting_count: a[0],
            missed_count: a[1],
            wait_q3: a[2],
            wait_sd: a[3],
            headway: a[4],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// A device still seen this long after a departure missed that train.
    pub grace: f64,
    /// Headway used for a station's first departure.
    pub nominal_headway: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            grace: 60.0,
            nominal_headway: 180.0,
        }
    }
}

/// Features of one departure plus the raw device tallies behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureFeatures {
    pub station: StationId,
    pub depart: f64,
    pub features: DsgFeatures,
    /// The headway came from configuration, not the timetable.
    pub nominal_headway: bool,
    pub waiting_devices: usize,
    pub missed_devices: usize,
    /// Travelling devices for which this was the first departure they waited for.
    pub first_waiting: usize,
    /// Of those, devices still waiting after it.
    pub first_missed: usize,
}

/// A device's stay on a platform before its first ride. `traveling` marks
/// devices later seen at another station, as opposed to lingering ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformWait {
    pub first_seen: i64,
    pub last_seen: i64,
    pub traveling: bool,
}

fn q3_and_sd(waits: &mut [f64]) -> (f64, f64) {
    if waits.is_empty() {
        return (0.0, 0.0);
    }
    waits.sort_by(f64::total_cmp);
    let pos = 0.75 * (waits.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let q3 = waits[lo] + (waits[hi] - waits[lo]) * (pos - lo as f64);
    let mean = waits.iter().sum::<f64>() / waits.len() as f64;
    let var = waits.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / waits.len() as f64;
    (q3, var.sqrt())
}

/// Features for the departure at `depart` given the previous departure and
/// the platform waits (origin visits) seen at the station.
///
/// A device waits for this departure when it was seen no later than the
/// departure and was still present `grace` seconds after the previous one;
/// it missed the train when it is still seen `grace` seconds after this one.
/// Counts cover every device; wait times and first-departure tallies only
/// travelling ones.
pub fn extract_features(
    station: StationId,
    depart: f64,
    prev_depart: Option<f64>,
    waits: &[PlatformWait],
    theta: f64,
    cfg: &FeatureConfig,
) -> DepartureFeatures {
    let mut durations = Vec::new();
    let (mut waiting, mut missed, mut first_waiting, mut first_missed) = (0, 0, 0, 0);
    for v in waits {
        let (first, last) = (v.first_seen as f64, v.last_seen as f64);
        if first > depart || prev_depart.is_some_and(|p| last <= p + cfg.grace) {
            continue;
        }
        waiting += 1;
        let miss = last > depart + cfg.grace;
        missed += miss as usize;
        if !v.traveling {
            continue;
        }
        durations.push(last - first);
        if prev_depart.is_none_or(|p| first > p) {
            first_waiting += 1;
            first_missed += miss as usize;
        }
    }
    let (wait_q3, wait_sd) = q3_and_sd(&mut durations);
    let headway = prev_depart.map_or(cfg.nominal_headway, |p| depart - p);
    DepartureFeatures {
        station,
        depart,
        features: DsgFeatures {
            waiting_count: theta * waiting as f64,
            missed_count: theta * missed as f64,
            wait_q3,
            wait_sd,
            headway: headway.max(0.0),
        },
        nominal_headway: prev_depart.is_none(),
        waiting_devices: waiting,
        missed_devices: missed,
        first_waiting,
        first_missed,
    }
}

/// Platform waits per station: the origin visit of every journey.
pub fn origin_waits(journeys: &[Journey]) -> BTreeMap<StationId, Vec<PlatformWait>> {
    let mut out: BTreeMap<StationId, Vec<PlatformWait>> = BTreeMap::new();
    for j in journeys {
        if let Some(s) = j.first_station() {
            let st = j.stops[&s];
            out.entry(s).or_default().push(PlatformWait {
                first_seen: st.first_seen,
                last_seen: st.last_seen,
                traveling: j.stops.len() > 1,
            });
        }
    }
    out
}

/// Estimated departures per station, sorted.
pub fn departures_by_station(timetable: &EstimatedTimetable) -> BTreeMap<StationId, Vec<f64>> {
    let mut out: BTreeMap<StationId, Vec<f64>> = BTreeMap::new();
    for t in &timetable.trips {
        for (s, e) in &t.envelope {
            out.entry(*s).or_default().push(e.depart_est);
        }
    }
    for v in out.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    out
}

/// Features for every estimated departure, ordered by station then time.
pub fn extract_all_features(
    journeys: &[Journey],
    timetable: &EstimatedTimetable,
    scaling: &ScalingTable,
    cfg: &FeatureConfig,
) -> Vec<DepartureFeatures> {
    let waits = origin_waits(journeys);
    let mut out = Vec::new();
    for (station, deps) in departures_by_station(timetable) {
        let w = waits.get(&station).map_or(&[][..], |v| v.as_slice());
        let mut prev = None;
        for d in deps {
            out.push(extract_features(
                station,
                d,
                prev,
                w,
                scaling.theta(station, d),
                cfg,
            ));
            prev = Some(d);
        }
    }
    out
}

/// Audit dump of departure features.
pub fn write_features_csv<W: Write>(writer: W, rows: &[DepartureFeatures]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["station", "depart"];
    header.extend(FEATURE_NAMES);
    header.extend([
        "nominal_headway",
        "waiting_devices",
        "missed_devices",
        "first_waiting",
        "first_missed",
    ]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.station.0.to_string(), format!("{:.1}", r.depart)];
        rec.extend(r.features.to_array().iter().map(|v| format!("{v:.4}")));
        rec.extend([
            (r.nominal_headway as u8).to_string(),
            r.waiting_devices.to_string(),
            r.missed_devices.to_string(),
            r.first_waiting.to_string(),
            r.first_missed.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
