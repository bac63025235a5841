use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trace::{LineTopology, Seconds, StationId, TrainId};

/// One train's call at one station.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimetableEntry {
    pub train: TrainId,
    pub station: StationId,
    pub arrive: Seconds,
    pub depart: Seconds,
}

/// Calls of one train, in line order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRun {
    pub train: TrainId,
    /// `(station, arrive, depart)` along the line.
    pub calls: Vec<(StationId, Seconds, Seconds)>,
}

impl TrainRun {
    pub fn call(&self, station: StationId) -> Option<(Seconds, Seconds)> {
        self.calls
            .iter()
            .find(|c| c.0 == station)
            .map(|c| (c.1, c.2))
    }
}

/// True train movements, trains in dispatch order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthTimetable {
    pub trains: Vec<TrainRun>,
}

impl GroundTruthTimetable {
    pub fn is_empty(&self) -> bool {
        self.trains.is_empty()
    }

    pub fn entries(&self) -> Vec<TimetableEntry> {
        self.trains
            .iter()
            .flat_map(|t| {
                t.calls
                    .iter()
                    .map(move |&(station, arrive, depart)| TimetableEntry {
                        train: t.train.clone(),
                        station,
                        arrive,
                        depart,
                    })
            })
            .collect()
    }

    pub fn train(&self, id: &TrainId) -> Option<&TrainRun> {
        self.trains.iter().find(|t| &t.train == id)
    }

    /// Calls at `station` as `(train index, arrive, depart)`, sorted by arrival.
    pub fn at_station(&self, station: StationId) -> Vec<(usize, Seconds, Seconds)> {
        let mut v: Vec<_> = self
            .trains
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.call(station).map(|(a, d)| (i, a, d)))
            .collect();
        v.sort_by_key(|c| (c.1, c.0));
        v
    }

    pub fn arrivals_by_station(&self) -> BTreeMap<StationId, Vec<Seconds>> {
        let mut out: BTreeMap<StationId, Vec<Seconds>> = BTreeMap::new();
        for t in &self.trains {
            for &(s, a, _) in &t.calls {
                out.entry(s).or_default().push(a);
            }
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train", "station", "arrive", "depart"])?;
        for e in self.entries() {
            w.write_record([
                e.train.0,
                e.station.to_string(),
                e.arrive.to_string(),
                e.depart.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nominal service pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServicePlan {
    pub headway: Seconds,
    pub dwell: Seconds,
    /// Run time of each segment `i → i+1`; a single value applies to all.
    pub run_time: Vec<Seconds>,
    /// Dispatch window `[start, end)` at the first station.
    pub span: (Seconds, Seconds),
}

impl ServicePlan {
    pub fn run_times(&self, segments: usize) -> Result<Vec<Seconds>> {
        match self.run_time.len() {
            1 => Ok(vec![self.run_time[0]; segments]),
            n if n == segments => Ok(self.run_time.clone()),
            n => Err(invalid(format!(
                "run_time has {n} entries, line has {segments} segments"
            ))),
        }
    }

    /// Time from arrival at the first station to departure from the last.
    pub fn full_run(&self, stations: usize) -> Result<Seconds> {
        let runs = self.run_times(stations.saturating_sub(1))?;
        Ok(self.dwell * stations as Seconds + runs.iter().sum::<Seconds>())
    }
}

pub fn train_label(index: usize) -> TrainId {
    TrainId(format!("T{index:03}"))
}

/// Dispatches a train every `headway` seconds over `span` and propagates
/// dwell and run times down the line.
pub fn generate_timetable(
    topology: &LineTopology,
    plan: &ServicePlan,
) -> Result<GroundTruthTimetable> {
    if plan.headway <= 0 {
        return Err(invalid("headway must be positive"));
    }
    if plan.dwell < 0 {
        return Err(invalid("dwell must be non-negative"));
    }
    let runs = plan.run_times(topology.len() - 1)?;
    if runs.iter().any(|r| *r < 0) {
        return Err(invalid("run times must be non-negative"));
    }
    let (start, end) = plan.span;
    let full = plan.full_run(topology.len())?;
    if end - start < full {
        if end > start {
            warn!(
                "span of {}s is shorter than one full run ({full}s); timetable is empty",
                end - start
            );
        }
        return Ok(GroundTruthTimetable::default());
    }
    let mut trains = Vec::new();
    let mut t = start;
    while t < end {
        let mut calls = Vec::with_capacity(topology.len());
        let mut arrive = t;
        for (i, &s) in topology.stations.iter().enumerate() {
            let depart = arrive + plan.dwell;
            calls.push((s, arrive, depart));
            if i < runs.len() {
                arrive = depart + runs[i];
            }
        }
        trains.push(TrainRun {
            train: train_label(trains.len()),
            calls,
        });
        t += plan.headway;
    }
    Ok(GroundTruthTimetable { trains })
}

/// A platform blockage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub station: StationId,
    pub start: Seconds,
    pub hold: Seconds,
    #[serde(default = "one")]
    pub recovery_factor: f64,
    /// Minimum time between one train leaving a platform and the next
    /// arriving at it.
    #[serde(default = "default_clearance")]
    pub clearance: Seconds,
}

fn one() -> f64 {
    1.0
}

fn default_clearance() -> Seconds {
    30
}

/// Replays `timetable` with trains reaching `incident.station` during the
/// hold kept there until it ends.
///
/// Trains are processed in dispatch order. A platform is occupied from
/// arrival to departure and the next train may only arrive `clearance`
/// seconds after the previous one left; a train that would arrive earlier is
/// held at the preceding station, which backs the queue up the line. Held
/// trains are released in order. Delayed trains after the hold depart the
/// incident station at least `min(headway, recovery_factor × (clearance +
/// dwell))` after their predecessor until they are back on schedule.
pub fn inject_incident(
    timetable: &GroundTruthTimetable,
    topology: &LineTopology,
    incident: &Incident,
) -> Result<GroundTruthTimetable> {
    let pos = topology
        .position(incident.station)
        .ok_or(Error::UnknownStation(incident.station))?;
    if incident.hold <= 0 {
        return Err(invalid("incident hold must be positive"));
    }
    if !(incident.recovery_factor >= 1.0) {
        return Err(invalid("recovery_factor must be at least 1"));
    }
    if incident.clearance < 0 {
        return Err(invalid("clearance must be non-negative"));
    }
    let release = incident.start + incident.hold;
    let headway = nominal_headway(timetable);

    let mut out: Vec<TrainRun> = Vec::with_capacity(timetable.trains.len());
    for run in &timetable.trains {
        let n = run.calls.len();
        let mut arr = vec![0; n];
        let mut dep = vec![0; n];
        let prev = out.last();
        for s in 0..n {
            let (_, n_arr, n_dep) = run.calls[s];
            let dwell = n_dep - n_arr;
            arr[s] = if s == 0 {
                n_arr
            } else {
                let run_time = n_arr - run.calls[s - 1].2;
                dep[s - 1] + run_time
            };
            if let Some(p) = prev {
                let need = p.calls[s].2 + incident.clearance;
                if arr[s] < need {
                    if s > 0 {
                        dep[s - 1] += need - arr[s];
                    }
                    arr[s] = need;
                }
            }
            dep[s] = arr[s] + dwell;
            if s == pos {
                if arr[s] >= incident.start && arr[s] <= release {
                    dep[s] = dep[s].max(release);
                } else if let Some(p) = prev {
                    let delayed = arr[s] > n_arr;
                    if delayed && arr[s] > release {
                        let sep = ((incident.clearance + dwell) as f64 * incident.recovery_factor)
                            .round() as Seconds;
                        dep[s] = dep[s].max(p.calls[s].2 + sep.min(headway));
                    }
                }
            }
        }
        let calls = run
            .calls
            .iter()
            .enumerate()
            .map(|(s, c)| (c.0, arr[s], dep[s]))
            .collect();
        out.push(TrainRun {
            train: run.train.clone(),
            calls,
        });
    }
    Ok(GroundTruthTimetable { trains: out })
}

fn nominal_headway(t: &GroundTruthTimetable) -> Seconds {
    let mut gaps: Vec<Seconds> = t
        .trains
        .windows(2)
        .map(|w| w[1].calls[0].1 - w[0].calls[0].1)
        .collect();
    if gaps.is_empty() {
        return Seconds::MAX;
    }
    gaps.sort_unstable();
    gaps[gaps.len() / 2]
}
