use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use super::ClusterLabeling;
use crate::error::{invalid, Error, Result};
use crate::trace::{Journey, LineTopology, Seconds, StationId, TrainId};

/// Which first-seen times bound a trip's arrival at a station.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalEvidence {
    /// Lower quantile over every member seen at the station.
    AllMembers,
    /// Lower quantile over members already on board, i.e. seen at an earlier
    /// station of the same journey. Waiting commuters are first seen long
    /// before the train arrives, so at stations with no on-board evidence the
    /// arrival is the departure minus the median dwell of the trip.
    #[default]
    InTrain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    pub q_lo: f64,
    pub q_hi: f64,
    pub arrival: ArrivalEvidence,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            q_lo: 0.1,
            q_hi: 0.9,
            arrival: ArrivalEvidence::InTrain,
        }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q_lo) || !(0.0..=1.0).contains(&self.q_hi) {
            return Err(invalid("envelope quantiles must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One member's presence at one station.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Visit {
    pub first_seen: Seconds,
    pub last_seen: Seconds,
    /// No earlier station of the same journey was observed.
    pub boarding: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationEstimate {
    pub arrive_est: f64,
    pub depart_est: f64,
    pub support: usize,
}

/// A cluster of journeys read as one train run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrip {
    pub train: TrainId,
    /// Journey indices, ascending.
    pub members: Vec<usize>,
    pub envelope: BTreeMap<StationId, StationEstimate>,
}

impl TrainTrip {
    /// Arrival at the station earliest on the line among those supported.
    pub fn first_arrival(&self, topology: &LineTopology) -> f64 {
        self.envelope
            .iter()
            .min_by_key(|(s, _)| topology.position(**s).unwrap_or(usize::MAX))
            .map_or(f64::INFINITY, |(_, e)| e.arrive_est)
    }
}

/// Trips ordered by time plus per-station headways.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatedTimetable {
    pub trips: Vec<TrainTrip>,
    /// Per station, `(arrive_est, gap to the previous arrival)` with every gap positive.
    pub headways: BTreeMap<StationId, Vec<(f64, f64)>>,
}

impl EstimatedTimetable {
    /// Orders `trips` by first arrival, names them and derives headways.
    pub fn from_trips(mut trips: Vec<TrainTrip>, topology: &LineTopology) -> Self {
        trips.sort_by(|a, b| {
            a.first_arrival(topology)
                .total_cmp(&b.first_arrival(topology))
                .then_with(|| a.members.cmp(&b.members))
        });
        for (i, t) in trips.iter_mut().enumerate() {
            t.train = TrainId(format!("E{:03}", i + 1));
        }
        let mut by_station: BTreeMap<StationId, Vec<f64>> = BTreeMap::new();
        for t in &trips {
            for (s, e) in &t.envelope {
                by_station.entry(*s).or_default().push(e.arrive_est);
            }
        }
        let headways = by_station
            .into_iter()
            .map(|(s, mut times)| {
                times.sort_by(f64::total_cmp);
                let h = times
                    .windows(2)
                    .filter(|w| w[1] > w[0])
                    .map(|w| (w[1], w[1] - w[0]))
                    .collect();
                (s, h)
            })
            .collect();
        EstimatedTimetable { trips, headways }
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    /// Sorted estimated arrivals at `station`.
    pub fn arrivals_at(&self, station: StationId) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .trips
            .iter()
            .filter_map(|t| t.envelope.get(&station))
            .map(|e| e.arrive_est)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `train,station,arrive_est,depart_est,support` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train", "station", "arrive_est", "depart_est", "support"])?;
        for t in &self.trips {
            for (s, e) in &t.envelope {
                w.write_record([
                    t.train.0.clone(),
                    s.0.to_string(),
                    format!("{}", e.arrive_est),
                    format!("{}", e.depart_est),
                    e.support.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `station,time,headway_s` rows.
    pub fn write_headways_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["station", "time", "headway_s"])?;
        for (s, series) in &self.headways {
            for (t, h) in series {
                w.write_record([s.0.to_string(), format!("{t}"), format!("{h}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of `values`, which must be non-empty.
pub fn quantile(values: &[Seconds], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] as f64 + (v[hi] - v[lo]) as f64 * (pos - lo as f64)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Visits grouped by station for one trip under construction.
#[derive(Clone, Debug, Default)]
pub(crate) struct TripVisits {
    pub members: Vec<usize>,
    pub visits: BTreeMap<StationId, Vec<Visit>>,
}

impl TripVisits {
    pub fn add_journey(&mut self, idx: usize, journey: &Journey, topology: &LineTopology) {
        self.members.push(idx);
        for s in journey.stops.keys() {
            self.add_visit(journey, *s, topology);
        }
    }

    pub fn add_visit(&mut self, journey: &Journey, station: StationId, topology: &LineTopology) {
        let (Some(t), Some(pos)) = (journey.get(station), topology.position(station)) else {
            return;
        };
        let boarding = !journey
            .stops
            .keys()
            .any(|s| topology.position(*s).is_some_and(|p| p < pos));
        self.visits.entry(station).or_default().push(Visit {
            first_seen: t.first_seen,
            last_seen: t.last_seen,
            boarding,
        });
    }
}

/// Computes envelopes for every trip and assembles the timetable; trips
/// without any station support are dropped.
pub(crate) fn build_timetable(
    trips: Vec<TripVisits>,
    topology: &LineTopology,
    cfg: &EnvelopeConfig,
) -> EstimatedTimetable {
    struct Partial {
        depart: f64,
        arrive_in: Option<f64>,
        arrive_all: f64,
        support: usize,
    }
    let partials: Vec<BTreeMap<StationId, Partial>> = trips
        .iter()
        .map(|t| {
            t.visits
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(s, v)| {
                    let last: Vec<Seconds> = v.iter().map(|x| x.last_seen).collect();
                    let first: Vec<Seconds> = v.iter().map(|x| x.first_seen).collect();
                    let on_board: Vec<Seconds> = v
                        .iter()
                        .filter(|x| !x.boarding)
                        .map(|x| x.first_seen)
                        .collect();
                    let p = Partial {
                        depart: quantile(&last, cfg.q_hi),
                        arrive_in: (!on_board.is_empty()).then(|| quantile(&on_board, cfg.q_lo)),
                        arrive_all: quantile(&first, cfg.q_lo),
                        support: v.len(),
                    };
                    (*s, p)
                })
                .collect()
        })
        .collect();

    let dwells = |p: &BTreeMap<StationId, Partial>| -> Vec<f64> {
        p.values()
            .filter_map(|x| x.arrive_in.map(|a| (x.depart - a).max(0.0)))
            .collect()
    };
    let global_dwell = median(&mut partials.iter().flat_map(dwells).collect::<Vec<_>>());

    let mut out = Vec::with_capacity(trips.len());
    for (t, p) in trips.into_iter().zip(partials) {
        if p.is_empty() {
            warn!(
                "dropping a cluster of {} journeys with no station support",
                t.members.len()
            );
            continue;
        }
        let dwell = median(&mut dwells(&p)).or(global_dwell);
        let envelope = p
            .into_iter()
            .map(|(s, x)| {
                let arrive = match cfg.arrival {
                    ArrivalEvidence::AllMembers => x.arrive_all,
                    ArrivalEvidence::InTrain => match (x.arrive_in, dwell) {
                        (Some(a), _) => a,
                        (None, Some(d)) => x.depart - d,
                        (None, None) => x.arrive_all,
                    },
                };
                (
                    s,
                    StationEstimate {
                        arrive_est: arrive.min(x.depart),
                        depart_est: x.depart,
                        support: x.support,
                    },
                )
            })
            .collect();
        let mut members = t.members;
        members.sort_unstable();
        members.dedup();
        out.push(TrainTrip {
            train: TrainId(String::new()),
            members,
            envelope,
        });
    }
    EstimatedTimetable::from_trips(out, topology)
}

/// Envelope timetable of the clusters in `labeling` over `journeys`.
pub fn extract_timetable(
    labeling: &ClusterLabeling,
    journeys: &[Journey],
    topology: &LineTopology,
    cfg: &EnvelopeConfig,
) -> Result<EstimatedTimetable> {
    cfg.validate()?;
    if labeling.len() != journeys.len() {
        return Err(invalid("labeling and journeys differ in length"));
    }
    if labeling.k() == 0 {
        return Err(Error::Empty("no clusters to extract"));
    }
    let trips = labeling
        .clusters()
        .into_iter()
        .map(|members| {
            let mut t = TripVisits::default();
            for i in members {
                t.add_journey(i, &journeys[i], topology);
            }
            t
        })
        .collect();
    Ok(build_timetable(trips, topology, cfg))
}
