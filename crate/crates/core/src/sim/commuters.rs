use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::timetable::GroundTruthTimetable;
use crate::dsg::BinCount;
use crate::error::{invalid, Result};
use crate::trace::{LineTopology, Seconds, StationId, TrainId};

/// Width of the demand-supply-gap reporting window.
pub const DSG_WINDOW: Seconds = 1800;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commuter {
    pub id: u32,
    pub origin: StationId,
    pub destination: StationId,
    pub platform_arrival: Seconds,
    pub boarded_train: Option<TrainId>,
    pub trains_missed: u32,
}

/// Platform arrival intent before boarding is simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arrival {
    pub origin: StationId,
    pub destination: StationId,
    pub time: Seconds,
}

/// A multiplier on every station's rate over `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandPeak {
    pub start: Seconds,
    pub end: Seconds,
    pub multiplier: f64,
    /// Restricts the peak to these stations; empty means all.
    #[serde(default)]
    pub stations: Vec<StationId>,
}

/// Poisson platform arrivals per station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    /// Arrivals per second per station; a single value applies to all.
    pub rate: Vec<f64>,
    #[serde(default)]
    pub peaks: Vec<DemandPeak>,
}

impl DemandModel {
    pub fn uniform(rate: f64) -> Self {
        DemandModel {
            rate: vec![rate],
            peaks: Vec::new(),
        }
    }

    fn base(&self, pos: usize) -> f64 {
        if self.rate.len() == 1 {
            self.rate[0]
        } else {
            self.rate.get(pos).copied().unwrap_or(0.0)
        }
    }

    pub fn rate_at(&self, pos: usize, station: StationId, t: Seconds) -> f64 {
        let mut r = self.base(pos);
        for p in &self.peaks {
            if t >= p.start && t < p.end && (p.stations.is_empty() || p.stations.contains(&station))
            {
                r *= p.multiplier;
            }
        }
        r
    }

    fn max_rate(&self, pos: usize, station: StationId) -> f64 {
        let mut r = self.base(pos);
        for p in &self.peaks {
            if p.stations.is_empty() || p.stations.contains(&station) {
                r *= p.multiplier.max(1.0);
            }
        }
        r
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate.is_empty() || self.rate.iter().any(|r| !(*r >= 0.0)) {
            return Err(invalid("demand rates must be non-negative"));
        }
        if self.peaks.iter().any(|p| !(p.multiplier >= 0.0)) {
            return Err(invalid("peak multipliers must be non-negative"));
        }
        Ok(())
    }
}

/// Draws platform arrivals at every station that has a downstream
/// destination, from one headway before the first train calls there until
/// the station's last departure. Destinations are uniform over downstream
/// stations.
pub fn generate_arrivals<R: Rng>(
    timetable: &GroundTruthTimetable,
    topology: &LineTopology,
    demand: &DemandModel,
    rng: &mut R,
) -> Result<Vec<Arrival>> {
    demand.validate()?;
    let mut out = Vec::new();
    for (pos, &station) in topology
        .stations
        .iter()
        .enumerate()
        .take(topology.len() - 1)
    {
        let calls = timetable.at_station(station);
        let Some(&(_, _, last_dep)) = calls.last() else {
            continue;
        };
        // commuters already wait for the first train as they would for any other
        let lead = if calls.len() > 1 {
            calls[1].1 - calls[0].1
        } else {
            0
        };
        let t0 = calls[0].1 - lead;
        let lmax = demand.max_rate(pos, station);
        if lmax <= 0.0 {
            continue;
        }
        let exp = Exp::new(lmax).map_err(|e| invalid(e.to_string()))?;
        let mut t = t0 as f64;
        loop {
            t += exp.sample(rng);
            if t > last_dep as f64 {
                break;
            }
            let ts = t.floor() as Seconds;
            let accept = demand.rate_at(pos, station, ts) / lmax;
            if rng.random::<f64>() < accept {
                let dest_pos = rng.random_range(pos + 1..topology.len());
                out.push(Arrival {
                    origin: station,
                    destination: topology.stations[dest_pos],
                    time: ts,
                });
            }
        }
    }
    out.sort_by_key(|a| (a.time, a.origin, a.destination));
    Ok(out)
}

/// Outcome of one train's departure from one station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureEvent {
    pub train: TrainId,
    pub station: StationId,
    pub depart: Seconds,
    pub boarded: u32,
    /// Commuters on the platform who could not board.
    pub left_behind: u32,
    /// Of those, commuters for whom this was the first train they waited for.
    pub left_behind_first: u32,
    /// Commuters for whom this was the first train they waited for.
    pub first_opportunity: u32,
    /// Mean total trains missed over the commuters left behind here.
    pub mean_missed_of_left_behind: f64,
}

/// Per-(station, window) demand-supply-gap truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsgWindowLabel {
    pub station: StationId,
    pub window_start: Seconds,
    pub intending: u32,
    pub left_behind: u32,
    pub dsg_pct: f64,
    pub positive: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommuterOutcome {
    pub commuters: Vec<Commuter>,
    pub departures: Vec<DepartureEvent>,
    pub windows: Vec<DsgWindowLabel>,
}

impl CommuterOutcome {
    /// Fare-gate entries: platform arrivals per origin and time bin.
    pub fn gate_counts(&self, width: Seconds) -> Vec<BinCount> {
        let mut acc: BTreeMap<(StationId, i64), i64> = BTreeMap::new();
        for c in &self.commuters {
            *acc.entry((c.origin, c.platform_arrival.div_euclid(width)))
                .or_default() += 1;
        }
        acc.into_iter()
            .map(|((station, time_bin), entries)| BinCount {
                station,
                time_bin,
                entries,
            })
            .collect()
    }

    pub fn write_dsg_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "station",
            "window_start",
            "intending",
            "left_behind",
            "dsg_pct",
            "positive",
        ])?;
        for l in &self.windows {
            w.write_record([
                l.station.to_string(),
                l.window_start.to_string(),
                l.intending.to_string(),
                l.left_behind.to_string(),
                format!("{:.4}", l.dsg_pct),
                (l.positive as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn window_start(t: Seconds, width: Seconds) -> Seconds {
    t.div_euclid(width) * width
}

/// Poisson demand plus FIFO boarding.
pub fn simulate_commuters<R: Rng>(
    timetable: &GroundTruthTimetable,
    topology: &LineTopology,
    demand: &DemandModel,
    capacity: u32,
    rng: &mut R,
) -> Result<CommuterOutcome> {
    let arrivals = generate_arrivals(timetable, topology, demand, rng)?;
    board(timetable, topology, &arrivals, capacity)
}

/// Boards commuters first-in first-out by platform arrival.
///
/// Departures are processed in time order. At each departure, riders bound
/// for the station alight, then waiting commuters who reached the platform no
/// later than the departure board until the train is full; the rest each
/// record one missed train.
pub fn board(
    timetable: &GroundTruthTimetable,
    topology: &LineTopology,
    arrivals: &[Arrival],
    capacity: u32,
) -> Result<CommuterOutcome> {
    if capacity == 0 {
        return Err(invalid("train capacity must be positive"));
    }
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by_key(|&i| (arrivals[i].time, i));
    let mut commuters: Vec<Commuter> = order
        .iter()
        .enumerate()
        .map(|(id, &i)| {
            let a = arrivals[i];
            Commuter {
                id: id as u32,
                origin: a.origin,
                destination: a.destination,
                platform_arrival: a.time,
                boarded_train: None,
                trains_missed: 0,
            }
        })
        .collect();

    // FIFO queue of commuter ids per station, in arrival order.
    let mut pending: BTreeMap<StationId, VecDeque<usize>> = BTreeMap::new();
    for c in &commuters {
        pending
            .entry(c.origin)
            .or_default()
            .push_back(c.id as usize);
    }
    let mut events: Vec<(Seconds, usize, usize)> = Vec::new();
    for (ti, t) in timetable.trains.iter().enumerate() {
        for (si, c) in t.calls.iter().enumerate() {
            events.push((c.2, ti, si));
        }
    }
    events.sort_unstable();

    let mut onboard: Vec<Vec<usize>> = vec![Vec::new(); timetable.trains.len()];
    let mut first_seen_event: Vec<Option<usize>> = vec![None; commuters.len()];
    let mut departures = Vec::with_capacity(events.len());
    let mut left_behind_at: Vec<Vec<usize>> = Vec::with_capacity(events.len());
    for &(depart, ti, si) in &events {
        let train = &timetable.trains[ti];
        let station = train.calls[si].0;
        onboard[ti].retain(|&c| commuters[c].destination != station);
        let queue = pending.entry(station).or_default();
        let mut waiting: Vec<usize> = Vec::new();
        while let Some(&c) = queue.front() {
            if commuters[c].platform_arrival > depart {
                break;
            }
            waiting.push(c);
            queue.pop_front();
        }
        let free = (capacity as usize).saturating_sub(onboard[ti].len());
        let n_board = free.min(waiting.len());
        let event_idx = departures.len();
        let mut first_opportunity = 0;
        let mut left_first = 0;
        for (k, &c) in waiting.iter().enumerate() {
            let first = first_seen_event[c].is_none();
            if first {
                first_seen_event[c] = Some(event_idx);
                first_opportunity += 1;
            }
            if k < n_board {
                commuters[c].boarded_train = Some(train.train.clone());
                onboard[ti].push(c);
            } else {
                commuters[c].trains_missed += 1;
                if first {
                    left_first += 1;
                }
            }
        }
        let left: Vec<usize> = waiting[n_board..].to_vec();
        // left-behind commuters keep their place at the head of the queue
        for &c in left.iter().rev() {
            queue.push_front(c);
        }
        departures.push(DepartureEvent {
            train: train.train.clone(),
            station,
            depart,
            boarded: n_board as u32,
            left_behind: left.len() as u32,
            left_behind_first: left_first,
            first_opportunity,
            mean_missed_of_left_behind: 0.0,
        });
        left_behind_at.push(left);
    }
    for (ev, left) in departures.iter_mut().zip(&left_behind_at) {
        if !left.is_empty() {
            ev.mean_missed_of_left_behind = left
                .iter()
                .map(|&c| commuters[c].trains_missed as f64)
                .sum::<f64>()
                / left.len() as f64;
        }
    }

    let windows = window_labels(&departures, topology);
    Ok(CommuterOutcome {
        commuters,
        departures,
        windows,
    })
}

/// Aggregates departure events into 30-minute windows per station. A window
/// is positive when any departure in it left a commuter behind; the
/// percentage is over commuters whose first train departed in the window.
pub fn window_labels(
    departures: &[DepartureEvent],
    topology: &LineTopology,
) -> Vec<DsgWindowLabel> {
    let mut acc: BTreeMap<(usize, Seconds), (StationId, u32, u32, bool)> = BTreeMap::new();
    for ev in departures {
        let pos = topology.position(ev.station).unwrap_or(usize::MAX);
        let e = acc
            .entry((pos, window_start(ev.depart, DSG_WINDOW)))
            .or_insert((ev.station, 0, 0, false));
        e.1 += ev.first_opportunity;
        e.2 += ev.left_behind_first;
        e.3 |= ev.left_behind > 0;
    }
    acc.into_iter()
        .map(
            |((_, w), (station, intending, left, positive))| DsgWindowLabel {
                station,
                window_start: w,
                intending,
                left_behind: left,
                dsg_pct: if intending > 0 {
                    100.0 * left as f64 / intending as f64
                } else {
                    0.0
                },
                positive,
            },
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::timetable::{generate_timetable, ServicePlan};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (LineTopology, GroundTruthTimetable) {
        let topo = LineTopology::linear("L", 3).unwrap();
        let plan = ServicePlan {
            headway: 180,
            dwell: 30,
            run_time: vec![120],
            span: (0, 360),
        };
        (topo.clone(), generate_timetable(&topo, &plan).unwrap())
    }

    fn arr(origin: u32, dest: u32, t: Seconds) -> Arrival {
        Arrival {
            origin: StationId(origin),
            destination: StationId(dest),
            time: t,
        }
    }

    #[test]
    fn capacity_two_three_waiting() {
        let (topo, tt) = setup();
        let out = board(&tt, &topo, &[arr(0, 2, 1), arr(0, 2, 2), arr(0, 2, 3)], 2).unwrap();
        let c = &out.commuters;
        assert_eq!(c[0].boarded_train, Some(TrainId("T000".into())));
        assert_eq!(c[1].boarded_train, Some(TrainId("T000".into())));
        assert_eq!(c[2].boarded_train, Some(TrainId("T001".into())));
        assert_eq!(c[2].trains_missed, 1);
        let w = out
            .windows
            .iter()
            .find(|w| w.station == StationId(0))
            .unwrap();
        assert!((w.dsg_pct - 100.0 / 3.0).abs() < 1e-9);
        assert!(w.positive);
    }

    #[test]
    fn ample_capacity_means_no_dsg() {
        let (topo, tt) = setup();
        let out = board(
            &tt,
            &topo,
            &[arr(0, 2, 1), arr(0, 1, 2), arr(1, 2, 100)],
            10,
        )
        .unwrap();
        assert!(out
            .commuters
            .iter()
            .all(|c| c.trains_missed == 0 && c.boarded_train.is_some()));
        assert!(out.windows.iter().all(|w| w.dsg_pct == 0.0 && !w.positive));
    }

    #[test]
    fn zero_demand_is_empty() {
        let (topo, tt) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = simulate_commuters(&tt, &topo, &DemandModel::uniform(0.0), 5, &mut rng).unwrap();
        assert!(out.commuters.is_empty());
    }

    #[test]
    fn alighting_frees_capacity() {
        let (topo, tt) = setup();
        // two ride 0→1 and fill the train; at station 1 they alight and the
        // waiting commuter boards the same train
        let out = board(&tt, &topo, &[arr(0, 1, 1), arr(0, 1, 2), arr(1, 2, 100)], 2).unwrap();
        assert_eq!(out.commuters[2].boarded_train, Some(TrainId("T000".into())));
        assert_eq!(out.commuters[2].trains_missed, 0);
    }

    #[test]
    fn unboarded_at_end_are_conserved() {
        let (topo, tt) = setup();
        let arrivals: Vec<_> = (0..5).map(|i| arr(0, 2, i)).collect();
        let out = board(&tt, &topo, &arrivals, 2).unwrap();
        let boarded = out
            .commuters
            .iter()
            .filter(|c| c.boarded_train.is_some())
            .count();
        assert_eq!(boarded, 4);
        let last = &out.commuters[4];
        assert_eq!(last.boarded_train, None);
        assert_eq!(last.trains_missed, 2);
    }

    #[test]
    fn generated_arrivals_respect_line() {
        let topo = LineTopology::linear("L", 5).unwrap();
        let plan = ServicePlan {
            headway: 180,
            dwell: 30,
            run_time: vec![120],
            span: (0, 3600),
        };
        let tt = generate_timetable(&topo, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = generate_arrivals(&tt, &topo, &DemandModel::uniform(0.05), &mut rng).unwrap();
        assert!(!a.is_empty());
        assert!(a.iter().all(|x| x.destination > x.origin && x.origin.0 < 4));
        // mean count ≈ rate × duration × stations
        let expected = 0.05 * 3600.0 * 4.0;
        assert!((a.len() as f64 - expected).abs() < 4.0 * expected.sqrt() + 60.0);
    }

    #[test]
    fn peaks_multiply_rate() {
        let d = DemandModel {
            rate: vec![0.1],
            peaks: vec![DemandPeak {
                start: 0,
                end: 10,
                multiplier: 3.0,
                stations: vec![StationId(2)],
            }],
        };
        assert!((d.rate_at(0, StationId(2), 5) - 0.3).abs() < 1e-12);
        assert_eq!(d.rate_at(0, StationId(1), 5), 0.1);
        assert_eq!(d.rate_at(0, StationId(2), 10), 0.1);
    }
}
