use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::dbscan::dbscan_1d;
use super::envelope::{build_timetable, EnvelopeConfig, EstimatedTimetable, TripVisits};
use super::ClusterLabeling;
use crate::error::{invalid, Result};
use crate::trace::{Journey, LineTopology, Seconds, StationId};

pub const DEFAULT_TOLERANCE: Seconds = 1800;

/// DBSCAN result at one station: `refs[r]` is the journey and timestamp of
/// point `r` of `labeling`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationClusters {
    pub station: StationId,
    pub refs: Vec<(usize, Seconds)>,
    pub labeling: ClusterLabeling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub eps: Seconds,
    pub min_pts: usize,
    pub tolerance: Seconds,
    pub envelope: EnvelopeConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            eps: 60,
            min_pts: 3,
            tolerance: DEFAULT_TOLERANCE,
            envelope: EnvelopeConfig::default(),
        }
    }
}

/// Links per-station clusters into trains.
///
/// Stations are visited in line order. Every member of a cluster at station
/// `i` that was already labelled at an earlier station, within `tolerance`
/// seconds, proposes that label; the cluster takes the most proposed label
/// (smallest on a tie) or a fresh one when nobody proposes.
pub fn baseline_reidentify(
    per_station: &[StationClusters],
    journeys: &[Journey],
    topology: &LineTopology,
    tolerance: Seconds,
    envelope: &EnvelopeConfig,
) -> Result<EstimatedTimetable> {
    envelope.validate()?;
    let mut ordered: Vec<(usize, &StationClusters)> = Vec::with_capacity(per_station.len());
    for sc in per_station {
        let pos = topology
            .position(sc.station)
            .ok_or(crate::Error::UnknownStation(sc.station))?;
        if sc.refs.len() != sc.labeling.len() {
            return Err(invalid("station refs and labeling differ in length"));
        }
        ordered.push((pos, sc));
    }
    ordered.sort_by_key(|e| e.0);

    // per journey: (position, label, time) of earlier labelled visits
    let mut history: HashMap<usize, Vec<(usize, usize, Seconds)>> = HashMap::new();
    let mut trips: Vec<TripVisits> = Vec::new();
    for (pos, sc) in ordered {
        for members in sc.labeling.clusters() {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for &r in &members {
                let (x, t) = sc.refs[r];
                let mut proposed: Vec<usize> = history
                    .get(&x)
                    .into_iter()
                    .flatten()
                    .filter(|(p, _, tp)| *p < pos && (t - tp).abs() <= tolerance)
                    .map(|e| e.1)
                    .collect();
                proposed.sort_unstable();
                proposed.dedup();
                for l in proposed {
                    *votes.entry(l).or_default() += 1;
                }
            }
            let label = match votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                Some((&l, _)) => l,
                None => {
                    trips.push(TripVisits::default());
                    trips.len() - 1
                }
            };
            for &r in &members {
                let (x, t) = sc.refs[r];
                history.entry(x).or_default().push((pos, label, t));
                trips[label].members.push(x);
                trips[label].add_visit(&journeys[x], sc.station, topology);
            }
        }
    }
    Ok(build_timetable(trips, topology, envelope))
}

/// Per-station DBSCAN on last-seen times followed by re-identification.
pub fn run_baseline(
    journeys: &[Journey],
    topology: &LineTopology,
    cfg: &BaselineConfig,
) -> Result<EstimatedTimetable> {
    let mut per_station = Vec::with_capacity(topology.len());
    for &station in &topology.stations {
        let refs: Vec<(usize, Seconds)> = journeys
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.get(station).map(|t| (i, t.last_seen)))
            .collect();
        let times: Vec<Seconds> = refs.iter().map(|r| r.1).collect();
        let labeling = dbscan_1d(&times, cfg.eps, cfg.min_pts)?;
        per_station.push(StationClusters {
            station,
            refs,
            labeling,
        });
    }
    baseline_reidentify(
        &per_station,
        journeys,
        topology,
        cfg.tolerance,
        &cfg.envelope,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> LineTopology {
        LineTopology::linear("L", 3).unwrap()
    }

    fn cfg() -> BaselineConfig {
        BaselineConfig {
            eps: 30,
            min_pts: 1,
            ..Default::default()
        }
    }

    #[test]
    fn fully_observed_single_train() {
        let js: Vec<Journey> = (0..4)
            .map(|d| {
                Journey::new(
                    format!("d{d}"),
                    0,
                    [(0, (0, 30)), (1, (150, 180)), (2, (300, 330))],
                )
            })
            .collect();
        let tt = run_baseline(&js, &topo(), &cfg()).unwrap();
        assert_eq!(tt.len(), 1);
        assert_eq!(tt.trips[0].envelope.len(), 3);
    }

    #[test]
    fn two_trains_keep_consistent_labels() {
        let mut js = Vec::new();
        for (k, t0) in [0, 900].into_iter().enumerate() {
            for d in 0..3 {
                js.push(Journey::new(
                    format!("t{k}d{d}"),
                    0,
                    [
                        (0, (t0, t0 + 30)),
                        (1, (t0 + 150, t0 + 180)),
                        (2, (t0 + 300, t0 + 330)),
                    ],
                ));
            }
        }
        let tt = run_baseline(
            &js,
            &topo(),
            &BaselineConfig {
                tolerance: 600,
                ..cfg()
            },
        )
        .unwrap();
        assert_eq!(tt.len(), 2);
        assert_eq!(tt.trips[0].members, vec![0, 1, 2]);
        assert_eq!(tt.trips[1].members, vec![3, 4, 5]);
    }

    #[test]
    fn unseen_boarders_start_a_new_train() {
        // riders from station 0 are missed at station 1; riders boarding at 1 go to 2
        let js = vec![
            Journey::new("a", 0, [(0, (0, 30)), (2, (300, 330))]),
            Journey::new("b", 0, [(1, (100, 180)), (2, (300, 330))]),
        ];
        let tt = run_baseline(&js, &topo(), &cfg()).unwrap();
        assert_eq!(tt.len(), 2);
    }
}
