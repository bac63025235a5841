use serde::{Deserialize, Serialize};

use super::envelope::{StationEstimate, TrainTrip};
use crate::error::{invalid, Result};
use crate::trace::{LineTopology, StationId};

/// Median running time per segment and dwell per station, in line order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeStats {
    pub stations: Vec<StationId>,
    /// `run[p]`: departure from station `p` to arrival at `p + 1`.
    pub run: Vec<f64>,
    pub dwell: Vec<f64>,
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

/// Replaces gaps by the median of the known entries (zero if none).
fn fill(v: Vec<Option<f64>>) -> Vec<f64> {
    let fallback = median(v.iter().flatten().copied().collect()).unwrap_or(0.0);
    v.into_iter().map(|x| x.unwrap_or(fallback)).collect()
}

impl TravelTimeStats {
    pub fn new(topology: &LineTopology, run: Vec<f64>, dwell: Vec<f64>) -> Result<Self> {
        let n = topology.len();
        if run.len() + 1 != n || dwell.len() != n {
            return Err(invalid("travel-time stats do not match the line length"));
        }
        Ok(TravelTimeStats {
            stations: topology.stations.clone(),
            run,
            dwell,
        })
    }

    /// Medians over the trips that cover each segment or station.
    pub fn from_trips(trips: &[TrainTrip], topology: &LineTopology) -> Self {
        let st = &topology.stations;
        let run = (0..st.len() - 1)
            .map(|p| {
                median(
                    trips
                        .iter()
                        .filter_map(|t| {
                            Some(
                                t.envelope.get(&st[p + 1])?.arrive_est
                                    - t.envelope.get(&st[p])?.depart_est,
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        let dwell = st
            .iter()
            .map(|s| {
                median(
                    trips
                        .iter()
                        .filter_map(|t| t.envelope.get(s))
                        .map(|e| e.depart_est - e.arrive_est)
                        .collect(),
                )
            })
            .collect();
        TravelTimeStats {
            stations: st.clone(),
            run: fill(run),
            dwell: fill(dwell),
        }
    }

    fn position(&self, s: StationId) -> Option<usize> {
        self.stations.iter().position(|x| *x == s)
    }

    /// Arrival at position `q` implied by `trip`'s nearest supported station.
    fn extrapolate(&self, trip: &TrainTrip, q: usize) -> Option<f64> {
        let (p, e) = trip
            .envelope
            .iter()
            .filter_map(|(s, e)| Some((self.position(*s)?, e)))
            .min_by_key(|(p, _)| (p.abs_diff(q), *p))?;
        Some(self.arrival_from(p, e, q))
    }

    fn arrival_from(&self, p: usize, e: &StationEstimate, q: usize) -> f64 {
        if p < q {
            e.depart_est
                + self.run[p..q].iter().sum::<f64>()
                + self.dwell[p + 1..q].iter().sum::<f64>()
        } else {
            e.arrive_est - self.run[q..p].iter().sum::<f64>() - self.dwell[q..p].iter().sum::<f64>()
        }
    }

    /// Mean absolute difference between `to`'s arrivals and those extrapolated from `from`.
    fn error(&self, from: &TrainTrip, to: &TrainTrip) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for (s, e) in &to.envelope {
            let q = self.position(*s)?;
            total += (self.extrapolate(from, q)? - e.arrive_est).abs();
            n += 1;
        }
        (n > 0).then(|| total / n as f64)
    }

    fn pair_error(&self, a: &TrainTrip, b: &TrainTrip) -> Option<f64> {
        Some(0.5 * (self.error(a, b)? + self.error(b, a)?))
    }
}

fn disjoint(a: &TrainTrip, b: &TrainTrip) -> bool {
    a.envelope.keys().all(|s| !b.envelope.contains_key(s))
}

/// Greedily merges trips with disjoint station support whose envelopes agree
/// within `max_gap` seconds once extrapolated by median travel times. The
/// closest pair is merged first and the candidates re-evaluated.
pub fn reconcile_fragments(
    mut trips: Vec<TrainTrip>,
    stats: &TravelTimeStats,
    max_gap: f64,
) -> Vec<TrainTrip> {
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..trips.len() {
            for j in i + 1..trips.len() {
                if !disjoint(&trips[i], &trips[j]) {
                    continue;
                }
                let Some(err) = stats.pair_error(&trips[i], &trips[j]) else {
                    continue;
                };
                if err <= max_gap && best.is_none_or(|b| err < b.0) {
                    best = Some((err, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { return trips };
        let b = trips.remove(j);
        let a = &mut trips[i];
        a.members.extend(b.members);
        a.members.sort_unstable();
        a.members.dedup();
        a.envelope.extend(b.envelope);
    }
}

/// Re-anchors station estimates backed by fewer than `min_support` visits on
/// an adjacent station of the same trip that has enough support, keeping the
/// estimated dwell. Stations without such a neighbour are left alone.
pub fn anchor_sparse_stations(
    trips: &mut [TrainTrip],
    stats: &TravelTimeStats,
    min_support: usize,
) {
    for trip in trips.iter_mut() {
        let pos: Vec<(usize, StationEstimate)> = trip
            .envelope
            .iter()
            .filter_map(|(s, e)| Some((stats.position(*s)?, *e)))
            .collect();
        let strong = |q: usize| {
            pos.iter()
                .filter(|(p, e)| p.abs_diff(q) == 1 && e.support >= min_support)
                .max_by_key(|(p, e)| (e.support, std::cmp::Reverse(*p)))
        };
        for (q, e) in &pos {
            if e.support >= min_support {
                continue;
            }
            let Some((p, n)) = strong(*q) else { continue };
            let arrive = stats.arrival_from(*p, n, *q);
            let est = trip
                .envelope
                .get_mut(&stats.stations[*q])
                .expect("station present");
            let dwell = est.depart_est - est.arrive_est;
            est.arrive_est = arrive;
            est.depart_est = arrive + dwell;
        }
    }
}
