use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::commuters::Commuter;
use super::timetable::GroundTruthTimetable;
use crate::error::{invalid, Result};
use crate::trace::{DeviceId, LineTopology, ObservationRecord, Seconds, StationId};

/// Multiplies the sampling probability at matching stations over `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingModulation {
    #[serde(default)]
    pub station: Option<StationId>,
    pub start: Seconds,
    pub end: Seconds,
    pub factor: f64,
}

/// Devices lingering on one platform without travelling (staff, shops).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdleDevices {
    pub station: StationId,
    pub per_hour: f64,
    pub min_stay: Seconds,
    pub max_stay: Seconds,
}

/// A station whose sensors also cover the concourse, so entering devices
/// are seen for a walk of `min_walk..=max_walk` seconds before the platform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcourseCoverage {
    pub station: StationId,
    pub min_walk: Seconds,
    pub max_walk: Seconds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingConfig {
    /// Probability a station visit is observed at all.
    pub base_sampling: f64,
    pub modulation: Vec<SamplingModulation>,
    pub timestamp_jitter_sd: f64,
    /// Probability the trailing records of a visit are lost.
    pub dropout_tail: f64,
    /// Probability a device switches to a fresh identifier mid-journey.
    pub id_split: f64,
    /// Seconds between consecutive probe records of a present device.
    pub probe_interval: Seconds,
    pub idle: Vec<IdleDevices>,
    pub concourse: Vec<ConcourseCoverage>,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig::noiseless()
    }
}

impl SensingConfig {
    pub fn noiseless() -> Self {
        SensingConfig {
            base_sampling: 1.0,
            modulation: Vec::new(),
            timestamp_jitter_sd: 0.0,
            dropout_tail: 0.0,
            id_split: 0.0,
            probe_interval: 20,
            idle: Vec::new(),
            concourse: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be a probability, got {p}")))
            }
        };
        prob("base_sampling", self.base_sampling)?;
        prob("dropout_tail", self.dropout_tail)?;
        prob("id_split", self.id_split)?;
        if !(self.timestamp_jitter_sd >= 0.0) {
            return Err(invalid("timestamp_jitter_sd must be non-negative"));
        }
        if self.probe_interval <= 0 {
            return Err(invalid("probe_interval must be positive"));
        }
        if self.modulation.iter().any(|m| !(m.factor >= 0.0)) {
            return Err(invalid("modulation factors must be non-negative"));
        }
        for i in &self.idle {
            if !(i.per_hour >= 0.0) || i.min_stay < 0 || i.max_stay < i.min_stay {
                return Err(invalid("idle device spec is inconsistent"));
            }
        }
        if self
            .concourse
            .iter()
            .any(|c| c.min_walk < 0 || c.max_walk < c.min_walk)
        {
            return Err(invalid("concourse walk range is inconsistent"));
        }
        Ok(())
    }

    pub fn sampling(&self, station: StationId, t: Seconds) -> f64 {
        let mut p = self.base_sampling;
        for m in &self.modulation {
            if t >= m.start && t < m.end && m.station.is_none_or(|s| s == station) {
                p *= m.factor;
            }
        }
        p.clamp(0.0, 1.0)
    }
}

/// Who a device really is.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceOwner {
    Commuter(u32),
    Idle,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Records sorted by `(timestamp, device, station)`.
    pub records: Vec<ObservationRecord>,
    pub owners: BTreeMap<DeviceId, DeviceOwner>,
}

pub fn commuter_device(id: u32) -> DeviceId {
    DeviceId(format!("c{id:06}"))
}

struct Visit {
    station: StationId,
    start: Seconds,
    end: Seconds,
}

/// Platform presence of one commuter: the wait at the origin, then every
/// later station of the ride from the train's arrival to its departure.
/// Commuters never boarded wait until the last departure at their origin.
fn visits(c: &Commuter, timetable: &GroundTruthTimetable, topology: &LineTopology) -> Vec<Visit> {
    let mut out = Vec::new();
    match c.boarded_train.as_ref().and_then(|t| timetable.train(t)) {
        Some(run) => {
            let (_, dep) = run
                .call(c.origin)
                .unwrap_or((c.platform_arrival, c.platform_arrival));
            out.push(Visit {
                station: c.origin,
                start: c.platform_arrival,
                end: dep.max(c.platform_arrival),
            });
            let (Some(o), Some(d)) = (
                topology.position(c.origin),
                topology.position(c.destination),
            ) else {
                return out;
            };
            for &s in &topology.stations[o + 1..=d] {
                if let Some((a, dp)) = run.call(s) {
                    out.push(Visit {
                        station: s,
                        start: a,
                        end: dp,
                    });
                }
            }
        }
        None => {
            let last = timetable
                .at_station(c.origin)
                .last()
                .map_or(c.platform_arrival, |x| x.2);
            out.push(Visit {
                station: c.origin,
                start: c.platform_arrival,
                end: last.max(c.platform_arrival),
            });
        }
    }
    out
}

/// Emits noisy probe records for every commuter and idle device.
///
/// Origin visits at covered stations start early by the concourse walk. Per visit, in order: the visit is dropped with probability one minus the
/// local sampling rate; with probability `dropout_tail` records after a
/// uniform cut point are lost; every surviving timestamp gets Gaussian
/// jitter. With probability `id_split` a commuter's device switches to a
/// fresh identifier from a random visit onwards.
pub fn observe(
    commuters: &[Commuter],
    timetable: &GroundTruthTimetable,
    topology: &LineTopology,
    cfg: &SensingConfig,
    seed: u64,
) -> Result<Observation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = if cfg.timestamp_jitter_sd > 0.0 {
        Some(Normal::new(0.0, cfg.timestamp_jitter_sd).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let mut obs = Observation::default();
    let mut splits = 0u32;

    let emit = |rng: &mut ChaCha8Rng, obs: &mut Observation, device: &DeviceId, v: &Visit| {
        if rng.random::<f64>() >= cfg.sampling(v.station, v.start) {
            return;
        }
        let mut end = v.end;
        if cfg.dropout_tail > 0.0 && rng.random::<f64>() < cfg.dropout_tail {
            end = rng.random_range(v.start..=v.end);
        }
        let mut t = v.start;
        loop {
            let mut ts = t;
            if let Some(n) = &jitter {
                ts += n.sample(rng).round() as Seconds;
            }
            obs.records.push(ObservationRecord {
                device: device.clone(),
                station: v.station,
                timestamp: ts.max(0),
            });
            if t >= end {
                break;
            }
            t = (t + cfg.probe_interval).min(end);
        }
    };

    for c in commuters {
        let mut vs = visits(c, timetable, topology);
        if let Some(cov) = cfg.concourse.iter().find(|k| k.station == c.origin) {
            if let Some(v) = vs.first_mut() {
                v.start -= rng.random_range(cov.min_walk..=cov.max_walk);
            }
        }
        let mut device = commuter_device(c.id);
        obs.owners
            .insert(device.clone(), DeviceOwner::Commuter(c.id));
        let split_at = if cfg.id_split > 0.0 && vs.len() >= 2 && rng.random::<f64>() < cfg.id_split
        {
            Some(rng.random_range(1..vs.len()))
        } else {
            None
        };
        for (k, v) in vs.iter().enumerate() {
            if Some(k) == split_at {
                splits += 1;
                device = DeviceId(format!("r{:06}-{}", c.id, splits));
                obs.owners
                    .insert(device.clone(), DeviceOwner::Commuter(c.id));
            }
            emit(&mut rng, &mut obs, &device, v);
        }
    }

    if let (Some(first), Some(last)) = (timetable.trains.first(), timetable.trains.last()) {
        let t0 = first.calls[0].1;
        let t1 = last.calls.last().map_or(t0, |c| c.2);
        let mut idle_id = 0u32;
        for spec in &cfg.idle {
            if spec.per_hour <= 0.0 {
                continue;
            }
            let gap =
                rand_distr::Exp::new(spec.per_hour / 3600.0).map_err(|e| invalid(e.to_string()))?;
            let mut t = t0 as f64;
            loop {
                t += gap.sample(&mut rng);
                if t > t1 as f64 {
                    break;
                }
                let start = t as Seconds;
                let stay = rng.random_range(spec.min_stay..=spec.max_stay);
                let device = DeviceId(format!("i{idle_id:06}"));
                idle_id += 1;
                obs.owners.insert(device.clone(), DeviceOwner::Idle);
                emit(
                    &mut rng,
                    &mut obs,
                    &device,
                    &Visit {
                        station: spec.station,
                        start,
                        end: start + stay,
                    },
                );
            }
        }
    }

    obs.records.sort_by(|a, b| {
        (a.timestamp, &a.device, a.station).cmp(&(b.timestamp, &b.device, b.station))
    });
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::commuters::{board, Arrival};
    use crate::sim::timetable::{generate_timetable, ServicePlan};
    use crate::trace::vectorize_journeys;

    fn scenario() -> (LineTopology, GroundTruthTimetable, Vec<Commuter>) {
        let topo = LineTopology::linear("L", 4).unwrap();
        let plan = ServicePlan {
            headway: 180,
            dwell: 30,
            run_time: vec![120],
            span: (0, 600),
        };
        let tt = generate_timetable(&topo, &plan).unwrap();
        let arrivals = vec![
            Arrival {
                origin: StationId(0),
                destination: StationId(3),
                time: 5,
            },
            Arrival {
                origin: StationId(1),
                destination: StationId(2),
                time: 100,
            },
            Arrival {
                origin: StationId(2),
                destination: StationId(3),
                time: 400,
            },
        ];
        let out = board(&tt, &topo, &arrivals, 100).unwrap();
        (topo, tt, out.commuters)
    }

    #[test]
    fn noiseless_records_bracket_presence() {
        let (topo, tt, commuters) = scenario();
        let obs = observe(&commuters, &tt, &topo, &SensingConfig::noiseless(), 1).unwrap();
        let v = vectorize_journeys(obs.records, &topo, 3600).unwrap();
        assert_eq!(v.journeys.len(), 3);
        let j0 = &v.journeys[0];
        // origin wait from platform arrival until train departure
        assert_eq!(
            (
                j0.stops[&StationId(0)].first_seen,
                j0.stops[&StationId(0)].last_seen
            ),
            (5, 30)
        );
        let run = tt
            .train(commuters[0].boarded_train.as_ref().unwrap())
            .unwrap();
        for s in 1..=3 {
            let (a, d) = run.call(StationId(s)).unwrap();
            assert_eq!(
                (
                    j0.stops[&StationId(s)].first_seen,
                    j0.stops[&StationId(s)].last_seen
                ),
                (a, d)
            );
        }
    }

    #[test]
    fn concourse_walk_precedes_platform_arrival() {
        let (topo, tt, commuters) = scenario();
        let cfg = SensingConfig {
            concourse: vec![ConcourseCoverage {
                station: StationId(1),
                min_walk: 40,
                max_walk: 40,
            }],
            ..SensingConfig::noiseless()
        };
        let obs = observe(&commuters, &tt, &topo, &cfg, 1).unwrap();
        let v = vectorize_journeys(obs.records, &topo, 3600).unwrap();
        let first = |s: u32| {
            v.journeys
                .iter()
                .find(|j| j.first_station() == Some(StationId(s)))
                .map(|j| j.stops[&StationId(s)].first_seen)
        };
        assert_eq!(first(1), Some(60));
        assert_eq!(first(0), Some(5));
        let bad = SensingConfig {
            concourse: vec![ConcourseCoverage {
                station: StationId(1),
                min_walk: 50,
                max_walk: 10,
            }],
            ..SensingConfig::noiseless()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_sampling_is_silent() {
        let (topo, tt, commuters) = scenario();
        let cfg = SensingConfig {
            base_sampling: 0.0,
            ..SensingConfig::noiseless()
        };
        assert!(observe(&commuters, &tt, &topo, &cfg, 1)
            .unwrap()
            .records
            .is_empty());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (topo, tt, commuters) = scenario();
        let cfg = SensingConfig {
            base_sampling: 0.7,
            timestamp_jitter_sd: 10.0,
            dropout_tail: 0.3,
            id_split: 0.5,
            ..SensingConfig::noiseless()
        };
        let a = observe(&commuters, &tt, &topo, &cfg, 42).unwrap();
        let b = observe(&commuters, &tt, &topo, &cfg, 42).unwrap();
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        crate::trace::write_jsonl(&mut ja, &a.records).unwrap();
        crate::trace::write_jsonl(&mut jb, &b.records).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn modulation_scales_sampling() {
        let cfg = SensingConfig {
            base_sampling: 0.8,
            modulation: vec![SamplingModulation {
                station: Some(StationId(2)),
                start: 0,
                end: 100,
                factor: 0.5,
            }],
            ..SensingConfig::noiseless()
        };
        assert!((cfg.sampling(StationId(2), 50) - 0.4).abs() < 1e-12);
        assert_eq!(cfg.sampling(StationId(1), 50), 0.8);
        assert_eq!(cfg.sampling(StationId(2), 100), 0.8);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SensingConfig {
            dropout_tail: 1.5,
            ..SensingConfig::noiseless()
        };
        assert!(cfg.validate().is_err());
        let cfg = SensingConfig {
            timestamp_jitter_sd: -1.0,
            ..SensingConfig::noiseless()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn id_split_creates_second_device() {
        let (topo, tt, commuters) = scenario();
        let cfg = SensingConfig {
            id_split: 1.0,
            ..SensingConfig::noiseless()
        };
        let obs = observe(&commuters, &tt, &topo, &cfg, 3).unwrap();
        // every multi-station commuter gets one extra device
        assert_eq!(obs.owners.len(), 6);
    }
}
