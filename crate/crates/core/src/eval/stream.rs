use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scenarios::simulation_movement_config;
use crate::clustering::{
    combine_windows, run_spectral, window_assignments, window_clusters, EstimatedTimetable,
    MovementConfig,
};
use crate::dsg::{
    departures_by_station, extract_features, origin_waits, time_bin, BinCount, FeatureConfig,
    ModelHierarchy, ModelLevel, SampleKey, ScalingTable, Severity, DEFAULT_ALPHA, SCALING_BIN,
};
use crate::error::{invalid, Result};
use crate::trace::{
    sessions, vectorize_journeys, DeviceId, Journey, JourneyKey, LineTopology, ObservationRecord,
    Seconds, StationId, DEFAULT_GAP_THRESHOLD,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    /// Batch length in seconds of record time; `None` replays the whole input as one batch.
    pub batch_seconds: Option<Seconds>,
    /// Records older than the newest timestamp seen minus this are dropped.
    pub lateness: Seconds,
    pub gap_threshold: Seconds,
    pub movement: MovementConfig,
    pub features: FeatureConfig,
    pub alpha: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            batch_seconds: Some(300),
            lateness: 120,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            movement: simulation_movement_config(),
            features: FeatureConfig::default(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_seconds.is_some_and(|b| b <= 0) {
            return Err(invalid("batch_seconds must be positive"));
        }
        if self.lateness < 0 {
            return Err(invalid("lateness must be non-negative"));
        }
        if self.gap_threshold <= 0 {
            return Err(invalid("gap_threshold must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha must lie in (0, 1]"));
        }
        self.movement.validate()
    }
}

/// Demand-supply-gap scoring during replay: a trained hierarchy plus the
/// fare-gate counts the scaling factors are updated from.
#[derive(Clone, Copy, Debug)]
pub struct StreamDsg<'a> {
    pub model: &'a ModelHierarchy,
    pub gate: &'a [BinCount],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimetableRow {
    pub station: StationId,
    pub arrive_est: f64,
    pub depart_est: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureFlag {
    pub station: StationId,
    pub depart: f64,
    pub probability: f64,
    pub dsg: bool,
    pub severity: Severity,
    pub level: ModelLevel,
}

/// What one batch added. Rows and flags are provisional: later windows
/// can still merge or shift trips near the settled horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamBatch {
    pub index: usize,
    /// Newest record timestamp seen when the batch closed.
    pub watermark: Seconds,
    pub records: usize,
    pub dropped: usize,
    pub rows: Vec<TimetableRow>,
    pub flags: Vec<DepartureFlag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput {
    pub batches: Vec<StreamBatch>,
    /// Timetable after the final flush.
    pub timetable: EstimatedTimetable,
    pub journeys: usize,
    pub dropped_late: usize,
    /// Records for unknown stations or with negative timestamps.
    pub rejected: usize,
}

/// The offline pipeline the replay must agree with.
pub fn batch_timetable(
    records: Vec<ObservationRecord>,
    topology: &LineTopology,
    cfg: &StreamConfig,
) -> Result<EstimatedTimetable> {
    cfg.validate()?;
    let v = vectorize_journeys(records, topology, cfg.gap_threshold)?;
    Ok(run_spectral(&v.journeys, topology, &cfg.movement)?.timetable)
}

struct Replay<'a> {
    topology: &'a LineTopology,
    cfg: &'a StreamConfig,
    dsg: Option<StreamDsg<'a>>,
    records: BTreeMap<DeviceId, Vec<(Seconds, StationId)>>,
    journeys: BTreeMap<DeviceId, Vec<Journey>>,
    touched: BTreeSet<DeviceId>,
    watermark: Option<Seconds>,
    /// Clusters of every window already final, by window index.
    windows: BTreeMap<i64, Vec<Vec<JourneyKey>>>,
    next_window: i64,
    timetable: EstimatedTimetable,
    emitted_until: f64,
    scaling: ScalingTable,
    scaled_until: i64,
}

impl Replay<'_> {
    fn insert(&mut self, r: ObservationRecord) {
        let recs = self.records.entry(r.device.clone()).or_default();
        let item = (r.timestamp, r.station);
        let at = recs.partition_point(|x| *x <= item);
        recs.insert(at, item);
        self.watermark = Some(self.watermark.map_or(r.timestamp, |w| w.max(r.timestamp)));
        self.touched.insert(r.device);
    }

    fn all_journeys(&mut self) -> Vec<Journey> {
        for d in std::mem::take(&mut self.touched) {
            let j = sessions(&d, &self.records[&d], self.cfg.gap_threshold);
            self.journeys.insert(d, j);
        }
        self.journeys.values().flatten().cloned().collect()
    }

    /// Finalizes windows no acceptable record can change any more, or all
    /// of them when `flush` is set, then emits what became settled.
    fn close(
        &mut self,
        index: usize,
        records: usize,
        dropped: usize,
        flush: bool,
    ) -> Result<StreamBatch> {
        let mut batch = StreamBatch {
            index,
            watermark: self.watermark.unwrap_or(0),
            records,
            dropped,
            rows: Vec::new(),
            flags: Vec::new(),
        };
        let Some(wm) = self.watermark else {
            return Ok(batch);
        };
        let spec = self.cfg.movement.window;
        let accept_from = wm - self.cfg.lateness;
        let next_end = spec.start(self.next_window) + spec.length;
        if !flush && next_end > accept_from {
            return Ok(batch);
        }
        let journeys = self.all_journeys();
        // a journey is final once a record extending it would be too late
        let open_start = journeys
            .iter()
            .filter(|j| j.end() + self.cfg.gap_threshold >= accept_from)
            .map(Journey::start)
            .min()
            .unwrap_or(Seconds::MAX);
        let mut finalized = false;
        for (w, idx) in window_assignments(&journeys, &spec).range(self.next_window..) {
            let end = spec.start(*w) + spec.length;
            if !flush && (end > accept_from || end > open_start) {
                break;
            }
            let clusters = window_clusters(&journeys, idx, &self.cfg.movement, *w)?;
            self.windows.insert(*w, clusters);
            self.next_window = w + 1;
            finalized = true;
        }
        if !finalized && !flush {
            return Ok(batch);
        }
        let (_, timetable) = combine_windows(
            self.windows.values(),
            &journeys,
            self.topology,
            &self.cfg.movement,
        );
        self.timetable = timetable;
        let horizon = if flush {
            f64::INFINITY
        } else {
            spec.start(self.next_window) as f64
        };
        let (from, settled) = (
            self.emitted_until,
            accept_from.min(spec.start(self.next_window)),
        );
        for t in &self.timetable.trips {
            for (s, e) in &t.envelope {
                if e.arrive_est >= from && e.arrive_est < horizon {
                    batch.rows.push(TimetableRow {
                        station: *s,
                        arrive_est: e.arrive_est,
                        depart_est: e.depart_est,
                        support: e.support,
                    });
                }
            }
        }
        batch.rows.sort_by(|a, b| {
            a.arrive_est
                .total_cmp(&b.arrive_est)
                .then(a.station.cmp(&b.station))
        });
        if let Some(dsg) = self.dsg {
            self.update_scaling(
                &journeys,
                dsg.gate,
                if flush { Seconds::MAX } else { settled },
            );
            batch.flags = self.flags(&journeys, dsg.model, from, horizon);
        }
        self.emitted_until = horizon;
        Ok(batch)
    }

    /// Feeds every scaling bin ending by `settled` into the table once.
    fn update_scaling(&mut self, journeys: &[Journey], gate: &[BinCount], settled: Seconds) {
        let width = self.scaling.width;
        let mut devices: BTreeMap<(StationId, i64), i64> = BTreeMap::new();
        for j in journeys {
            if let Some(s) = j.first_station() {
                *devices
                    .entry((s, time_bin(j.stops[&s].first_seen as f64, width)))
                    .or_default() += 1;
            }
        }
        let last = if settled == Seconds::MAX {
            i64::MAX
        } else {
            settled.div_euclid(width) - 1
        };
        for g in gate {
            if g.time_bin < self.scaled_until || g.time_bin > last || g.entries == 0 {
                continue;
            }
            let x = devices.get(&(g.station, g.time_bin)).copied().unwrap_or(0);
            self.scaling
                .update(g.station, g.time_bin, g.entries as f64, x as f64);
        }
        if last != i64::MAX {
            self.scaled_until = self.scaled_until.max(last + 1);
        }
    }

    fn flags(
        &self,
        journeys: &[Journey],
        model: &ModelHierarchy,
        from: f64,
        to: f64,
    ) -> Vec<DepartureFlag> {
        let waits = origin_waits(journeys);
        let mut out = Vec::new();
        for (station, deps) in departures_by_station(&self.timetable) {
            let w = waits.get(&station).map_or(&[][..], |v| v.as_slice());
            let key = SampleKey {
                line: self.topology.line_id.clone(),
                station,
            };
            for (i, &d) in deps.iter().enumerate() {
                if d < from || d >= to {
                    continue;
                }
                let prev = i.checked_sub(1).map(|p| deps[p]);
                let theta = self.scaling.theta(station, d);
                let f = extract_features(station, d, prev, w, theta, &self.cfg.features);
                let p = model.predict(&f.features, &key);
                out.push(DepartureFlag {
                    station,
                    depart: d,
                    probability: p.probability,
                    dsg: p.dsg,
                    severity: p.severity,
                    level: p.level,
                });
            }
        }
        out.sort_by(|a, b| {
            a.depart
                .total_cmp(&b.depart)
                .then(a.station.cmp(&b.station))
        });
        out
    }
}

/// Replays `records` in the given order as mini-batches of record time.
///
/// A batch closes when a record at or past its end arrives. Records older
/// than the newest timestamp seen minus `lateness` are dropped and counted.
/// Each batch finalizes the clustering windows that no acceptable record
/// can still change, rebuilds the timetable from them and emits the rows
/// (and, with a model, the departure flags) that became settled. The final
/// flush clusters the remaining windows, so when nothing was dropped the
/// final timetable equals [`batch_timetable`] on the same records.
pub fn stream_run<I>(
    records: I,
    topology: &LineTopology,
    cfg: &StreamConfig,
    dsg: Option<StreamDsg<'_>>,
) -> Result<StreamOutput>
where
    I: IntoIterator<Item = ObservationRecord>,
{
    cfg.validate()?;
    let known: HashSet<StationId> = topology.stations.iter().copied().collect();
    let mut replay = Replay {
        topology,
        cfg,
        dsg,
        records: BTreeMap::new(),
        journeys: BTreeMap::new(),
        touched: BTreeSet::new(),
        watermark: None,
        windows: BTreeMap::new(),
        next_window: 0,
        timetable: EstimatedTimetable::default(),
        emitted_until: f64::NEG_INFINITY,
        scaling: ScalingTable::new(SCALING_BIN, cfg.alpha),
        scaled_until: i64::MIN,
    };
    let (mut rejected, mut dropped_late) = (0, 0);
    let mut batches = Vec::new();
    let (mut in_batch, mut dropped) = (0usize, 0usize);
    let mut batch_end: Option<Seconds> = None;
    for r in records {
        if !known.contains(&r.station) || r.timestamp < 0 {
            rejected += 1;
            continue;
        }
        if let Some(b) = cfg.batch_seconds {
            let end = *batch_end.get_or_insert((r.timestamp.div_euclid(b) + 1) * b);
            if r.timestamp >= end {
                if in_batch + dropped > 0 {
                    batches.push(replay.close(batches.len(), in_batch, dropped, false)?);
                }
                (in_batch, dropped) = (0, 0);
                batch_end = Some((r.timestamp.div_euclid(b) + 1) * b);
            }
        }
        if replay
            .watermark
            .is_some_and(|w| r.timestamp < w - cfg.lateness)
        {
            dropped += 1;
            dropped_late += 1;
            continue;
        }
        replay.insert(r);
        in_batch += 1;
    }
    batches.push(replay.close(batches.len(), in_batch, dropped, true)?);
    let journeys = replay.journeys.values().map(Vec::len).sum();
    Ok(StreamOutput {
        batches,
        timetable: replay.timetable,
        journeys,
        dropped_late,
        rejected,
    })
}

/// `batch,watermark,station,arrive_est,depart_est,support` rows.
pub fn write_stream_rows_csv<W: Write>(writer: W, batches: &[StreamBatch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "batch",
        "watermark",
        "station",
        "arrive_est",
        "depart_est",
        "support",
    ])?;
    for b in batches {
        for r in &b.rows {
            w.write_record([
                b.index.to_string(),
                b.watermark.to_string(),
                r.station.0.to_string(),
                format!("{}", r.arrive_est),
                format!("{}", r.depart_est),
                r.support.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `batch,station,depart,probability,dsg,severity,level` rows.
pub fn write_stream_flags_csv<W: Write>(writer: W, batches: &[StreamBatch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "batch",
        "station",
        "depart",
        "probability",
        "dsg",
        "severity",
        "level",
    ])?;
    for b in batches {
        for f in &b.flags {
            w.write_record([
                b.index.to_string(),
                f.station.0.to_string(),
                format!("{:.1}", f.depart),
                format!("{:.4}", f.probability),
                (f.dsg as u8).to_string(),
                f.severity.to_string(),
                format!("{:?}", f.level).to_lowercase(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
