//! Observation records and journey vectorization.
//!
//! Raw sensing produces many records per device and station. A [`Journey`]
//! keeps only the first and last time a device was seen at each station of a
//! single trip, which is all the downstream clustering needs.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Integer seconds since the epoch of the trace.
pub type Seconds = i64;

/// Default split threshold between two journeys of one device.
pub const DEFAULT_GAP_THRESHOLD: Seconds = 3600;

/// Index of a station along its line direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque device token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn new(s: impl Into<String>) -> Self {
        DeviceId(s.into())
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainId(pub String);

impl fmt::Display for TrainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One sensing event: a device seen at a station at a given time.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub device: DeviceId,
    pub station: StationId,
    pub timestamp: Seconds,
}

impl ObservationRecord {
    pub fn new(device: impl Into<String>, station: u32, timestamp: Seconds) -> Self {
        ObservationRecord {
            device: DeviceId(device.into()),
            station: StationId(station),
            timestamp,
        }
    }
}

/// First and last time a device was seen at one station.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StopTimes {
    pub first_seen: Seconds,
    pub last_seen: Seconds,
}

impl StopTimes {
    pub fn new(first_seen: Seconds, last_seen: Seconds) -> Self {
        debug_assert!(first_seen <= last_seen);
        StopTimes {
            first_seen,
            last_seen,
        }
    }

    pub fn at(t: Seconds) -> Self {
        StopTimes {
            first_seen: t,
            last_seen: t,
        }
    }

    fn widen(&mut self, t: Seconds) {
        self.first_seen = self.first_seen.min(t);
        self.last_seen = self.last_seen.max(t);
    }
}

/// Identifies a journey across runs: device plus per-device journey counter.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JourneyKey {
    pub device: DeviceId,
    pub seq: u32,
}

/// Sparse per-station (first seen, last seen) vector of one device trip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Journey {
    pub device: DeviceId,
    pub journey_seq: u32,
    pub stops: BTreeMap<StationId, StopTimes>,
}

impl Journey {
    pub fn new(
        device: impl Into<String>,
        journey_seq: u32,
        stops: impl IntoIterator<Item = (u32, (Seconds, Seconds))>,
    ) -> Self {
        Journey {
            device: DeviceId(device.into()),
            journey_seq,
            stops: stops
                .into_iter()
                .map(|(s, (a, d))| (StationId(s), StopTimes::new(a, d)))
                .collect(),
        }
    }

    pub fn key(&self) -> JourneyKey {
        JourneyKey {
            device: self.device.clone(),
            seq: self.journey_seq,
        }
    }

    /// Earliest first-seen time over all stops.
    pub fn start(&self) -> Seconds {
        self.stops.values().map(|s| s.first_seen).min().unwrap_or(0)
    }

    pub fn end(&self) -> Seconds {
        self.stops.values().map(|s| s.last_seen).max().unwrap_or(0)
    }

    /// Station where the device was first observed (boarding side of the trip).
    pub fn first_station(&self) -> Option<StationId> {
        self.stops
            .iter()
            .min_by_key(|(s, t)| (t.first_seen, **s))
            .map(|(s, _)| *s)
    }

    pub fn get(&self, station: StationId) -> Option<&StopTimes> {
        self.stops.get(&station)
    }

    /// Re-expands the journey into records: the first and last sighting of
    /// each stop plus fillers every `step` seconds in between, so that
    /// re-vectorizing with a gap threshold of at least `step` reproduces it.
    pub fn expand_records(&self, step: Seconds) -> Vec<ObservationRecord> {
        let step = step.max(1);
        let mut out = Vec::new();
        for (&station, t) in &self.stops {
            let mut ts = t.first_seen;
            loop {
                out.push(ObservationRecord {
                    device: self.device.clone(),
                    station,
                    timestamp: ts,
                });
                if ts >= t.last_seen {
                    break;
                }
                ts = (ts + step).min(t.last_seen);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Up,
    Down,
}

/// Ordered stations of one line direction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineTopology {
    pub line_id: String,
    pub stations: Vec<StationId>,
    #[serde(default)]
    pub direction: Direction,
}

impl LineTopology {
    pub fn new(
        line_id: impl Into<String>,
        stations: Vec<StationId>,
        direction: Direction,
    ) -> Result<Self> {
        if stations.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least 2 stations, got {}",
                stations.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &stations {
            if !seen.insert(*s) {
                return Err(Error::InvalidTopology(format!("duplicate station {s}")));
            }
        }
        Ok(LineTopology {
            line_id: line_id.into(),
            stations,
            direction,
        })
    }

    /// A line with stations `0..n` in order.
    pub fn linear(line_id: impl Into<String>, n: u32) -> Result<Self> {
        Self::new(line_id, (0..n).map(StationId).collect(), Direction::Up)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn contains(&self, s: StationId) -> bool {
        self.stations.contains(&s)
    }

    /// Position of `s` along the line direction.
    pub fn position(&self, s: StationId) -> Option<usize> {
        self.stations.iter().position(|x| *x == s)
    }
}

/// Output of [`vectorize_journeys`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vectorized {
    pub journeys: Vec<Journey>,
    /// Records rejected for an unknown station or a negative timestamp.
    pub rejected: usize,
}

/// Collapses raw records into journeys.
///
/// Records are grouped per device and sorted by time; a new journey starts
/// whenever two consecutive records of a device are more than
/// `gap_threshold` seconds apart. Each journey keeps the min and max
/// timestamp per station. Output is sorted by device then journey counter.
pub fn vectorize_journeys<I>(
    records: I,
    topology: &LineTopology,
    gap_threshold: Seconds,
) -> Result<Vectorized>
where
    I: IntoIterator<Item = ObservationRecord>,
{
    if gap_threshold <= 0 {
        return Err(invalid(format!(
            "gap_threshold must be positive, got {gap_threshold}"
        )));
    }
    let known: HashSet<StationId> = topology.stations.iter().copied().collect();
    let mut per_device: BTreeMap<DeviceId, Vec<(Seconds, StationId)>> = BTreeMap::new();
    let mut rejected = 0;
    for r in records {
        if !known.contains(&r.station) || r.timestamp < 0 {
            rejected += 1;
            continue;
        }
        per_device
            .entry(r.device)
            .or_default()
            .push((r.timestamp, r.station));
    }
    let mut journeys = Vec::new();
    for (device, mut recs) in per_device {
        recs.sort_unstable();
        journeys.extend(sessions(&device, &recs, gap_threshold));
    }
    Ok(Vectorized { journeys, rejected })
}

/// Splits one device's time-sorted records into journeys.
pub(crate) fn sessions(
    device: &DeviceId,
    recs: &[(Seconds, StationId)],
    gap_threshold: Seconds,
) -> Vec<Journey> {
    let mut out = Vec::new();
    let mut stops: BTreeMap<StationId, StopTimes> = BTreeMap::new();
    let mut prev: Option<Seconds> = None;
    for &(ts, station) in recs {
        if let Some(p) = prev {
            if ts - p > gap_threshold {
                out.push(Journey {
                    device: device.clone(),
                    journey_seq: out.len() as u32,
                    stops: std::mem::take(&mut stops),
                });
            }
        }
        stops
            .entry(station)
            .and_modify(|s| s.widen(ts))
            .or_insert(StopTimes::at(ts));
        prev = Some(ts);
    }
    if !stops.is_empty() {
        out.push(Journey {
            device: device.clone(),
            journey_seq: out.len() as u32,
            stops,
        });
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    device: String,
    station: u32,
    timestamp: Seconds,
}

/// Reads a trace file. `.csv` files need a `device,station,timestamp`
/// header; anything else is read as JSON Lines.
pub fn read_trace(path: &Path) -> Result<Vec<ObservationRecord>> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let file = File::open(path)?;
    if is_csv {
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let mut out = Vec::new();
        for row in rdr.deserialize::<CsvRecord>() {
            let r = row?;
            out.push(ObservationRecord {
                device: DeviceId(r.device),
                station: StationId(r.station),
                timestamp: r.timestamp,
            });
        }
        Ok(out)
    } else {
        read_jsonl(BufReader::new(file))
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<ObservationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(writer: W, records: &[ObservationRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, records: &[ObservationRecord]) -> Result<()> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let mut w = csv::Writer::from_path(path)?;
        for r in records {
            w.serialize(CsvRecord {
                device: r.device.0.clone(),
                station: r.station.0,
                timestamp: r.timestamp,
            })?;
        }
        w.flush()?;
        Ok(())
    } else {
        write_jsonl(File::create(path)?, records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> LineTopology {
        LineTopology::linear("L", 10).unwrap()
    }

    #[test]
    fn single_record_is_a_point_stop() {
        let v =
            vectorize_journeys(vec![ObservationRecord::new("d1", 3, 100)], &line(), 3600).unwrap();
        assert_eq!(v.journeys, vec![Journey::new("d1", 0, [(3, (100, 100))])]);
    }

    #[test]
    fn min_max_per_station() {
        let recs = vec![
            ObservationRecord::new("d1", 3, 160),
            ObservationRecord::new("d1", 4, 300),
            ObservationRecord::new("d1", 3, 100),
        ];
        let v = vectorize_journeys(recs, &line(), 3600).unwrap();
        assert_eq!(
            v.journeys,
            vec![Journey::new("d1", 0, [(3, (100, 160)), (4, (300, 300))])]
        );
    }

    #[test]
    fn long_gap_splits_journeys() {
        let recs = vec![
            ObservationRecord::new("d1", 3, 100),
            ObservationRecord::new("d1", 3, 50000),
        ];
        let v = vectorize_journeys(recs, &line(), 3600).unwrap();
        assert_eq!(
            v.journeys,
            vec![
                Journey::new("d1", 0, [(3, (100, 100))]),
                Journey::new("d1", 1, [(3, (50000, 50000))])
            ]
        );
    }

    #[test]
    fn gap_equal_to_threshold_does_not_split() {
        let recs = vec![
            ObservationRecord::new("d1", 3, 0),
            ObservationRecord::new("d1", 4, 3600),
        ];
        let v = vectorize_journeys(recs, &line(), 3600).unwrap();
        assert_eq!(v.journeys.len(), 1);
    }

    #[test]
    fn unknown_station_is_counted_not_fatal() {
        let recs = vec![
            ObservationRecord::new("d1", 3, 100),
            ObservationRecord::new("d1", 42, 120),
            ObservationRecord::new("d2", 1, -5),
        ];
        let v = vectorize_journeys(recs, &line(), 3600).unwrap();
        assert_eq!(v.rejected, 2);
        assert_eq!(v.journeys.len(), 1);
    }

    #[test]
    fn rejects_non_positive_gap() {
        assert!(vectorize_journeys(Vec::new(), &line(), 0).is_err());
    }

    #[test]
    fn revisiting_a_station_widens_its_interval() {
        let recs = vec![
            ObservationRecord::new("d", 1, 10),
            ObservationRecord::new("d", 2, 20),
            ObservationRecord::new("d", 1, 30),
        ];
        let v = vectorize_journeys(recs, &line(), 3600).unwrap();
        assert_eq!(v.journeys[0].stops[&StationId(1)], StopTimes::new(10, 30));
    }

    #[test]
    fn topology_validation() {
        assert!(LineTopology::new("x", vec![StationId(0)], Direction::Up).is_err());
        assert!(LineTopology::new("x", vec![StationId(0), StationId(0)], Direction::Up).is_err());
        let t = LineTopology::new("x", vec![StationId(5), StationId(2)], Direction::Down).unwrap();
        assert_eq!(t.position(StationId(2)), Some(1));
    }

    #[test]
    fn jsonl_and_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            ObservationRecord::new("a", 1, 5),
            ObservationRecord::new("b", 2, 7),
        ];
        for name in ["t.jsonl", "t.csv"] {
            let p = dir.path().join(name);
            write_trace(&p, &recs).unwrap();
            assert_eq!(read_trace(&p).unwrap(), recs);
        }
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let data = "{\"device\":\"a\",\"station\":1,\"timestamp\":5}\nnot json\n";
        match read_jsonl(data.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
