use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trace::{Journey, Seconds, StationId};

/// Width of a scaling bin.
pub const SCALING_BIN: Seconds = 600;
pub const DEFAULT_ALPHA: f64 = 0.3;

pub fn time_bin(t: f64, width: Seconds) -> i64 {
    (t / width as f64).floor() as i64
}

/// A count per station and time bin: fare-gate entries or connected devices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCount {
    pub station: StationId,
    pub time_bin: i64,
    pub entries: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactor {
    pub station: StationId,
    pub time_bin: i64,
    pub theta: f64,
    pub alpha: f64,
}

impl ScalingFactor {
    /// Auto-regressive update towards `y / x`; `None` when `x` is zero.
    pub fn update(&self, y: f64, x: f64) -> Option<ScalingFactor> {
        if x <= 0.0 || y < 0.0 {
            return None;
        }
        let theta = (1.0 - self.alpha) * self.theta + self.alpha * (y / x);
        Some(ScalingFactor {
            theta,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub factors: Vec<ScalingFactor>,
    /// Bins with gate entries but no devices.
    pub skipped: Vec<(StationId, i64)>,
}

/// `theta = Y / X` for every bin present in both inputs. Bins with X = 0
/// (or missing from X) are skipped and reported.
pub fn estimate_scaling(
    gate: &[BinCount],
    devices: &[BinCount],
    alpha: f64,
) -> Result<ScalingEstimate> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha must lie in (0, 1]"));
    }
    let mut x: BTreeMap<(StationId, i64), i64> = BTreeMap::new();
    for (i, c) in devices.iter().enumerate() {
        if c.entries < 0 {
            return Err(Error::NegativeCount(i));
        }
        *x.entry((c.station, c.time_bin)).or_default() += c.entries;
    }
    let mut y: BTreeMap<(StationId, i64), i64> = BTreeMap::new();
    for (i, c) in gate.iter().enumerate() {
        if c.entries < 0 {
            return Err(Error::NegativeCount(i));
        }
        *y.entry((c.station, c.time_bin)).or_default() += c.entries;
    }
    let mut out = ScalingEstimate::default();
    for ((station, time_bin), yv) in y {
        match x.get(&(station, time_bin)) {
            Some(&xv) if xv > 0 => {
                if yv == 0 {
                    // a zero ratio is not a usable multiplier
                    out.skipped.push((station, time_bin));
                    continue;
                }
                out.factors.push(ScalingFactor {
                    station,
                    time_bin,
                    theta: yv as f64 / xv as f64,
                    alpha,
                })
            }
            _ => {
                log::debug!("scaling bin ({station}, {time_bin}) has no devices");
                out.skipped.push((station, time_bin));
            }
        }
    }
    Ok(out)
}

/// Scaling factors by station and bin, with online updates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub width: Seconds,
    pub alpha: f64,
    cells: BTreeMap<StationId, BTreeMap<i64, f64>>,
    /// Updates refused because no device was seen.
    pub skipped_updates: usize,
}

impl ScalingTable {
    pub fn new(width: Seconds, alpha: f64) -> Self {
        ScalingTable {
            width,
            alpha,
            cells: BTreeMap::new(),
            skipped_updates: 0,
        }
    }

    pub fn from_factors(factors: &[ScalingFactor], width: Seconds, alpha: f64) -> Self {
        let mut t = ScalingTable::new(width, alpha);
        for f in factors {
            t.cells
                .entry(f.station)
                .or_default()
                .insert(f.time_bin, f.theta);
        }
        t
    }

    /// Feeds one new observation into a cell. An empty cell takes the ratio.
    pub fn update(&mut self, station: StationId, time_bin: i64, y: f64, x: f64) {
        if x <= 0.0 {
            self.skipped_updates += 1;
            return;
        }
        let alpha = self.alpha;
        let cell = self.cells.entry(station).or_default();
        let theta = match cell.get(&time_bin) {
            Some(&prev) => ScalingFactor {
                station,
                time_bin,
                theta: prev,
                alpha,
            }
            .update(y, x)
            .map_or(prev, |f| f.theta),
            None => y / x,
        };
        cell.insert(time_bin, theta);
    }

    /// Theta for the bin; falls back on the station mean, then the overall
    /// mean, then 1.
    pub fn theta(&self, station: StationId, t: f64) -> f64 {
        let bin = time_bin(t, self.width);
        if let Some(cell) = self.cells.get(&station) {
            if let Some(&v) = cell.get(&bin) {
                return v;
            }
            if !cell.is_empty() {
                return cell.values().sum::<f64>() / cell.len() as f64;
            }
        }
        let all: Vec<f64> = self
            .cells
            .values()
            .flat_map(|c| c.values().copied())
            .collect();
        if all.is_empty() {
            1.0
        } else {
            all.iter().sum::<f64>() / all.len() as f64
        }
    }

    pub fn factors(&self) -> Vec<ScalingFactor> {
        self.cells
            .iter()
            .flat_map(|(&station, c)| {
                c.iter().map(move |(&time_bin, &theta)| ScalingFactor {
                    station,
                    time_bin,
                    theta,
                    alpha: self.alpha,
                })
            })
            .collect()
    }
}

/// Distinct journeys starting at each station per bin: the device side of
/// the scaling ratio.
pub fn device_counts(journeys: &[Journey], width: Seconds) -> Vec<BinCount> {
    let mut acc: BTreeMap<(StationId, i64), i64> = BTreeMap::new();
    for j in journeys {
        if let Some(s) = j.first_station() {
            *acc.entry((s, time_bin(j.stops[&s].first_seen as f64, width)))
                .or_default() += 1;
        }
    }
    acc.into_iter()
        .map(|((station, time_bin), entries)| BinCount {
            station,
            time_bin,
            entries,
        })
        .collect()
}

pub fn read_gate_csv<R: Read>(reader: R) -> Result<Vec<BinCount>> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(reader)
        .deserialize::<(u32, i64, i64)>()
        .enumerate()
    {
        let (s, b, e) = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        if e < 0 {
            return Err(Error::NegativeCount(i));
        }
        out.push(BinCount {
            station: StationId(s),
            time_bin: b,
            entries: e,
        });
    }
    Ok(out)
}

pub fn write_gate_csv<W: Write>(writer: W, counts: &[BinCount]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["station", "time_bin", "entries"])?;
    for c in counts {
        w.write_record([
            c.station.0.to_string(),
            c.time_bin.to_string(),
            c.entries.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
