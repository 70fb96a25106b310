//! Measurement ingestion, projection to planar meters, and export helpers.

pub mod synth;
pub mod utm;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{FedmapError, Result};
use crate::seed;

pub use synth::{synth_trajectories, SynthConfig};
pub use utm::UtmCoord;

/// Exact header of the measurement CSV.
pub const CSV_HEADER: [&str; 6] = ["user_id", "cell_id", "timestamp", "lat", "lon", "rsrp"];

/// One geotagged signal-strength sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub user_id: u32,
    pub cell_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub easting: f64,
    pub northing: f64,
    pub rsrp: f64,
}

impl Measurement {
    pub fn location(&self) -> [f64; 2] {
        [self.easting, self.northing]
    }
}

/// Measurements of one cell, sorted by `(user_id, timestamp)`, projected into a
/// single UTM zone.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub measurements: Vec<Measurement>,
    pub cell_id: Option<String>,
    pub zone: Option<u8>,
    pub north: bool,
}

impl Dataset {
    /// Projects and sorts raw measurements. Rejects data spanning two zones.
    pub fn from_measurements(mut measurements: Vec<Measurement>) -> Result<Self> {
        let mut zone = None;
        let mut north = true;
        for m in &mut measurements {
            let z = utm::zone_for(m.lon);
            match zone {
                None => {
                    zone = Some(z);
                    north = m.lat >= 0.0;
                }
                Some(z0) if z0 != z => return Err(FedmapError::CrossZone(z0, z)),
                _ => {}
            }
            let c = utm::to_utm_in_zone(m.lat, m.lon, z)?;
            m.easting = c.easting;
            m.northing = c.northing;
        }
        measurements.sort_by(|a, b| (a.user_id, a.timestamp).cmp(&(b.user_id, b.timestamp)));
        let cell_id = measurements.first().map(|m| m.cell_id.clone());
        Ok(Self {
            measurements,
            cell_id,
            zone,
            north,
        })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn users(&self) -> Vec<u32> {
        let mut u: Vec<u32> = self.measurements.iter().map(|m| m.user_id).collect();
        u.dedup();
        u
    }

    pub fn user(&self, user_id: u32) -> impl Iterator<Item = &Measurement> {
        self.measurements.iter().filter(move |m| m.user_id == user_id)
    }

    fn with_measurements(&self, measurements: Vec<Measurement>) -> Self {
        Self {
            measurements,
            cell_id: self.cell_id.clone(),
            zone: self.zone,
            north: self.north,
        }
    }

    /// Random per-user hold-out: returns `(train, test)`, both keeping the sort order.
    pub fn split_holdout(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(FedmapError::Config(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let mut is_test = vec![false; self.len()];
        let mut start = 0;
        while start < self.len() {
            let user = self.measurements[start].user_id;
            let end = start + self.measurements[start..].iter().take_while(|m| m.user_id == user).count();
            let mut idx: Vec<usize> = (start..end).collect();
            idx.shuffle(&mut seed::rng_for(seed, &[0x5711, user as u64]));
            let n_test = ((end - start) as f64 * test_fraction).round() as usize;
            for &i in &idx[..n_test] {
                is_test[i] = true;
            }
            start = end;
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (m, t) in self.measurements.iter().zip(is_test) {
            if t {
                test.push(m.clone());
            } else {
                train.push(m.clone());
            }
        }
        Ok((self.with_measurements(train), self.with_measurements(test)))
    }

    /// Converts planar meters back to (lat, lon) in this dataset's zone.
    pub fn to_lat_lon(&self, p: [f64; 2]) -> Option<(f64, f64)> {
        let zone = self.zone?;
        Some(utm::from_utm(UtmCoord {
            easting: p[0],
            northing: p[1],
            zone,
            north: self.north,
        }))
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse().map_err(|_| FedmapError::Parse {
        line,
        reason: format!("cannot parse {} from {raw:?}", CSV_HEADER[i]),
    })
}

/// Reads measurements in the `user_id,cell_id,timestamp,lat,lon,rsrp` schema.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(FedmapError::Parse {
            line: 1,
            reason: format!("header must be {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != CSV_HEADER.len() {
            return Err(FedmapError::Parse {
                line,
                reason: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let lat: f64 = parse_field(&rec, 3, line)?;
        let lon: f64 = parse_field(&rec, 4, line)?;
        let rsrp: f64 = parse_field(&rec, 5, line)?;
        if !lat.is_finite() || lat.abs() > 90.0 {
            return Err(FedmapError::Parse {
                line,
                reason: format!("latitude {lat} outside [-90, 90]"),
            });
        }
        if !lon.is_finite() || lon.abs() > 180.0 {
            return Err(FedmapError::Parse {
                line,
                reason: format!("longitude {lon} outside [-180, 180]"),
            });
        }
        if !rsrp.is_finite() {
            return Err(FedmapError::Parse {
                line,
                reason: "rsrp is not finite".into(),
            });
        }
        out.push(Measurement {
            user_id: parse_field(&rec, 0, line)?,
            cell_id: rec.get(1).unwrap_or("").trim().to_string(),
            timestamp: parse_field(&rec, 2, line)?,
            lat,
            lon,
            easting: 0.0,
            northing: 0.0,
            rsrp,
        });
    }
    if out.is_empty() {
        return Err(FedmapError::Empty("no measurement rows".into()));
    }
    Dataset::from_measurements(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv(File::open(path)?)
}

pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for m in &ds.measurements {
        w.write_record(&[
            m.user_id.to_string(),
            m.cell_id.clone(),
            m.timestamp.to_string(),
            m.lat.to_string(),
            m.lon.to_string(),
            m.rsrp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Interval index of a timestamp, counting from `origin` in steps of `interval_s`.
pub fn interval_index(timestamp: i64, origin: i64, interval_s: i64) -> usize {
    ((timestamp - origin).max(0) / interval_s) as usize
}

/// Per-user batch counts for an interval length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserBatchStats {
    pub user_id: u32,
    /// Sizes of the non-empty intervals, in time order.
    pub sizes: Vec<usize>,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl UserBatchStats {
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Batch-size statistics per user for interval length `interval_s`, with
/// intervals anchored at the dataset's earliest timestamp.
pub fn summarize(ds: &Dataset, interval_s: i64) -> Vec<UserBatchStats> {
    let Some(origin) = ds.measurements.iter().map(|m| m.timestamp).min() else {
        return Vec::new();
    };
    let mut per_user: BTreeMap<u32, BTreeMap<usize, usize>> = BTreeMap::new();
    for m in &ds.measurements {
        *per_user
            .entry(m.user_id)
            .or_default()
            .entry(interval_index(m.timestamp, origin, interval_s))
            .or_default() += 1;
    }
    per_user
        .into_iter()
        .map(|(user_id, counts)| {
            let sizes: Vec<usize> = counts.into_values().collect();
            let mean = if sizes.is_empty() {
                0.0
            } else {
                sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
            };
            UserBatchStats {
                user_id,
                min: sizes.iter().copied().min().unwrap_or(0),
                max: sizes.iter().copied().max().unwrap_or(0),
                mean,
                sizes,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    True,
    Reconstructed,
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub location: [f64; 2],
    pub kind: PointKind,
    pub round: usize,
}

/// GeoJSON FeatureCollection of points with `{kind, round}` properties.
pub fn geojson_points(ds: &Dataset, points: &[LabeledPoint]) -> serde_json::Value {
    let features: Vec<serde_json::Value> = points
        .iter()
        .filter_map(|p| {
            let (lat, lon) = ds.to_lat_lon(p.location)?;
            Some(json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
                "properties": {"kind": p.kind, "round": p.round},
            }))
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
