//! Feature schema, CSV ingestion, standardization, time encoding and the
//! autoregressive-input fill rule.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geograph::EARTH_RADIUS_M;
use crate::tensor::Tensor2;

/// Satellite and meteorological columns, in CSV and feature order.
pub const MEASURED_COLUMNS: [(&str, &str, FeatureGroup); 11] = [
    ("sat_no2_molm2", "mol/m2", FeatureGroup::Satellite),
    ("aerosol_idx", "1", FeatureGroup::Satellite),
    ("wind_speed_ms", "m/s", FeatureGroup::Meteorological),
    ("wind_gust_ms", "m/s", FeatureGroup::Meteorological),
    ("wind_dir_deg", "deg", FeatureGroup::Meteorological),
    ("vpd_kpa", "kPa", FeatureGroup::Meteorological),
    ("temp_c", "degC", FeatureGroup::Meteorological),
    ("pressure_pa", "Pa", FeatureGroup::Meteorological),
    ("rel_humidity_pct", "%", FeatureGroup::Meteorological),
    ("dewpoint_c", "degC", FeatureGroup::Meteorological),
    ("cloud_cover_pct", "%", FeatureGroup::Meteorological),
];

pub const N_MEASURED: usize = MEASURED_COLUMNS.len();
pub const TIME_OFFSET: usize = N_MEASURED;
pub const N_TIME: usize = 6;
pub const DIST_ROAD: usize = TIME_OFFSET + N_TIME;
pub const PREV_NO2: usize = DIST_ROAD + 1;
pub const N_FEATURES: usize = PREV_NO2 + 1;

/// Column index of the wind-speed feature.
pub const WIND_SPEED: usize = 2;
/// Column index of the temperature feature.
pub const TEMPERATURE: usize = 6;

pub const LOCATIONS_HEADER: [&str; 4] = ["sensor_id", "lat", "lon", "dist_road_m"];

pub fn readings_header() -> Vec<&'static str> {
    let mut h = vec!["timestamp", "sensor_id", "no2_ugm3"];
    h.extend(MEASURED_COLUMNS.iter().map(|c| c.0));
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLocation {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub dist_road: f64,
}

impl SensorLocation {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64, dist_road: f64) -> Result<Self> {
        let loc = Self {
            id: id.into(),
            lat,
            lon,
            dist_road,
        };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidLocation {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if !(-90.0..=90.0).contains(&self.lat) {
            return bad("latitude outside [-90, 90]");
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return bad("longitude outside [-180, 180]");
        }
        if !(self.dist_road >= 0.0 && self.dist_road.is_finite()) {
            return bad("distance to road must be a nonnegative number");
        }
        Ok(())
    }

    pub fn coords(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Satellite,
    Meteorological,
    Time,
    Static,
    Autoregressive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub group: FeatureGroup,
}

/// Ordered model input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureSchema {
    /// 2 satellite, 9 meteorological, 6 cyclical time, distance to road and
    /// the previous-hour NO₂.
    pub fn standard() -> Self {
        let spec = |name: &str, unit: &str, group| FeatureSpec {
            name: name.into(),
            unit: unit.into(),
            group,
        };
        let mut features: Vec<FeatureSpec> = MEASURED_COLUMNS
            .iter()
            .map(|(n, u, g)| spec(n, u, *g))
            .collect();
        for name in ["hour_sin", "hour_cos", "dow_sin", "dow_cos", "woy_sin", "woy_cos"] {
            features.push(spec(name, "1", FeatureGroup::Time));
        }
        features.push(spec("dist_road_m", "m", FeatureGroup::Static));
        features.push(spec("prev_no2_ugm3", "ug/m3", FeatureGroup::Autoregressive));
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn count(&self, group: FeatureGroup) -> usize {
        self.features.iter().filter(|f| f.group == group).count()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Stable 64-bit fingerprint of names, units and groups.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.name.as_bytes());
            h.update([0u8]);
            h.update(f.unit.as_bytes());
            h.update([0u8]);
            h.update(format!("{:?}", f.group).as_bytes());
            h.update([0xffu8]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourlyFrame {
    pub timestamp: DateTime<Utc>,
    /// `[n_sensors × n_features]`
    pub features: Tensor2,
    /// NO₂ in µg/m³; NaN where the sensor is absent.
    pub target_no2: Vec<f64>,
    pub present: Vec<bool>,
}

impl HourlyFrame {
    pub fn target(&self, sensor: usize) -> Option<f64> {
        self.present[sensor].then(|| self.target_no2[sensor])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Why a ground-truth NO₂ value is being read. Lets instrumented sources
/// audit which pipeline stage touched which sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadPurpose {
    Training,
    RolloutInit,
    Metric,
}

/// Read access to ground-truth NO₂.
pub trait TargetSource: Sync {
    fn target(&self, frame: usize, sensor: usize, purpose: ReadPurpose) -> Option<f64>;
}

/// One raw CSV row worth of inputs for a (sensor, hour) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawReading {
    pub no2: f64,
    pub measured: [f64; N_MEASURED],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub locations: Vec<SensorLocation>,
    pub schema: FeatureSchema,
    pub frames: Vec<HourlyFrame>,
    pub stats: Option<StandardizationStats>,
}

impl TargetSource for Dataset {
    fn target(&self, frame: usize, sensor: usize, _purpose: ReadPurpose) -> Option<f64> {
        self.frames[frame].target(sensor)
    }
}

impl Dataset {
    /// Builds a dense hourly dataset from a `[frame][sensor]` grid of optional
    /// readings.
    ///
    /// Measured features of absent rows are carried forward from the sensor's
    /// last reading (backwards from its first one at the start of the series),
    /// or taken from the same-hour mean over present sensors if the sensor
    /// never reports. The autoregressive column is filled with
    /// [`fill_prev_no2`].
    pub fn from_readings(
        locations: Vec<SensorLocation>,
        start: DateTime<Utc>,
        readings: Vec<Vec<Option<RawReading>>>,
    ) -> Result<Self> {
        let n = locations.len();
        let mut seen = HashSet::new();
        for loc in &locations {
            loc.validate()?;
            if !seen.insert(loc.id.as_str()) {
                return Err(Error::InvalidLocation {
                    id: loc.id.clone(),
                    reason: "duplicate sensor id".into(),
                });
            }
        }
        if let Some((t, row)) = readings.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Shape(format!(
                "frame {t} has {} sensor slots for {n} sensors",
                row.len()
            )));
        }

        let carried = carry_measured(&readings, n);
        let frames = readings
            .iter()
            .enumerate()
            .map(|(t, row)| {
                let timestamp = start + Duration::hours(t as i64);
                let time = encode_time(timestamp);
                let mut features = Tensor2::zeros(n, N_FEATURES);
                let mut target_no2 = vec![0.0; n];
                let mut present = vec![false; n];
                for s in 0..n {
                    let f = features.row_mut(s);
                    f[..N_MEASURED].copy_from_slice(&carried[t][s]);
                    f[TIME_OFFSET..TIME_OFFSET + N_TIME].copy_from_slice(&time);
                    f[DIST_ROAD] = locations[s].dist_road;
                    if let Some(r) = row[s] {
                        target_no2[s] = r.no2;
                        present[s] = true;
                    }
                }
                HourlyFrame {
                    timestamp,
                    features,
                    target_no2,
                    present,
                }
            })
            .collect();

        let ds = Dataset {
            locations,
            schema: FeatureSchema::standard(),
            frames,
            stats: None,
        };
        Ok(fill_prev_no2(&ds))
    }

    pub fn n_sensors(&self) -> usize {
        self.locations.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.id == id)
    }

    /// Mean over every present NO₂ reading; 0 when nothing is observed.
    pub fn mean_no2(&self) -> f64 {
        let (sum, count) = self
            .frames
            .iter()
            .flat_map(|f| f.present.iter().zip(&f.target_no2))
            .filter(|(p, _)| **p)
            .fold((0.0, 0usize), |(s, c), (_, y)| (s + y, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn present_count(&self, sensor: usize) -> usize {
        self.frames.iter().filter(|f| f.present[sensor]).count()
    }

    /// Maps a physical previous-hour NO₂ value into the model's input space.
    pub fn encode_prev(&self, value: f64) -> f64 {
        match &self.stats {
            Some(st) => (value - st.mean[PREV_NO2]) / st.std[PREV_NO2],
            None => value,
        }
    }

    /// Copy with every reading of `sensor` removed. Its features stay.
    pub fn with_hidden_sensor(&self, sensor: usize) -> Dataset {
        let mut ds = self.clone();
        for f in &mut ds.frames {
            f.present[sensor] = false;
            f.target_no2[sensor] = 0.0;
        }
        fill_prev_no2(&ds)
    }

    /// The first `n` frames.
    pub fn truncated(&self, n: usize) -> Dataset {
        let mut ds = self.clone();
        ds.frames.truncate(n);
        ds
    }

    /// Observed series of one sensor as `(frame index, NO₂)` pairs.
    pub fn observed_series(&self, sensor: usize) -> Vec<(usize, f64)> {
        self.frames
            .iter()
            .enumerate()
            .filter_map(|(t, f)| f.target(sensor).map(|y| (t, y)))
            .collect()
    }
}

fn carry_measured(readings: &[Vec<Option<RawReading>>], n: usize) -> Vec<Vec<[f64; N_MEASURED]>> {
    let n_frames = readings.len();
    let mut out = vec![vec![[f64::NAN; N_MEASURED]; n]; n_frames];
    for s in 0..n {
        let first = readings.iter().find_map(|r| r[s]);
        let mut last = first.map(|r| r.measured);
        for t in 0..n_frames {
            if let Some(r) = readings[t][s] {
                last = Some(r.measured);
            }
            if let Some(m) = last {
                out[t][s] = m;
            }
        }
    }
    // sensors that never report borrow the same-hour mean of the others
    for t in 0..n_frames {
        let present: Vec<[f64; N_MEASURED]> = readings[t].iter().flatten().map(|r| r.measured).collect();
        for s in 0..n {
            if out[t][s][0].is_nan() {
                let mut m = [0.0; N_MEASURED];
                if !present.is_empty() {
                    for p in &present {
                        for (a, b) in m.iter_mut().zip(p) {
                            *a += b;
                        }
                    }
                    m.iter_mut().for_each(|v| *v /= present.len() as f64);
                }
                out[t][s] = m;
            }
        }
    }
    out
}

/// Cyclical `(sin, cos)` pairs for hour-of-day (period 24), day-of-week
/// (period 7, Monday = 0) and ISO week-of-year (period 52, week 1 = 0).
pub fn encode_time(timestamp: DateTime<Utc>) -> [f64; N_TIME] {
    let hour = timestamp.hour() as f64;
    let dow = timestamp.weekday().num_days_from_monday() as f64;
    let week = (timestamp.iso_week().week() - 1) as f64;
    let pair = |v: f64, period: f64| {
        let a = 2.0 * PI * v / period;
        (a.sin(), a.cos())
    };
    let (hs, hc) = pair(hour, 24.0);
    let (ds, dc) = pair(dow, 7.0);
    let (ws, wc) = pair(week, 52.0);
    [hs, hc, ds, dc, ws, wc]
}

/// Fills the autoregressive column.
///
/// The value at frame `t` is the reading at `t-1` if present, otherwise the
/// most recent earlier reading at the same hour of day as `t-1`, otherwise the
/// dataset-wide mean NO₂. Values are written in the dataset's input space, so
/// this works before or after standardization.
pub fn fill_prev_no2(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    let mean = ds.mean_no2();
    for s in 0..ds.n_sensors() {
        for t in 0..ds.n_frames() {
            let raw = if t == 0 {
                mean
            } else {
                let mut k = t - 1;
                loop {
                    if let Some(y) = ds.frames[k].target(s) {
                        break y;
                    }
                    if k < 24 {
                        break mean;
                    }
                    k -= 24;
                }
            };
            out.frames[t].features.set(s, PREV_NO2, ds.encode_prev(raw));
        }
    }
    out
}

impl StandardizationStats {
    /// Column statistics over present rows (population standard deviation).
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let width = ds.n_features();
        let mut mean = vec![0.0; width];
        let mut std = vec![0.0; width];
        for j in 0..width {
            let col: Vec<f64> = ds
                .frames
                .iter()
                .flat_map(|f| (0..f.present.len()).filter(|&s| f.present[s]).map(move |s| f.features.get(s, j)))
                .collect();
            if col.len() < 2 {
                return Err(Error::DegenerateFeature(ds.schema.features[j].name.clone()));
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            let sd = var.sqrt();
            mean[j] = m;
            std[j] = if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    /// Standardizes every row (present or not) with these statistics.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.stats.is_some() {
            return Err(Error::AlreadyStandardized);
        }
        self.check_width(ds)?;
        let mut out = ds.clone();
        for f in &mut out.frames {
            for s in 0..f.features.rows() {
                for (j, v) in f.features.row_mut(s).iter_mut().enumerate() {
                    *v = (*v - self.mean[j]) / self.std[j];
                }
            }
        }
        out.stats = Some(self.clone());
        Ok(out)
    }

    /// Undoes [`apply`](Self::apply).
    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_width(ds)?;
        let mut out = ds.clone();
        for f in &mut out.frames {
            for s in 0..f.features.rows() {
                for (j, v) in f.features.row_mut(s).iter_mut().enumerate() {
                    *v = *v * self.std[j] + self.mean[j];
                }
            }
        }
        out.stats = None;
        Ok(out)
    }

    fn check_width(&self, ds: &Dataset) -> Result<()> {
        if self.mean.len() != ds.n_features() || self.std.len() != ds.n_features() {
            return Err(Error::SchemaMismatch(format!(
                "statistics cover {} features, dataset has {}",
                self.mean.len(),
                ds.n_features()
            )));
        }
        Ok(())
    }
}

/// Standardizes every feature column to zero mean and unit variance over
/// present entries. Targets stay in µg/m³.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    if ds.stats.is_some() {
        return Err(Error::AlreadyStandardized);
    }
    let stats = StandardizationStats::fit(ds)?;
    Ok((stats.apply(ds)?, stats))
}

/// A road centre line as `(lat, lon)` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline(pub Vec<(f64, f64)>);

/// Minimum distance in meters from a location to any road segment, using a
/// local equirectangular projection centred on the location.
pub fn distance_to_road(loc: &SensorLocation, roads: &[Polyline]) -> Result<f64> {
    if roads.is_empty() {
        return Err(Error::Empty("road list"));
    }
    let k = EARTH_RADIUS_M * PI / 180.0;
    let cos_lat = loc.lat.to_radians().cos();
    let project = |(lat, lon): (f64, f64)| ((lon - loc.lon) * cos_lat * k, (lat - loc.lat) * k);
    let mut best = f64::INFINITY;
    for road in roads {
        if road.0.len() < 2 {
            return Err(Error::InvalidArgument("road polyline needs at least 2 vertices".into()));
        }
        for seg in road.0.windows(2) {
            let a = project(seg[0]);
            let b = project(seg[1]);
            best = best.min(origin_to_segment(a, b));
        }
    }
    Ok(best)
}

fn origin_to_segment(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (-(a.0 * dx + a.1 * dy) / len2).clamp(0.0, 1.0)
    };
    let (px, py) = (a.0 + t * dx, a.1 + t * dy);
    (px * px + py * py).sqrt()
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn csv_parse_error(file: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        file: file.to_string(),
        line,
        msg: e.to_string(),
    }
}

fn check_header(file: &str, got: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            file: file.to_string(),
            line: 1,
            msg: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_f64(file: &str, line: u64, column: &str, raw: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        msg: format!("column `{column}`: `{raw}` is not a number"),
    })
}

pub fn read_locations(path: &Path) -> Result<Vec<SensorLocation>> {
    let file = file_label(path);
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| csv_parse_error(&file, e))?;
    check_header(&file, rdr.headers().map_err(|e| csv_parse_error(&file, e))?, &LOCATIONS_HEADER)?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_error(&file, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim().to_string();
        let loc = SensorLocation {
            lat: parse_f64(&file, line, "lat", &rec[1])?,
            lon: parse_f64(&file, line, "lon", &rec[2])?,
            dist_road: parse_f64(&file, line, "dist_road_m", &rec[3])?,
            id,
        };
        loc.validate().map_err(|e| Error::Parse {
            file: file.clone(),
            line,
            msg: e.to_string(),
        })?;
        if !ids.insert(loc.id.clone()) {
            return Err(Error::Parse {
                file: file.clone(),
                line,
                msg: format!("duplicate sensor id `{}`", loc.id),
            });
        }
        out.push(loc);
    }
    if out.is_empty() {
        return Err(Error::Empty("locations file has no sensors"));
    }
    Ok(out)
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let ts = DateTime::parse_from_rfc3339(raw.trim()).ok()?.with_timezone(&Utc);
    (ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0).then_some(ts)
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Loads `locations.csv` and `readings.csv` into a dense hourly dataset.
pub fn load_dataset(locations_path: &Path, readings_path: &Path) -> Result<Dataset> {
    let locations = read_locations(locations_path)?;
    let index: HashMap<&str, usize> = locations.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();

    let file = file_label(readings_path);
    let mut rdr = csv::ReaderBuilder::new().from_path(readings_path).map_err(|e| csv_parse_error(&file, e))?;
    check_header(&file, rdr.headers().map_err(|e| csv_parse_error(&file, e))?, &readings_header())?;
    let header = readings_header();

    let mut rows: Vec<(DateTime<Utc>, usize, RawReading)> = Vec::new();
    let mut keys = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_parse_error(&file, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| Error::Timestamp {
            file: file.clone(),
            line,
            value: rec[0].to_string(),
        })?;
        let id = rec[1].trim();
        let sensor = *index.get(id).ok_or_else(|| Error::UnknownSensor {
            file: file.clone(),
            line,
            id: id.to_string(),
        })?;
        if !keys.insert((ts, sensor)) {
            return Err(Error::DuplicateReading {
                file: file.clone(),
                line,
                id: id.to_string(),
                timestamp: format_timestamp(ts),
            });
        }
        let no2 = parse_f64(&file, line, "no2_ugm3", &rec[2])?;
        let mut measured = [0.0; N_MEASURED];
        for (k, m) in measured.iter_mut().enumerate() {
            *m = parse_f64(&file, line, header[3 + k], &rec[3 + k])?;
        }
        if !no2.is_finite() || measured.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                file: file.clone(),
                line,
                msg: "non-finite value".into(),
            });
        }
        rows.push((ts, sensor, RawReading { no2, measured }));
    }

    let start = rows.iter().map(|r| r.0).min().ok_or(Error::Empty("readings file has no rows"))?;
    let end = rows.iter().map(|r| r.0).max().expect("non-empty");
    let n_frames = ((end - start).num_hours() + 1) as usize;
    let mut grid = vec![vec![None; locations.len()]; n_frames];
    for (ts, s, r) in rows {
        grid[(ts - start).num_hours() as usize][s] = Some(r);
    }
    Dataset::from_readings(locations, start, grid)
}

/// Writes `locations.csv` and `readings.csv` for the present rows of an
/// unstandardized dataset.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.stats.is_some() {
        return Err(Error::InvalidArgument("refusing to write a standardized dataset".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut w = File::create(dir.join("locations.csv"))?;
    writeln!(w, "{}", LOCATIONS_HEADER.join(","))?;
    for l in &ds.locations {
        writeln!(w, "{},{},{},{}", l.id, l.lat, l.lon, l.dist_road)?;
    }
    let mut w = std::io::BufWriter::new(File::create(dir.join("readings.csv"))?);
    writeln!(w, "{}", readings_header().join(","))?;
    for f in &ds.frames {
        let ts = format_timestamp(f.timestamp);
        for s in 0..ds.n_sensors() {
            if let Some(y) = f.target(s) {
                write!(w, "{ts},{},{y}", ds.locations[s].id)?;
                for v in &f.features.row(s)[..N_MEASURED] {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Convenience for tests and generators: the UTC start of a calendar day.
pub fn utc_midnight(year: i32, month: u32, day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, day, 0, 0, 0).single().expect("valid date")
}
