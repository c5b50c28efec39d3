//! Synthetic cities with diurnal and weekly cycles, a spatially correlated
//! AR(1) pollution field and meteorology that shifts NO₂.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{distance_to_road, utc_midnight, Dataset, Polyline, RawReading, SensorLocation, N_MEASURED};
use crate::error::{Error, Result};
use crate::geograph::haversine;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    /// About 8 × 8 km around central Bristol.
    pub const BRISTOL: BoundingBox = BoundingBox {
        lat_min: 51.42,
        lat_max: 51.49,
        lon_min: -2.65,
        lon_max: -2.53,
    };

    /// About 20 × 17 km of inner London.
    pub const LONDON: BoundingBox = BoundingBox {
        lat_min: 51.43,
        lat_max: 51.58,
        lon_min: -0.25,
        lon_max: 0.04,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat_min < self.lat_max
            && self.lon_min < self.lon_max
            && self.lat_min >= -90.0
            && self.lat_max <= 90.0
            && self.lon_min >= -180.0
            && self.lon_max <= 180.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("degenerate bounding box {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityConfig {
    pub n_sensors: usize,
    pub n_hours: usize,
    pub bbox: BoundingBox,
    pub seed: u64,
    /// AR(1) coefficient of the spatial field.
    pub rho: f64,
    /// µg/m³. The weekday/weekend swing is a third of it.
    pub diurnal_amplitude: f64,
    pub base_level: f64,
    pub length_scale_m: f64,
    pub noise_std: f64,
    /// Sensor scales are drawn uniformly from `1 ± spread`.
    pub scale_spread: f64,
    /// Stationary standard deviation of the spatial field, µg/m³.
    pub field_std: f64,
    /// µg/m³ per m/s of wind above its long-run mean.
    pub wind_effect: f64,
    /// µg/m³ per °C above 10 °C.
    pub temp_effect: f64,
    /// Probability that a (sensor, hour) reading is missing.
    pub missing_rate: f64,
    pub n_roads: usize,
    pub start: DateTime<Utc>,
    pub id_prefix: String,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            n_sensors: 8,
            n_hours: 4000,
            bbox: BoundingBox::BRISTOL,
            seed: 0,
            rho: 0.9,
            diurnal_amplitude: 15.0,
            base_level: 30.0,
            length_scale_m: 2000.0,
            noise_std: 4.0,
            scale_spread: 0.4,
            field_std: 15.0,
            wind_effect: -4.0,
            temp_effect: -0.3,
            missing_rate: 0.0,
            n_roads: 3,
            start: utc_midnight(2023, 1, 2),
            id_prefix: "S".into(),
        }
    }
}

impl CityConfig {
    /// Data-rich source city for transfer experiments: 60 sensors over a
    /// larger area with a higher base level.
    pub fn source_city(seed: u64) -> Self {
        Self {
            n_sensors: 60,
            bbox: BoundingBox::LONDON,
            base_level: 38.0,
            seed,
            id_prefix: "L".into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(format!("city config: {m}")));
        if self.n_sensors < 2 {
            return bad("at least 2 sensors");
        }
        if self.n_hours == 0 {
            return bad("at least 1 hour");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.scale_spread) {
            return bad("scale spread must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing rate must lie in [0, 1)");
        }
        let finite_nonneg = [self.noise_std, self.field_std, self.diurnal_amplitude, self.base_level];
        if finite_nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("levels, amplitudes and deviations must be finite and >= 0");
        }
        if !(self.length_scale_m > 0.0 && self.length_scale_m.is_finite()) {
            return bad("length scale must be positive");
        }
        if !(self.wind_effect.is_finite() && self.temp_effect.is_finite()) {
            return bad("covariate effects must be finite");
        }
        Ok(())
    }
}

const WIND_MEAN: f64 = 4.0;
const TEMP_REF: f64 = 10.0;
const SAT_PER_UGM3: f64 = 2.5e-6;
const SAT_NOISE: f64 = 8e-6;

/// Stationary AR(1) process.
struct Ar1 {
    phi: f64,
    innov: f64,
    value: f64,
}

impl Ar1 {
    fn new(phi: f64, std: f64, rng: &mut Rng) -> Self {
        let value = std * rng.sample::<f64, _>(StandardNormal);
        Self {
            phi,
            innov: std * (1.0 - phi * phi).sqrt(),
            value,
        }
    }

    fn step(&mut self, rng: &mut Rng) -> f64 {
        self.value = self.phi * self.value + self.innov * rng.sample::<f64, _>(StandardNormal);
        self.value
    }
}

fn gauss(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Mean diurnal profile with morning and evening peaks, zero mean over a day.
fn diurnal(hour: f64, amplitude: f64) -> f64 {
    amplitude * (0.75 * (2.0 * PI * (hour - 9.0) / 24.0).cos() + 0.25 * (4.0 * PI * (hour - 8.0) / 24.0).cos())
}

/// Weekday uplift and weekend dip, zero mean over a week.
fn weekly(weekday: u32, amplitude: f64) -> f64 {
    let a = amplitude / 3.0;
    if weekday < 5 {
        0.3 * a
    } else {
        -0.75 * a
    }
}

fn saturation_kpa(t: f64) -> f64 {
    0.6108 * (17.27 * t / (t + 237.3)).exp()
}

fn random_roads(bbox: &BoundingBox, n: usize, rng: &mut Rng) -> Vec<Polyline> {
    let lat = |u: f64| bbox.lat_min + u * (bbox.lat_max - bbox.lat_min);
    let lon = |u: f64| bbox.lon_min + u * (bbox.lon_max - bbox.lon_min);
    (0..n)
        .map(|i| {
            let mid = (lat(rng.random()), lon(rng.random()));
            let (a, b) = if i % 2 == 0 {
                ((lat(rng.random()), bbox.lon_min), (lat(rng.random()), bbox.lon_max))
            } else {
                ((bbox.lat_min, lon(rng.random())), (bbox.lat_max, lon(rng.random())))
            };
            Polyline(vec![a, mid, b])
        })
        .collect()
}

/// Lower Cholesky factor of the squared-exponential kernel over sensor
/// distances.
fn field_factor(locs: &[SensorLocation], length_scale: f64) -> Result<DMatrix<f64>> {
    let n = locs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = haversine(locs[i].coords(), locs[j].coords());
        (-d * d / (2.0 * length_scale * length_scale)).exp() + if i == j { 1e-6 } else { 0.0 }
    });
    k.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("spatial kernel is not positive definite".into()))
}

/// Generates a raw (unstandardized) dataset. Pure function of the config.
pub fn generate_city(cfg: &CityConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let n = cfg.n_sensors;
    let b = cfg.bbox;
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.random_range(b.lat_min..b.lat_max),
                rng.random_range(b.lon_min..b.lon_max),
            )
        })
        .collect();
    let roads = random_roads(&b, cfg.n_roads, &mut rng);
    let width = n.to_string().len();
    let mut locations = Vec::with_capacity(n);
    for (i, &(lat, lon)) in coords.iter().enumerate() {
        let mut loc = SensorLocation::new(format!("{}{:0width$}", cfg.id_prefix, i + 1), lat, lon, 0.0)?;
        if !roads.is_empty() {
            loc.dist_road = distance_to_road(&loc, &roads)?;
        }
        locations.push(loc);
    }
    let scales: Vec<f64> = (0..n)
        .map(|_| 1.0 + cfg.scale_spread * rng.random_range(-1.0..=1.0))
        .collect();
    let chol = field_factor(&locations, cfg.length_scale_m)?;
    let field_innov = cfg.field_std * (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut field: DVector<f64> = &chol * DVector::from_fn(n, |_, _| gauss(&mut rng)) * cfg.field_std;

    let mut syn_wind = Ar1::new(0.97, 2.5, &mut rng);
    let mut syn_temp = Ar1::new(0.98, 2.5, &mut rng);
    let mut dew_dep = Ar1::new(0.95, 1.5, &mut rng);
    let mut pressure = Ar1::new(0.99, 900.0, &mut rng);
    let mut cloud = Ar1::new(0.95, 30.0, &mut rng);
    let mut aerosol = Ar1::new(0.8, 0.6, &mut rng);
    let mut wind_dir: f64 = rng.random_range(0.0..360.0);
    let dir_step = Normal::new(0.0, 8.0).expect("valid normal");

    let mut no2 = vec![vec![0.0; n]; cfg.n_hours];
    let mut measured = vec![vec![[0.0; N_MEASURED]; n]; cfg.n_hours];
    let mut aerosol_today = 0.0;
    let mut days: Vec<NaiveDate> = Vec::with_capacity(cfg.n_hours);
    for t in 0..cfg.n_hours {
        let ts = cfg.start + Duration::hours(t as i64);
        let hour = ts.hour() as f64;
        let day = ts.date_naive();
        if t == 0 || days[t - 1] != day {
            aerosol_today = 1.0 + aerosol.step(&mut rng);
        }
        days.push(day);
        let doy = ts.ordinal() as f64;
        let wind_reg = WIND_MEAN + 0.8 * (2.0 * PI * (hour - 14.0) / 24.0).cos() + syn_wind.step(&mut rng);
        let temp_reg = TEMP_REF
            + 7.0 * (2.0 * PI * (doy - 110.0) / 365.25).sin()
            + 4.0 * (2.0 * PI * (hour - 15.0) / 24.0).cos()
            + syn_temp.step(&mut rng);
        let dep_reg = 4.0 + 2.5 * (2.0 * PI * (hour - 15.0) / 24.0).cos() + dew_dep.step(&mut rng);
        let press_reg = 101_325.0 + pressure.step(&mut rng);
        let cloud_reg = 55.0 + cloud.step(&mut rng);
        wind_dir = (wind_dir + dir_step.sample(&mut rng)).rem_euclid(360.0);

        let z = DVector::from_fn(n, |_, _| gauss(&mut rng));
        field = field * cfg.rho + &chol * z * field_innov;

        let cycle = cfg.base_level + diurnal(hour, cfg.diurnal_amplitude) + weekly(ts.weekday().num_days_from_monday(), cfg.diurnal_amplitude);
        for s in 0..n {
            let wind = (wind_reg + 0.2 * gauss(&mut rng)).max(0.2);
            let temp = temp_reg + 0.3 * gauss(&mut rng);
            let dew = temp - dep_reg.max(0.5);
            let rh = (100.0 * saturation_kpa(dew) / saturation_kpa(temp)).min(100.0);
            let vpd = saturation_kpa(temp) * (1.0 - rh / 100.0);
            let value = scales[s] * cycle
                + field[s]
                + cfg.wind_effect * (wind - WIND_MEAN)
                + cfg.temp_effect * (temp - TEMP_REF)
                + cfg.noise_std * gauss(&mut rng);
            no2[t][s] = value.max(0.0);
            measured[t][s] = [
                0.0,
                aerosol_today,
                wind,
                wind * 1.6 + 0.5 * gauss(&mut rng).abs(),
                (wind_dir + 5.0 * gauss(&mut rng)).rem_euclid(360.0),
                vpd,
                temp,
                press_reg + 20.0 * gauss(&mut rng),
                rh,
                dew,
                (cloud_reg + 5.0 * gauss(&mut rng)).clamp(0.0, 100.0),
            ];
        }
    }

    // satellite column: one value per sensor and UTC day
    let mut t0 = 0;
    while t0 < cfg.n_hours {
        let t1 = (t0..cfg.n_hours).find(|&t| days[t] != days[t0]).unwrap_or(cfg.n_hours);
        for s in 0..n {
            let daily = (t0..t1).map(|t| no2[t][s]).sum::<f64>() / (t1 - t0) as f64;
            let col = SAT_PER_UGM3 * daily + SAT_NOISE * gauss(&mut rng);
            for row in &mut measured[t0..t1] {
                row[s][0] = col;
            }
        }
        t0 = t1;
    }

    let grid = (0..cfg.n_hours)
        .map(|t| {
            (0..n)
                .map(|s| {
                    (cfg.missing_rate == 0.0 || rng.random::<f64>() >= cfg.missing_rate).then_some(RawReading {
                        no2: no2[t][s],
                        measured: measured[t][s],
                    })
                })
                .collect()
        })
        .collect();
    Dataset::from_readings(locations, cfg.start, grid)
}

/// Pearson correlation between `x[t]` and `x[t + lag]`.
pub fn lag_autocorr(series: &[f64], lag: usize) -> Result<f64> {
    if series.len() <= lag + 1 {
        return Err(Error::InvalidArgument(format!(
            "series of length {} too short for lag {lag}",
            series.len()
        )));
    }
    let a = &series[..series.len() - lag];
    let b = &series[lag..];
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateFeature("autocorrelation of a constant series".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CityConfig {
        CityConfig {
            n_hours: 72,
            seed,
            ..CityConfig::default()
        }
    }

    #[test]
    fn quiet_city_is_constant() {
        let cfg = CityConfig {
            noise_std: 0.0,
            diurnal_amplitude: 0.0,
            scale_spread: 0.0,
            field_std: 0.0,
            wind_effect: 0.0,
            temp_effect: 0.0,
            n_hours: 100,
            ..CityConfig::default()
        };
        let ds = generate_city(&cfg).unwrap();
        for f in &ds.frames {
            assert!(f.target_no2.iter().all(|&y| y == 30.0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_city(&small(3)).unwrap(), generate_city(&small(3)).unwrap());
        assert_ne!(generate_city(&small(3)).unwrap(), generate_city(&small(4)).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let bad_box = CityConfig {
            bbox: BoundingBox {
                lat_min: 51.5,
                lat_max: 51.5,
                lon_min: 0.0,
                lon_max: 1.0,
            },
            ..small(0)
        };
        assert!(generate_city(&bad_box).is_err());
        assert!(generate_city(&CityConfig { n_sensors: 1, ..small(0) }).is_err());
        assert!(generate_city(&CityConfig { rho: 1.0, ..small(0) }).is_err());
        assert!(generate_city(&CityConfig { scale_spread: 1.0, ..small(0) }).is_err());
    }

    #[test]
    fn satellite_constant_within_day() {
        let ds = generate_city(&small(1)).unwrap();
        for day in ds.frames.chunks(24) {
            for s in 0..ds.n_sensors() {
                let v = day[0].features.get(s, 0);
                assert!(day.iter().all(|f| f.features.get(s, 0) == v));
            }
        }
        assert_ne!(ds.frames[0].features.get(0, 0), ds.frames[24].features.get(0, 0));
    }

    #[test]
    fn missing_rate_drops_readings() {
        let ds = generate_city(&CityConfig {
            missing_rate: 0.3,
            n_hours: 500,
            ..CityConfig::default()
        })
        .unwrap();
        let present: usize = (0..ds.n_sensors()).map(|s| ds.present_count(s)).sum();
        let frac = present as f64 / (500 * ds.n_sensors()) as f64;
        assert!((0.62..0.78).contains(&frac), "{frac}");
    }

    #[test]
    fn lag_autocorr_examples() {
        let periodic: Vec<f64> = (0..240).map(|t| ((t % 24) as f64).sin()).collect();
        assert!((lag_autocorr(&periodic, 24).unwrap() - 1.0).abs() < 1e-12);
        let ramp: Vec<f64> = (0..50).map(|t| t as f64).collect();
        assert!((lag_autocorr(&ramp, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(lag_autocorr(&[1.0, 1.0, 1.0, 1.0], 1).is_err());
        assert!(lag_autocorr(&[1.0, 2.0], 1).is_err());
    }
}
