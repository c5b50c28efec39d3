use std::path::Path;

use chrono::{Duration, Timelike};
use proptest::prelude::*;
use tempfile::TempDir;
use vsensor::dataset::*;
use vsensor::Error;

const READING_TAIL: &str = "1e-4,0.1,3.0,5.0,180,0.5,10,101000,80,7,50";

fn write_files(dir: &Path, locations: &str, readings: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let (l, r) = (dir.join("locations.csv"), dir.join("readings.csv"));
    std::fs::write(&l, locations).unwrap();
    std::fs::write(&r, readings).unwrap();
    (l, r)
}

fn two_sensor_locations() -> String {
    "sensor_id,lat,lon,dist_road_m\nA,51.45,-2.59,10\nB,51.46,-2.58,25\n".to_string()
}

fn readings(rows: &[(&str, &str, f64)]) -> String {
    let mut s = readings_header().join(",");
    s.push('\n');
    for (ts, id, no2) in rows {
        s.push_str(&format!("{ts},{id},{no2},{READING_TAIL}\n"));
    }
    s
}

#[test]
fn load_dense_two_sensors() {
    let tmp = TempDir::new().unwrap();
    let rows: Vec<(&str, &str, f64)> = ["2019-03-01T00:00:00Z", "2019-03-01T01:00:00Z", "2019-03-01T02:00:00Z"]
        .into_iter()
        .flat_map(|ts| [(ts, "A", 20.0), (ts, "B", 30.0)])
        .collect();
    let (l, r) = write_files(tmp.path(), &two_sensor_locations(), &readings(&rows));
    let ds = load_dataset(&l, &r).unwrap();
    assert_eq!(ds.n_frames(), 3);
    assert_eq!(ds.n_sensors(), 2);
    assert!(ds.frames.iter().all(|f| f.present.iter().all(|&p| p)));
    assert_eq!(ds.n_features(), N_FEATURES);
    assert_eq!(ds.frames[1].features.get(0, PREV_NO2), 20.0);
    assert_eq!(ds.frames[2].features.get(1, DIST_ROAD), 25.0);
}

#[test]
fn missing_hour_is_an_absent_row() {
    let tmp = TempDir::new().unwrap();
    let rows = [
        ("2019-03-01T00:00:00Z", "A", 20.0),
        ("2019-03-01T00:00:00Z", "B", 30.0),
        ("2019-03-01T01:00:00Z", "A", 21.0),
        ("2019-03-01T01:00:00Z", "B", 31.0),
        ("2019-03-01T02:00:00Z", "A", 22.0),
        ("2019-03-01T03:00:00Z", "A", 23.0),
        ("2019-03-01T03:00:00Z", "B", 33.0),
    ];
    let (l, r) = write_files(tmp.path(), &two_sensor_locations(), &readings(&rows));
    let ds = load_dataset(&l, &r).unwrap();
    assert_eq!(ds.n_frames(), 4);
    assert_eq!(ds.frames[2].timestamp.hour(), 2);
    assert!(ds.frames[2].present[0]);
    assert!(!ds.frames[2].present[1]);
    assert_eq!(ds.frames[2].target(1), None);
}

#[test]
fn load_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let locs = two_sensor_locations();

    let dup = readings(&[("2019-03-01T00:00:00Z", "A", 1.0), ("2019-03-01T00:00:00Z", "A", 2.0)]);
    let (l, r) = write_files(d, &locs, &dup);
    let e = load_dataset(&l, &r).unwrap_err();
    assert!(matches!(e, Error::DuplicateReading { .. }));
    assert!(e.to_string().contains("duplicate reading"));

    let (l, r) = write_files(d, &locs, &readings(&[("2019-03-01T00:00:00Z", "Z", 1.0)]));
    assert!(matches!(load_dataset(&l, &r).unwrap_err(), Error::UnknownSensor { .. }));

    let (l, r) = write_files(d, &locs, &readings(&[("2019-03-01T00:30:00Z", "A", 1.0)]));
    assert!(matches!(load_dataset(&l, &r).unwrap_err(), Error::Timestamp { .. }));

    let bad = format!(
        "{}\n2019-03-01T00:00:00Z,A,1,{READING_TAIL}\n2019-03-01T01:00:00Z,A,abc,{READING_TAIL}\n",
        readings_header().join(",")
    );
    let (l, r) = write_files(d, &locs, &bad);
    match load_dataset(&l, &r).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn write_then_load_round_trips_present_rows() {
    let tmp = TempDir::new().unwrap();
    let mut grid = vec![vec![None; 2]; 30];
    for (t, row) in grid.iter_mut().enumerate() {
        for (s, slot) in row.iter_mut().enumerate() {
            if (t + s) % 7 != 3 {
                *slot = Some(RawReading {
                    no2: 10.0 + t as f64 * 0.5 + s as f64,
                    measured: [t as f64 * 0.1; N_MEASURED],
                });
            }
        }
    }
    let locs = vec![
        SensorLocation::new("A", 51.45, -2.59, 10.0).unwrap(),
        SensorLocation::new("B", 51.46, -2.58, 25.0).unwrap(),
    ];
    let ds = Dataset::from_readings(locs, utc_midnight(2020, 5, 4), grid).unwrap();
    write_dataset(&ds, tmp.path()).unwrap();
    let back = load_dataset(&tmp.path().join("locations.csv"), &tmp.path().join("readings.csv")).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn cold_start_prev_equals_full_scan_mean() {
    let locs = vec![
        SensorLocation::new("A", 51.45, -2.59, 10.0).unwrap(),
        SensorLocation::new("B", 51.46, -2.58, 25.0).unwrap(),
    ];
    let r = |v: f64| Some(RawReading { no2: v, measured: [1.0; N_MEASURED] });
    let grid = vec![
        vec![r(10.0), None],
        vec![r(14.0), None],
        vec![r(18.0), r(40.0)],
        vec![r(20.0), r(44.0)],
    ];
    let ds = Dataset::from_readings(locs, utc_midnight(2020, 1, 1), grid).unwrap();
    let mut sum = 0.0;
    let mut n = 0;
    for f in &ds.frames {
        for s in 0..2 {
            if f.present[s] {
                sum += f.target_no2[s];
                n += 1;
            }
        }
    }
    let mean = sum / n as f64;
    assert_eq!(ds.frames[2].features.get(1, PREV_NO2), mean);
    assert_eq!(ds.frames[0].features.get(0, PREV_NO2), mean);
    assert_eq!(ds.frames[3].features.get(1, PREV_NO2), 40.0);
}

#[test]
fn same_hour_fallback_takes_reading_24h_earlier() {
    let locs = vec![
        SensorLocation::new("A", 51.45, -2.59, 10.0).unwrap(),
        SensorLocation::new("B", 51.46, -2.58, 25.0).unwrap(),
    ];
    let mut grid: Vec<Vec<Option<RawReading>>> = (0..30)
        .map(|t| {
            vec![
                Some(RawReading { no2: 50.0 + t as f64, measured: [0.0; N_MEASURED] }),
                Some(RawReading { no2: 5.0, measured: [0.0; N_MEASURED] }),
            ]
        })
        .collect();
    grid[1][0] = Some(RawReading { no2: 22.0, measured: [0.0; N_MEASURED] });
    grid[25][0] = None;
    let ds = Dataset::from_readings(locs, utc_midnight(2020, 1, 1), grid).unwrap();
    assert_eq!(ds.frames[26].features.get(0, PREV_NO2), 22.0);
}

fn random_dataset(n_sensors: usize, n_frames: usize, seed: u64, drop_every: usize) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let locs: Vec<SensorLocation> = (0..n_sensors)
        .map(|i| {
            SensorLocation::new(
                format!("S{i}"),
                51.4 + rng.random_range(0.0..0.1),
                -2.6 + rng.random_range(0.0..0.1),
                rng.random_range(0.0..500.0),
            )
            .unwrap()
        })
        .collect();
    let grid = (0..n_frames)
        .map(|t| {
            (0..n_sensors)
                .map(|s| {
                    if drop_every > 0 && (t * 31 + s * 7) % drop_every == 0 {
                        return None;
                    }
                    let mut measured = [0.0; N_MEASURED];
                    for m in measured.iter_mut() {
                        *m = rng.random_range(-50.0..50.0);
                    }
                    Some(RawReading {
                        no2: rng.random_range(0.0..80.0),
                        measured,
                    })
                })
                .collect()
        })
        .collect();
    Dataset::from_readings(locs, utc_midnight(2021, 6, 1), grid).unwrap()
}

fn column_moments(ds: &Dataset, j: usize) -> (f64, f64) {
    let col: Vec<f64> = ds
        .frames
        .iter()
        .flat_map(|f| (0..ds.n_sensors()).filter(|&s| f.present[s]).map(move |s| f.features.get(s, j)))
        .collect();
    let m = col.iter().sum::<f64>() / col.len() as f64;
    let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
    (m, v.sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_timeline(n in 2usize..5, t in 2usize..60, seed in 0u64..1000, drop in 0usize..5) {
        let ds = random_dataset(n, t, seed, drop);
        for w in ds.frames.windows(2) {
            prop_assert_eq!(w[1].timestamp - w[0].timestamp, Duration::hours(1));
        }
        for f in &ds.frames {
            prop_assert_eq!(f.features.rows(), n);
            for s in 0..n {
                if f.present[s] {
                    prop_assert!(f.target_no2[s].is_finite());
                }
            }
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std(n in 2usize..5, t in 5usize..60, seed in 0u64..1000) {
        let ds = random_dataset(n, t, seed, 4);
        let (z, stats) = standardize(&ds).unwrap();
        for j in 0..z.n_features() {
            let (m, sd) = column_moments(&z, j);
            prop_assert!(m.abs() < 1e-9, "feature {} mean {}", j, m);
            if stats.std[j] != 1.0 {
                prop_assert!((sd - 1.0).abs() < 1e-9, "feature {} std {}", j, sd);
            }
        }
        for (fz, fd) in z.frames.iter().zip(&ds.frames) {
            for s in 0..n {
                prop_assert_eq!(fz.target(s), fd.target(s));
            }
        }
    }

    #[test]
    fn standardize_then_invert_is_identity(n in 2usize..5, t in 5usize..40, seed in 0u64..1000, other in 0u64..1000) {
        let a = random_dataset(n, t, seed, 0);
        let b = random_dataset(n, t, other, 3);
        let stats = StandardizationStats::fit(&a).unwrap();
        let back = stats.invert(&stats.apply(&b).unwrap()).unwrap();
        for (fb, fo) in back.frames.iter().zip(&b.frames) {
            for (x, y) in fb.features.data().iter().zip(fo.features.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fill_prev_is_idempotent_and_respects_present_predecessor(n in 2usize..5, t in 2usize..80, seed in 0u64..1000, drop in 0usize..5) {
        let ds = random_dataset(n, t, seed, drop);
        let again = fill_prev_no2(&ds);
        prop_assert_eq!(&again, &ds);
        for k in 1..ds.n_frames() {
            for s in 0..n {
                if let Some(y) = ds.frames[k - 1].target(s) {
                    prop_assert_eq!(ds.frames[k].features.get(s, PREV_NO2), y);
                }
            }
        }
    }

    #[test]
    fn time_pairs_on_unit_circle(hours in 0i64..200_000) {
        let ts = utc_midnight(2000, 1, 1) + Duration::hours(hours);
        let e = encode_time(ts);
        for p in e.chunks(2) {
            prop_assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn road_distance_ignores_vertex_order(
        lat in 51.3f64..51.6, lon in -2.7f64..-2.4,
        pts in proptest::collection::vec((51.3f64..51.6, -2.7f64..-2.4), 2..8),
    ) {
        let loc = SensorLocation::new("x", lat, lon, 0.0).unwrap();
        let fwd = distance_to_road(&loc, &[Polyline(pts.clone())]).unwrap();
        let mut rev = pts;
        rev.reverse();
        let bwd = distance_to_road(&loc, &[Polyline(rev)]).unwrap();
        prop_assert!((fwd - bwd).abs() <= 1e-9 * fwd.max(1.0));
        prop_assert!(fwd >= 0.0);
    }
}

#[test]
fn road_examples() {
    let on_vertex = SensorLocation::new("v", 51.45, -2.6, 0.0).unwrap();
    let road = Polyline(vec![(51.45, -2.6), (51.46, -2.5)]);
    assert_eq!(distance_to_road(&on_vertex, &[road]).unwrap(), 0.0);

    let p = SensorLocation::new("p", 51.46, -2.55, 0.0).unwrap();
    let south = Polyline(vec![(51.45, -2.6), (51.45, -2.5)]);
    let d = distance_to_road(&p, std::slice::from_ref(&south)).unwrap();
    // 0.01° of latitude on a 6,371 km sphere
    let oracle = 0.01f64.to_radians() * 6_371_000.0;
    assert!((d - oracle).abs() < 0.5, "{d} vs {oracle}");
    assert!((d - 1111.9).abs() < 0.1);

    let north = Polyline(vec![(51.47, -2.6), (51.47, -2.5)]);
    let both = distance_to_road(&p, &[south, north.clone()]).unwrap();
    let just_north = distance_to_road(&p, &[north]).unwrap();
    assert!((both - just_north).abs() < 1e-6);
    assert!(distance_to_road(&p, &[]).is_err());
}

#[test]
fn standardize_examples() {
    let locs: Vec<SensorLocation> = (0..3)
        .map(|i| SensorLocation::new(format!("S{i}"), 51.0 + i as f64 * 0.01, -2.0, 5.0).unwrap())
        .collect();
    let row = |v: f64| {
        let mut measured = [5.0; N_MEASURED];
        measured[0] = v;
        Some(RawReading { no2: 1.0, measured })
    };
    let ds = Dataset::from_readings(locs, utc_midnight(2020, 1, 1), vec![vec![row(2.0), row(4.0), row(6.0)]]).unwrap();
    let (z, stats) = standardize(&ds).unwrap();
    let col: Vec<f64> = (0..3).map(|s| z.frames[0].features.get(s, 0)).collect();
    let sd = (8.0f64 / 3.0).sqrt();
    for (got, want) in col.iter().zip([-2.0 / sd, 0.0, 2.0 / sd]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((col[0] + 1.2247).abs() < 1e-4);
    assert_eq!(stats.std[1], 1.0);
    assert!((0..3).all(|s| z.frames[0].features.get(s, 1) == 0.0));
    assert!(matches!(standardize(&z), Err(Error::AlreadyStandardized)));
}
