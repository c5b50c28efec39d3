use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde_json::json;
use vsensor::dataset::{fill_prev_no2, format_timestamp, load_dataset, parse_timestamp, standardize, write_dataset, Dataset, StandardizationStats};
use vsensor::geograph::{build_knn_graph, SpatialGraph};
use vsensor::model::{ModelKind, ModelSpec};
use vsensor::pipeline::{
    leave_one_out, predict_location, train as train_model, transfer as transfer_models, Checkpoint, EvalReport,
    FineTuneConfig, FoldStrategy, ImprovementTable, Provenance, TrainConfig, TransferConfig,
};
use vsensor::sage::AggregatorKind;
use vsensor::synthgen::{generate_city, CityConfig};

use crate::manifest::{manifest_for_file, write_atomic, RunManifest};
use crate::settings::{fail, CliError, CliResult, ConfigFile};
use vsensor::plot::{render, PlotData};
use crate::{EvalArgs, ModelArgs, PlotArgs, PredictArgs, SynthArgs, TrainArgs, TransferArgs};

const DEFAULT_K: usize = 3;

fn load_dir(dir: &Path, manifest: &mut RunManifest) -> CliResult<Dataset> {
    let (loc, rd) = (dir.join("locations.csv"), dir.join("readings.csv"));
    for p in [&loc, &rd] {
        if !p.is_file() {
            return fail(format!("{} not found", p.display()));
        }
        manifest.input(p)?;
    }
    Ok(load_dataset(&loc, &rd)?)
}

/// Autoregressive column filled, then standardized with `stats` or with
/// statistics fitted on the dataset itself.
fn prepare(raw: &Dataset, stats: Option<&StandardizationStats>) -> CliResult<(Dataset, StandardizationStats)> {
    let filled = fill_prev_no2(raw);
    Ok(match stats {
        Some(s) => (s.apply(&filled)?, s.clone()),
        None => standardize(&filled)?,
    })
}

fn sensor_index(ds: &Dataset, id: &str) -> CliResult<usize> {
    ds.sensor_index(id).ok_or_else(|| CliError(format!("unknown sensor `{id}`")))
}

fn load_ckpt(path: &Path, manifest: &mut RunManifest) -> CliResult<Checkpoint> {
    manifest.input(path)?;
    Checkpoint::load(path).map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn graph(ds: &Dataset, k: usize) -> CliResult<SpatialGraph> {
    Ok(build_knn_graph(&ds.locations, k)?)
}

fn model_spec(args: &ModelArgs, cfg: &ConfigFile) -> CliResult<ModelSpec> {
    let kind: ModelKind = cfg.pick(args.model.clone(), "model", "sage".to_string())?.parse()?;
    let mut spec = ModelSpec::default_for(kind);
    let aggregator: Option<String> = cfg.pick(args.aggregator.clone().map(Some), "aggregator", None)?;
    if let Some(a) = aggregator {
        match &mut spec {
            ModelSpec::Sage(c) => c.aggregator = a.parse::<AggregatorKind>()?,
            _ => return fail("--aggregator only applies to --model sage"),
        }
    }
    Ok(spec)
}

fn train_config(args: &ModelArgs, cfg: &ConfigFile) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let tc = TrainConfig {
        model: model_spec(args, cfg)?,
        epochs: cfg.pick(args.epochs, "epochs", d.epochs)?,
        lr: cfg.pick(args.lr, "lr", d.lr)?,
        patience: cfg.pick(args.patience, "patience", d.patience)?,
        seed: cfg.pick(args.seed, "seed", d.seed)?,
    };
    tc.validate()?;
    Ok(tc)
}

fn clip(v: f64) -> f64 {
    v.max(0.0)
}

fn hour_label(ts: &str) -> String {
    // 2023-01-02T05:00:00Z -> 01-02 05:00
    ts.get(5..16).map_or_else(|| ts.to_string(), |s| s.replace('T', " "))
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.config.as_deref())?;
    let mut m = RunManifest::new("synth");
    let seed = cfg.pick(args.seed, "seed", 0)?;
    let mut city = if cfg.flag(args.source_city, "source-city")? {
        CityConfig::source_city(seed)
    } else {
        CityConfig { seed, ..CityConfig::default() }
    };
    city.n_sensors = cfg.pick(args.sensors, "sensors", city.n_sensors)?;
    city.n_hours = cfg.pick(args.hours, "hours", city.n_hours)?;
    city.missing_rate = cfg.pick(args.missing_rate, "missing-rate", city.missing_rate)?;
    city.validate()?;
    m.config = serde_json::to_value(&city)?;
    m.seeds = vec![seed];

    m.stage("generate");
    let ds = generate_city(&city)?;
    m.stage("write");
    write_dataset(&ds, &args.out)?;
    m.outputs.push(args.out.join("locations.csv").display().to_string());
    m.outputs.push(args.out.join("readings.csv").display().to_string());
    info!("wrote {} sensors × {} hours to {}", ds.n_sensors(), ds.n_frames(), args.out.display());
    m.write(&args.out.join("manifest.json"))
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.config.as_deref())?;
    let mut m = RunManifest::new("train");
    let tc = train_config(&args.model, &cfg)?;
    let k = cfg.pick(args.model.k, "k", DEFAULT_K)?;
    m.config = json!({ "data": args.data.display().to_string(), "train": tc, "k": k });
    m.seeds = vec![tc.seed];

    m.stage("load");
    let raw = load_dir(&args.data, &mut m)?;
    let (ds, stats) = prepare(&raw, None)?;
    let g = graph(&ds, k)?;
    m.stage("train");
    let out = train_model(&ds, &g, &tc)?;
    info!("trained {} for {} epochs, best epoch {}", tc.model.kind().name(), out.history.len(), out.best_epoch);
    let ckpt = Checkpoint {
        model: out.model,
        stats,
        provenance: Provenance::Trained { train: tc },
        pretrained: None,
        graph_k: k,
    };
    m.stage("save");
    m.output(&args.out, &ckpt.to_bytes()?)?;
    m.write(&manifest_for_file(&args.out))
}

pub fn transfer(args: TransferArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.config.as_deref())?;
    let mut m = RunManifest::new("transfer");
    let pretrain = train_config(&args.model, &cfg)?;
    let d = FineTuneConfig::default();
    let freeze = if args.freeze.is_empty() {
        cfg.pick(None, "freeze", Vec::new())?
    } else {
        args.freeze.clone()
    };
    let tcfg = TransferConfig {
        finetune: FineTuneConfig {
            epochs: cfg.pick(args.finetune_epochs, "finetune-epochs", d.epochs)?,
            lr: cfg.pick(args.finetune_lr, "finetune-lr", d.lr)?,
            patience: pretrain.patience,
            seed: pretrain.seed,
            frozen: freeze,
        },
        source_stats: cfg.flag(args.source_stats, "source-stats")?,
        pretrain,
    };
    tcfg.validate()?;
    let k = cfg.pick(args.model.k, "k", DEFAULT_K)?;
    m.config = json!({
        "source": args.source.display().to_string(),
        "target": args.target.display().to_string(),
        "transfer": tcfg,
        "k": k,
    });
    m.seeds = vec![tcfg.pretrain.seed];

    m.stage("load");
    let src_raw = load_dir(&args.source, &mut m)?;
    let tgt_raw = load_dir(&args.target, &mut m)?;
    let (src, src_stats) = prepare(&src_raw, None)?;
    let (tgt, stats) = prepare(&tgt_raw, tcfg.source_stats.then_some(&src_stats))?;
    let (g_src, g_tgt) = (graph(&src, k)?, graph(&tgt, k)?);
    m.stage("train");
    let out = transfer_models(&src, &g_src, &tgt, &g_tgt, &tcfg)?;
    info!(
        "pretrained {} epochs, fine-tuned {} epochs",
        out.pretrain_history.len(),
        out.finetune_history.len()
    );
    let ckpt = Checkpoint {
        model: out.model,
        stats,
        provenance: Provenance::Transferred { transfer: tcfg },
        pretrained: Some(out.pretrained),
        graph_k: k,
    };
    m.stage("save");
    m.output(&args.out, &ckpt.to_bytes()?)?;
    m.write(&manifest_for_file(&args.out))
}

fn strategy_from_ckpt(ckpt: Checkpoint) -> CliResult<FoldStrategy> {
    Ok(match ckpt.provenance {
        Provenance::Trained { train } => FoldStrategy::Scratch(train),
        Provenance::Transferred { transfer } => FoldStrategy::FineTune {
            pretrained: ckpt
                .pretrained
                .ok_or_else(|| CliError("transferred checkpoint has no pretrained weights".into()))?,
            config: transfer.finetune,
            stats: transfer.source_stats.then_some(ckpt.stats),
        },
    })
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    if let Some(paths) = &args.compare {
        return compare(&paths[0], &paths[1], args.out.as_deref());
    }
    let (Some(data), Some(out)) = (args.data.as_deref(), args.out.as_deref()) else {
        return fail("eval needs --data and --out");
    };
    let cfg = ConfigFile::load(args.config.config.as_deref())?;
    let mut m = RunManifest::new("eval");
    let (strategy, k) = match &args.ckpt {
        Some(path) => {
            let a = &args.model;
            if a.model.is_some() || a.aggregator.is_some() || a.epochs.is_some() || a.lr.is_some() || a.patience.is_some() || a.k.is_some() {
                return fail("--ckpt carries its own configuration; drop the model flags");
            }
            let ckpt = load_ckpt(path, &mut m)?;
            let k = ckpt.graph_k;
            let mut strategy = strategy_from_ckpt(ckpt)?;
            if let Some(seed) = a.seed {
                match &mut strategy {
                    FoldStrategy::Scratch(c) => c.seed = seed,
                    FoldStrategy::FineTune { config, .. } => config.seed = seed,
                }
            }
            (strategy, k)
        }
        None => (
            FoldStrategy::Scratch(train_config(&args.model, &cfg)?),
            cfg.pick(args.model.k, "k", DEFAULT_K)?,
        ),
    };
    m.config = json!({
        "data": data.display().to_string(),
        "strategy": strategy.label(),
        "ckpt": args.ckpt.as_ref().map(|p| p.display().to_string()),
        "k": k,
    });

    m.stage("load");
    let raw = load_dir(data, &mut m)?;
    let g = graph(&raw, k)?;
    m.stage("evaluate");
    let outcome = leave_one_out(&raw, &raw, &g, &strategy)?;
    let report = outcome.report;
    m.seeds = report.metadata.seeds.clone();
    if let serde_json::Value::Object(o) = &mut m.config {
        o.insert("config_hash".into(), json!(report.metadata.config_hash));
    }

    m.stage("write");
    std::fs::create_dir_all(out)?;
    m.output(&out.join("report.json"), report.to_json()?.as_bytes())?;
    m.output(&out.join("report.csv"), report.to_csv().as_bytes())?;
    m.output(&out.join("locations.csv"), report.locations_csv().as_bytes())?;
    let mut series = String::from("sensor_id,timestamp,actual_no2_ugm3,predicted_no2_ugm3\n");
    for s in &outcome.series {
        for ((&t, a), p) in s.frames.iter().zip(&s.actual).zip(&s.predicted) {
            let _ = writeln!(series, "{},{},{a},{p}", s.sensor_id, format_timestamp(raw.frames[t].timestamp));
        }
    }
    m.output(&out.join("series.csv"), series.as_bytes())?;
    print!("{}", report.to_csv());
    m.write(&out.join("manifest.json"))
}

fn compare(base: &Path, new: &Path, out: Option<&Path>) -> CliResult<()> {
    let mut m = RunManifest::new("eval --compare");
    m.input(base)?;
    m.input(new)?;
    let load = |p: &Path| EvalReport::load(p).map_err(|e| CliError(format!("{}: {e}", p.display())));
    let table = ImprovementTable::compare(&load(base)?, &load(new)?)?;
    print!("{}", table.to_csv());
    if let Some(out) = out {
        m.config = json!({ "base": base.display().to_string(), "new": new.display().to_string() });
        std::fs::create_dir_all(out)?;
        let mut js = serde_json::to_string_pretty(&table)?;
        js.push('\n');
        m.output(&out.join("improvement.json"), js.as_bytes())?;
        m.output(&out.join("improvement.csv"), table.to_csv().as_bytes())?;
        m.write(&out.join("manifest.json"))?;
    }
    Ok(())
}

/// Clipped predictions for frames 1..T of one sensor.
fn rollout_predictions(raw: &Dataset, ckpt: &Checkpoint, sensor: usize, seed: u64) -> CliResult<Vec<f64>> {
    let g = graph(raw, ckpt.graph_k)?;
    let preds = predict_location(&ckpt.model, raw, raw, &g, &ckpt.stats, sensor, seed)?;
    Ok(preds.into_iter().map(clip).collect())
}

pub fn predict(args: PredictArgs) -> CliResult<()> {
    let mut m = RunManifest::new("predict");
    m.config = json!({
        "data": args.data.display().to_string(),
        "ckpt": args.ckpt.display().to_string(),
        "sensor": args.sensor,
    });
    m.seeds = vec![args.seed];
    m.stage("load");
    let ckpt = load_ckpt(&args.ckpt, &mut m)?;
    let raw = load_dir(&args.data, &mut m)?;
    let sensor = sensor_index(&raw, &args.sensor)?;
    m.stage("predict");
    let preds = rollout_predictions(&raw, &ckpt, sensor, args.seed)?;
    let mut csv = String::from("timestamp,predicted_no2_ugm3\n");
    for (f, p) in raw.frames[1..].iter().zip(&preds) {
        let _ = writeln!(csv, "{},{p}", format_timestamp(f.timestamp));
    }
    m.stage("write");
    m.output(&args.out, csv.as_bytes())?;
    m.write(&manifest_for_file(&args.out))
}

/// Per-frame predictions read from a `timestamp,predicted_no2_ugm3` CSV.
fn read_predictions(path: &Path, raw: &Dataset) -> CliResult<Vec<Option<f64>>> {
    let mut out = vec![None; raw.n_frames()];
    let start = raw.frames[0].timestamp;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError(format!("{}: {e}", path.display())))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "predicted_no2_ugm3"] {
        return fail(format!("{}: expected header `timestamp,predicted_no2_ugm3`", path.display()));
    }
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        let bad = || CliError(format!("{}: bad row {}", path.display(), i + 2));
        let ts = parse_timestamp(&rec[0]).ok_or_else(bad)?;
        let v: f64 = rec[1].trim().parse().map_err(|_| bad())?;
        let h = (ts - start).num_hours();
        if let Some(slot) = usize::try_from(h).ok().and_then(|h| out.get_mut(h)) {
            *slot = Some(v);
        }
    }
    Ok(out)
}

pub fn plot(args: PlotArgs) -> CliResult<()> {
    let mut m = RunManifest::new("plot");
    m.config = json!({
        "data": args.data.display().to_string(),
        "sensor": args.sensor,
        "ckpt": args.ckpt.as_ref().map(|p| p.display().to_string()),
        "predictions": args.predictions.as_ref().map(|p| p.display().to_string()),
        "start": args.start,
        "hours": args.hours,
    });
    m.seeds = vec![args.seed];
    if args.hours == 0 {
        return fail("--hours must be at least 1");
    }
    m.stage("load");
    let raw = load_dir(&args.data, &mut m)?;
    let sensor = sensor_index(&raw, &args.sensor)?;
    let predicted: Vec<Option<f64>> = match (&args.ckpt, &args.predictions) {
        (Some(c), _) => {
            let ckpt = load_ckpt(c, &mut m)?;
            m.stage("predict");
            std::iter::once(None)
                .chain(rollout_predictions(&raw, &ckpt, sensor, args.seed)?.into_iter().map(Some))
                .collect()
        }
        (None, Some(p)) => {
            m.input(p)?;
            read_predictions(p, &raw)?
        }
        (None, None) => return fail("plot needs --ckpt or --predictions"),
    };

    let first = match &args.start {
        Some(s) => {
            let ts = parse_timestamp(s).ok_or_else(|| CliError(format!("bad --start timestamp `{s}`")))?;
            let h = (ts - raw.frames[0].timestamp).num_hours();
            usize::try_from(h)
                .ok()
                .filter(|&h| h < raw.n_frames())
                .ok_or_else(|| CliError(format!("--start {s} lies outside the dataset")))?
        }
        None => 1.min(raw.n_frames() - 1),
    };
    let last = (first + args.hours).min(raw.n_frames());
    let frames = first..last;
    let hours: Vec<String> = frames.clone().map(|t| hour_label(&format_timestamp(raw.frames[t].timestamp))).collect();
    let actual: Vec<Option<f64>> = frames.clone().map(|t| raw.frames[t].target(sensor)).collect();
    let predicted = &predicted[frames];
    let title = format!("Sensor {}: actual and predicted NO₂", args.sensor);
    let svg = render(&PlotData {
        title: &title,
        hours: &hours,
        actual: &actual,
        predicted,
    });
    m.stage("write");
    write_atomic(&args.out, svg.as_bytes())?;
    m.outputs.push(args.out.display().to_string());
    m.write(&manifest_for_file(&args.out))
}
