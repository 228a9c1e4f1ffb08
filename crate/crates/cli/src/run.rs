//! Subcommand implementations.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use stcl::datagen::io::{time_point_path, Manifest, ManifestEntry};
use stcl::datagen::{echo, DatasetRecord};
use stcl::format;
use stcl::gradcheck;
use stcl::metrics::{self, Summary};
use stcl::network::{Mode, NetworkConfig};
use stcl::pipeline::dataset::{
    load_prediction_dataset, load_segmentation_dataset, write_prediction_dataset, write_segmentation_dataset,
    PREDICTION_KIND, TEST_SPLIT, TRAIN_SPLIT,
};
use stcl::pipeline::export::{write_pgm, write_raw, write_slices};
use stcl::pipeline::prediction::{self, PatientResult, PredictionData};
use stcl::pipeline::report::CohortReport;
use stcl::pipeline::segmentation::{evaluate_sequence, mean_dice, SegmentationData};
use stcl::training::checkpoint::Checkpoint;
use stcl::training::{train, Dataset, TrainConfig};
use stcl::volume::Volume;
use stcl::{Error, Result};

use crate::config::{Cli, Command, ModeArg, RunConfig};

pub enum Status {
    Success,
    CheckFailed(String),
}

pub fn dispatch(cli: &Cli) -> Result<Status> {
    let cfg = RunConfig::resolve(cli)?;
    match cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Train => train_cmd(&cfg),
        Command::Predict => predict(&cfg),
        Command::Segment => segment(&cfg),
        Command::Eval => eval(&cfg),
        Command::Gradcheck => gradcheck_cmd(&cfg),
    }
}

const PREDICTION_CHANNEL_NAMES: [&str; 3] = ["icvf", "ct", "mask"];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, format::to_sorted_json(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn config_value(cfg: &RunConfig) -> Result<Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn check_fold(cfg: &RunConfig, manifest: &Manifest) -> Result<()> {
    if let Some(f) = cfg.fold {
        if f >= manifest.folds {
            return Err(Error::Config(format!("fold {f} out of range for {} folds", manifest.folds)));
        }
    }
    Ok(())
}

fn gen_data(cfg: &RunConfig) -> Result<Status> {
    let out = cfg.require(&cfg.out, "out")?;
    let manifest = match cfg.mode {
        ModeArg::Predict => write_prediction_dataset(out, cfg.seed, cfg.patients, cfg.folds)?,
        ModeArg::Segment => write_segmentation_dataset(out, cfg.seed, cfg.sequences, cfg.train_sequences)?,
    };
    cfg.echo(out)?;
    println!("wrote {} {} records to {}", manifest.patients.len(), manifest.kind, out.display());
    Ok(Status::Success)
}

fn train_cmd(cfg: &RunConfig) -> Result<Status> {
    let dataset = cfg.require(&cfg.dataset, "dataset")?;
    let out = cfg.require(&cfg.out, "out")?;
    let manifest = Manifest::read(dataset)?;
    let expected = match cfg.mode {
        ModeArg::Predict => PREDICTION_KIND,
        ModeArg::Segment => stcl::pipeline::dataset::SEGMENTATION_KIND,
    };
    if manifest.kind != expected {
        return Err(Error::Config(format!(
            "dataset {} is a {} dataset but --mode is {:?}",
            dataset.display(),
            manifest.kind,
            cfg.mode
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.echo(out)?;
    let (net, data): (NetworkConfig, Box<dyn Dataset>) = match cfg.mode {
        ModeArg::Predict => {
            check_fold(cfg, &manifest)?;
            let fold = cfg.fold;
            let (_, records) = load_prediction_dataset(dataset, |e| fold.is_none() || e.fold != fold)?;
            let data = PredictionData::build(records, cfg.train.slices, &cfg.sampling, cfg.seed)?;
            (NetworkConfig::prediction(), Box::new(data))
        }
        ModeArg::Segment => {
            let (_, sequences) = load_segmentation_dataset(dataset, |e| e.split.as_deref() == Some(TRAIN_SPLIT))?;
            (NetworkConfig::segmentation(), Box::new(SegmentationData { sequences }))
        }
    };
    log::info!("training on {} items", data.len());
    let tc: TrainConfig = cfg.train.clone();
    let mut history = Vec::new();
    let outcome = train(data.as_ref(), &net, &tc, &mut |r| {
        history.push(r.mean_loss);
        Checkpoint {
            network: net.clone(),
            train: Some(tc.clone()),
            epoch: r.epoch,
            history: history.clone(),
            params: r.params.clone(),
            optimizer: r.optimizer.clone(),
        }
        .save(&out.join(format!("epoch-{:03}", r.epoch)))
    })?;
    Checkpoint {
        network: net.clone(),
        train: Some(tc.clone()),
        epoch: outcome.history.len(),
        history: outcome.history.clone(),
        params: outcome.params,
        optimizer: outcome.optimizer,
    }
    .save(out)?;
    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .enumerate()
        .map(|(e, l)| vec![(e + 1).to_string(), l.to_string()])
        .collect();
    metrics::write_csv(&out.join("loss.csv"), &["epoch", "mean_loss"], &rows)?;
    println!("trained {} epochs; final mean loss {:.6}", rows.len(), outcome.history.last().copied().unwrap_or(f64::NAN));
    Ok(Status::Success)
}

fn load_checkpoint(cfg: &RunConfig, mode: Mode) -> Result<Checkpoint> {
    let path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(path)?;
    if ck.network.mode != mode {
        return Err(Error::Config(format!(
            "checkpoint {} is a {:?} model, `{}` needs {mode:?}",
            path.display(),
            ck.network.mode,
            cfg.command
        )));
    }
    Ok(ck)
}

/// File name of a time-3 prediction inside a predictions directory.
pub fn prediction_file(id: u32) -> String {
    format!("patient{id}_t3_pred.stcl")
}

fn prediction_meta(cfg: &RunConfig, record: &DatasetRecord, days: f64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("kind".into(), Value::from("prediction"));
    m.insert("patient_id".into(), Value::from(record.patient_id));
    m.insert("interval_days".into(), Value::from(days));
    m.insert("seed".into(), Value::from(cfg.seed));
    m.insert("channels".into(), Value::from(PREDICTION_CHANNEL_NAMES.to_vec()));
    m
}

#[derive(Serialize)]
struct LaterFuture {
    patient_id: u32,
    interval_days: f64,
    v_time2: usize,
    v_time3_true: usize,
    v_predicted: usize,
}

fn predict(cfg: &RunConfig) -> Result<Status> {
    let dataset = cfg.require(&cfg.dataset, "dataset")?;
    let out = cfg.require(&cfg.out, "out")?;
    let ck = load_checkpoint(cfg, Mode::Prediction)?;
    let slices = ck.train.as_ref().map_or(cfg.train.slices, |t| t.slices);
    let manifest = Manifest::read(dataset)?;
    check_fold(cfg, &manifest)?;
    let fold = cfg.fold;
    let (manifest, records) = load_prediction_dataset(dataset, |e| fold.is_none() || e.fold == fold)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.echo(out)?;
    let images = out.join("images");
    let margin = cfg.sampling.test_margin;

    let results = records
        .par_iter()
        .map(|rec| -> Result<(PatientResult, Option<LaterFuture>)> {
            let entry_fold = manifest.entry(rec.patient_id).and_then(|e| e.fold).unwrap_or(0);
            let (result, pred) = prediction::evaluate_patient(rec, entry_fold, &ck.params, &ck.network, slices, margin)?;
            write_raw(&out.join(prediction_file(rec.patient_id)), prediction_meta(cfg, rec, rec.intervals[1]), &pred)?;
            write_slices(&images, &format!("patient{}_t3", rec.patient_id), &pred, &PREDICTION_CHANNEL_NAMES)?;
            let later = match cfg.interval_days {
                None => None,
                Some(days) => {
                    let v = prediction::predict_volume(rec, [rec.intervals[0], days], &ck.params, &ck.network, slices, margin)?;
                    let stem = format!("patient{}_later_{days}d", rec.patient_id);
                    write_raw(&out.join(format!("{stem}.stcl")), prediction_meta(cfg, rec, days), &v)?;
                    write_slices(&images, &stem, &v, &PREDICTION_CHANNEL_NAMES)?;
                    Some(LaterFuture {
                        patient_id: rec.patient_id,
                        interval_days: days,
                        v_time2: rec.mask_volume(1),
                        v_time3_true: rec.mask_volume(2),
                        v_predicted: prediction::predicted_voxels(&v),
                    })
                }
            };
            Ok((result, later))
        })
        .collect::<Result<Vec<_>>>()?;
    let (patients, later): (Vec<PatientResult>, Vec<Option<LaterFuture>>) = results.into_iter().unzip();
    let report = CohortReport::new(cfg.seed, config_value(cfg)?, patients)?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;
    let later: Vec<LaterFuture> = later.into_iter().flatten().collect();
    if !later.is_empty() {
        write_json(&out.join("later_future.json"), &later)?;
    }
    print_cohort(&report);
    Ok(Status::Success)
}

fn print_cohort(report: &CohortReport) {
    println!("patients: {}", report.patients.len());
    for (name, summary) in [("st-convlstm", &report.model), ("linear baseline", &report.baseline)] {
        println!("{name}:");
        for (metric, text) in &summary.table {
            println!("  {metric:<10} {text}");
        }
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
        println!(
            "  progression sensitivity {} (n={}), regression specificity {} (n={})",
            pct(summary.progression.sensitivity),
            summary.progression.progressing,
            pct(summary.progression.specificity),
            summary.progression.regressing
        );
    }
}

fn segment(cfg: &RunConfig) -> Result<Status> {
    let dataset = cfg.require(&cfg.dataset, "dataset")?;
    let out = cfg.require(&cfg.out, "out")?;
    let ck = load_checkpoint(cfg, Mode::Segmentation)?;
    let (manifest, mut sequences) = load_segmentation_dataset(dataset, |e| e.split.as_deref() == Some(TEST_SPLIT))?;
    if sequences.is_empty() {
        log::warn!("no test split in {}; segmenting every sequence", dataset.display());
        sequences = load_segmentation_dataset(dataset, |_| true)?.1;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.echo(out)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut results = Vec::with_capacity(sequences.len());
    for seq in &sequences {
        let (result, masks) = evaluate_sequence(seq, &ck.params, &ck.network)?;
        log::info!("sequence {}: {:.2}s", seq.id, result.seconds);
        let (t_n, s_n) = (masks.len(), masks[0].len());
        let (rows, cols) = (seq.volumes[0].rows, seq.volumes[0].cols);
        let mut vol = Volume::zeros(t_n * s_n, rows, cols, 1);
        for (t, col) in masks.iter().enumerate() {
            for (s, m) in col.iter().enumerate() {
                let px: Vec<u8> = m.iter().map(|&b| if b { 255 } else { 0 }).collect();
                for (i, &p) in px.iter().enumerate() {
                    vol.set(t * s_n + s, i / cols, i % cols, 0, f32::from(p));
                }
                write_pgm(&images.join(format!("seq{}_t{}_s{:02}.pgm", seq.id, t + 1, s + 1)), rows, cols, &px)?;
            }
        }
        let mut meta = Map::new();
        meta.insert("kind".into(), Value::from("segmentation"));
        meta.insert("sequence_id".into(), Value::from(seq.id));
        meta.insert("times".into(), Value::from(t_n));
        meta.insert("slices".into(), Value::from(s_n));
        meta.insert("seed".into(), Value::from(cfg.seed));
        write_raw(&out.join(format!("seq{}_masks.stcl", seq.id)), meta, &vol)?;
        results.push(result);
    }
    let mean = mean_dice(&results);
    let per_time: Vec<f64> = results.iter().flat_map(|r| r.dice_by_time.iter().map(|d| d.1)).collect();
    let mut report = Map::new();
    report.insert("config".into(), config_value(cfg)?);
    report.insert("seed".into(), Value::from(cfg.seed));
    report.insert("dataset_seed".into(), Value::from(manifest.seed));
    report.insert("sequences".into(), serde_json::to_value(&results)?);
    report.insert("mean_dice".into(), serde_json::to_value(mean)?);
    report.insert("dice".into(), Value::from(Summary::of(&per_time).map(|s| s.percent())));
    report.insert("labeled_times".into(), Value::from(echo::labeled_times().iter().map(|t| t + 1).collect::<Vec<_>>()));
    write_json(&out.join("report.json"), &report)?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .flat_map(|r| {
            r.frames
                .iter()
                .map(move |f| vec![r.id.to_string(), f.time.to_string(), f.slice.to_string(), f.dice.to_string()])
        })
        .collect();
    metrics::write_csv(&out.join("report.csv"), &["sequence_id", "time", "slice", "dice"], &rows)?;
    match Summary::of(&per_time) {
        Some(s) => println!("dice at labeled time points: {}", s.percent()),
        None => println!("no labeled time points"),
    }
    Ok(Status::Success)
}

fn read_prediction(path: &Path) -> Result<Volume> {
    let c = format::read_file(path)?;
    let format::Payload::F32(data) = c.payload else {
        return Err(Error::format(10, format!("{}: predictions are stored as f32", path.display())));
    };
    if c.dims.len() != 4 {
        return Err(Error::format(10, format!("{}: expected 4 dims", path.display())));
    }
    Volume::from_data(c.dims[0], c.dims[1], c.dims[2], c.dims[3], data)
}

/// Patient ids of `patient{id}_t3_pred.stcl` files in `dir`.
fn prediction_ids(dir: &Path) -> Result<BTreeSet<u32>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name
            .strip_prefix("patient")
            .and_then(|r| r.strip_suffix("_t3_pred.stcl"))
            .and_then(|r| r.parse().ok())
        {
            ids.insert(id);
        }
    }
    Ok(ids)
}

fn eval(cfg: &RunConfig) -> Result<Status> {
    let dataset = cfg.require(&cfg.dataset, "dataset")?;
    let preds = cfg.require(&cfg.predictions, "predictions")?;
    let out = cfg.require(&cfg.out, "out")?;
    let manifest = Manifest::read(dataset)?;
    check_fold(cfg, &manifest)?;
    let fold = cfg.fold;
    let keep = |e: &ManifestEntry| fold.is_none() || e.fold == fold;
    let expected: BTreeSet<u32> = manifest.patients.iter().filter(|e| keep(e)).map(|e| e.id).collect();
    let found = prediction_ids(preds)?;
    let missing: Vec<u32> = expected.difference(&found).copied().collect();
    let extra: Vec<u32> = found.difference(&expected).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Config(format!(
            "unmatched patient ids: missing predictions {missing:?}, predictions without ground truth {extra:?}"
        )));
    }
    let (_, records) = load_prediction_dataset(dataset, keep)?;
    for rec in &records {
        let p = time_point_path(dataset, rec.patient_id, 2);
        if !p.exists() {
            return Err(Error::io(&p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    let patients = records
        .par_iter()
        .map(|rec| {
            let pred = read_prediction(&preds.join(prediction_file(rec.patient_id)))?;
            let f = manifest.entry(rec.patient_id).and_then(|e| e.fold).unwrap_or(0);
            prediction::patient_result(rec, f, &pred)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.echo(out)?;
    let report = CohortReport::new(cfg.seed, config_value(cfg)?, patients)?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;
    print_cohort(&report);
    let r = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    println!(
        "pearson r: volume {}, growth rate {}",
        r(report.model.volume_r),
        r(report.model.growth_r)
    );
    Ok(Status::Success)
}

fn gradcheck_cmd(cfg: &RunConfig) -> Result<Status> {
    let start = std::time::Instant::now();
    let report = gradcheck::run(cfg.seed)?;
    for c in &report.checks {
        println!("{:<10} {:<40} {:>6} entries  worst {:.3e}", c.suite, c.name, c.entries, c.worst_relative_error);
    }
    println!(
        "worst relative error {:.3e} (tolerance {:.0e}) in {:.1}s",
        report.worst_relative_error,
        report.tolerance,
        start.elapsed().as_secs_f64()
    );
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    if report.passed {
        println!("PASS");
        Ok(Status::Success)
    } else {
        Ok(Status::CheckFailed(format!(
            "worst relative error {:.3e} exceeds {:.0e}",
            report.worst_relative_error, report.tolerance
        )))
    }
}
