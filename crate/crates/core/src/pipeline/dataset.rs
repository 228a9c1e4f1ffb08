//! Writing and loading whole dataset directories.

use std::path::Path;

use crate::datagen::echo::{self, generate_echo_set, read_echo, write_echo, EchoSequence, ECHO_CHANNELS};
use crate::datagen::io::{assign_folds, read_record, write_record, Manifest, ManifestEntry, PREDICTION_CHANNELS};
use crate::datagen::{generate_cohort, DatasetRecord};
use crate::error::{Error, Result};

pub const PREDICTION_KIND: &str = "prediction";
pub const SEGMENTATION_KIND: &str = "segmentation";
pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";

fn channels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Generates `n` phantom patients into `dir` with a `folds`-way split.
pub fn write_prediction_dataset(dir: &Path, seed: u64, n: usize, folds: usize) -> Result<Manifest> {
    if folds == 0 {
        return Err(Error::Config("fold count must be >= 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if n == 0 {
        log::warn!("generating an empty dataset");
    }
    let records = generate_cohort(seed, n);
    let ids: Vec<u32> = records.iter().map(|r| r.patient_id).collect();
    let assignment = assign_folds(&ids, seed, folds);
    let mut patients = Vec::with_capacity(n);
    for (rec, (_, fold)) in records.iter().zip(&assignment) {
        write_record(dir, rec)?;
        patients.push(ManifestEntry {
            id: rec.patient_id,
            seed: rec.seed,
            intervals: rec.intervals.clone(),
            time_points: rec.time_points(),
            fold: Some(*fold),
            split: None,
            labeled_times: None,
        });
    }
    let manifest = Manifest {
        kind: PREDICTION_KIND.into(),
        seed,
        folds,
        channels: channels(&PREDICTION_CHANNELS),
        patients,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Generates `n` echo sequences; the first `train` ids form the training split.
pub fn write_segmentation_dataset(dir: &Path, seed: u64, n: usize, train: usize) -> Result<Manifest> {
    if train > n {
        return Err(Error::Config(format!("training split {train} exceeds {n} sequences")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if n == 0 {
        log::warn!("generating an empty dataset");
    }
    let seqs = generate_echo_set(seed, n);
    let mut patients = Vec::with_capacity(n);
    for (i, seq) in seqs.iter().enumerate() {
        write_echo(dir, seq)?;
        patients.push(ManifestEntry {
            id: seq.id,
            seed: seq.seed,
            intervals: Vec::new(),
            time_points: seq.volumes.len(),
            fold: None,
            split: Some(if i < train { TRAIN_SPLIT } else { TEST_SPLIT }.into()),
            labeled_times: Some(echo::labeled_times().iter().map(|t| t + 1).collect()),
        });
    }
    let manifest = Manifest {
        kind: SEGMENTATION_KIND.into(),
        seed,
        folds: 0,
        channels: channels(&ECHO_CHANNELS),
        patients,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

fn expect_kind(m: &Manifest, kind: &str, dir: &Path) -> Result<()> {
    if m.kind != kind {
        return Err(Error::Config(format!(
            "{} holds a {} dataset, expected {kind}",
            dir.display(),
            m.kind
        )));
    }
    Ok(())
}

/// Loads the patients of a prediction dataset whose ids satisfy `keep`.
pub fn load_prediction_dataset(dir: &Path, keep: impl Fn(&ManifestEntry) -> bool) -> Result<(Manifest, Vec<DatasetRecord>)> {
    let m = Manifest::read(dir)?;
    expect_kind(&m, PREDICTION_KIND, dir)?;
    let records = m
        .patients
        .iter()
        .filter(|e| keep(e))
        .map(|e| read_record(dir, e.id, e.time_points))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, records))
}

pub fn load_segmentation_dataset(dir: &Path, keep: impl Fn(&ManifestEntry) -> bool) -> Result<(Manifest, Vec<EchoSequence>)> {
    let m = Manifest::read(dir)?;
    expect_kind(&m, SEGMENTATION_KIND, dir)?;
    let seqs = m
        .patients
        .iter()
        .filter(|e| keep(e))
        .map(|e| read_echo(dir, e.id, e.time_points))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, seqs))
}
