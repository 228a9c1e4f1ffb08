//! Dataset directories: `patient{id}_t{k}.stcl` per patient and time point
//! (`k` is 1-based) plus `manifest.json`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DatasetRecord;
use crate::error::{Error, Result};
use crate::format::{self, meta_field, Payload};
use crate::volume::Volume;

pub const MANIFEST: &str = "manifest.json";

pub fn time_point_path(dir: &Path, patient_id: u32, k: usize) -> PathBuf {
    dir.join(format!("patient{patient_id}_t{}.stcl", k + 1))
}

/// Metadata stored in every time-point file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePointMeta {
    pub patient_id: u32,
    /// 1-based time index.
    pub time_index: usize,
    pub intervals: Vec<f64>,
    pub seed: u64,
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled: Option<bool>,
}

pub fn write_time_point(path: &Path, meta: &TimePointMeta, volume: &Volume) -> Result<()> {
    let Value::Object(mut m) = serde_json::to_value(meta)? else {
        unreachable!("struct serialises to an object");
    };
    m.insert("kind".into(), Value::from("volume"));
    format::write_file(path, &m, &volume.dims(), &Payload::F32(volume.data.clone()))
}

pub fn read_time_point(path: &Path) -> Result<(TimePointMeta, Volume)> {
    let c = format::read_file(path)?;
    let meta: TimePointMeta = serde_json::from_value(Value::Object(c.meta.clone()))
        .map_err(|e| Error::format(10, format!("{}: bad volume metadata: {e}", path.display())))?;
    if c.dims.len() != 4 {
        return Err(Error::format(10, format!("{}: expected 4 dims, got {:?}", path.display(), c.dims)));
    }
    let Payload::F32(data) = c.payload else {
        return Err(Error::format(10, format!("{}: volumes are stored as f32", path.display())));
    };
    let v = Volume::from_data(c.dims[0], c.dims[1], c.dims[2], c.dims[3], data)?;
    Ok((meta, v))
}

pub const PREDICTION_CHANNELS: [&str; 3] = ["icvf", "ct", "mask"];

/// Writes every time point of a prediction record.
pub fn write_record(dir: &Path, record: &DatasetRecord) -> Result<()> {
    for (k, v) in record.volumes.iter().enumerate() {
        let meta = TimePointMeta {
            patient_id: record.patient_id,
            time_index: k + 1,
            intervals: record.intervals.clone(),
            seed: record.seed,
            channels: PREDICTION_CHANNELS.iter().map(|s| s.to_string()).collect(),
            labeled: None,
        };
        write_time_point(&time_point_path(dir, record.patient_id, k), &meta, v)?;
    }
    Ok(())
}

/// Reads `time_points` files of a patient.
pub fn read_record(dir: &Path, patient_id: u32, time_points: usize) -> Result<DatasetRecord> {
    let mut volumes = Vec::with_capacity(time_points);
    let mut first: Option<TimePointMeta> = None;
    for k in 0..time_points {
        let path = time_point_path(dir, patient_id, k);
        let (meta, v) = read_time_point(&path)?;
        if meta.patient_id != patient_id || meta.time_index != k + 1 {
            return Err(Error::format(
                10,
                format!("{}: header names patient {} time {}", path.display(), meta.patient_id, meta.time_index),
            ));
        }
        first.get_or_insert(meta);
        volumes.push(v);
    }
    let meta = first.ok_or_else(|| Error::Config("record with zero time points".into()))?;
    Ok(DatasetRecord {
        patient_id,
        seed: meta.seed,
        intervals: meta.intervals,
        volumes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u32,
    pub seed: u64,
    pub intervals: Vec<f64>,
    pub time_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_times: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `"prediction"` or `"segmentation"`.
    pub kind: String,
    pub seed: u64,
    pub folds: usize,
    pub channels: Vec<String>,
    pub patients: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = format::to_sorted_json(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))
    }

    pub fn fold_ids(&self, fold: usize) -> Vec<u32> {
        self.patients.iter().filter(|p| p.fold == Some(fold)).map(|p| p.id).collect()
    }

    pub fn split_ids(&self, split: &str) -> Vec<u32> {
        self.patients
            .iter()
            .filter(|p| p.split.as_deref() == Some(split))
            .map(|p| p.id)
            .collect()
    }

    pub fn entry(&self, id: u32) -> Option<&ManifestEntry> {
        self.patients.iter().find(|p| p.id == id)
    }
}

/// Seeded assignment of `ids` to `k` folds whose sizes differ by at most one.
pub fn assign_folds(ids: &[u32], seed: u64, k: usize) -> Vec<(u32, usize)> {
    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    shuffled.shuffle(&mut rng);
    let mut out: Vec<(u32, usize)> = shuffled.iter().enumerate().map(|(i, &id)| (id, i % k.max(1))).collect();
    out.sort_unstable();
    out
}

/// Reads a static metadata field from a time-point file header.
pub fn read_header_field<T: serde::de::DeserializeOwned>(path: &Path, key: &str) -> Result<T> {
    meta_field(&format::read_file(path)?.meta, key)
}
