//! Tumor growth prediction experiment: augmented training windows,
//! whole-volume inference from non-overlapping windows, the linear
//! baseline, and cross-validated evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::augment::Augmentation;
use crate::datagen::window::{crop_windows, subsequence, tumor_extent, window_starts};
use crate::datagen::{DatasetRecord, CT, ICVF, MASK};
use crate::error::{contract, Error, Result};
use crate::metrics::{self, Channels, VolumeReport};
use crate::network::baseline::{linear_baseline, MaskRef};
use crate::network::{interval_factors, predict_future, NetworkConfig, NetworkParams};
use crate::tensor::FeatureMap;
use crate::training::{self, Dataset, EpochReport, TrainConfig, TrainingItem};
use crate::volume::{Volume, MASK_THRESHOLD};

/// How training sub-sequences are drawn from each patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Largest in-plane translation applied with each augmentation.
    pub max_shift: i32,
    /// Slices added on both sides of the tumor extent for training windows.
    pub train_margin: usize,
    /// Slices added on both sides of the tumor extent at test time.
    pub test_margin: usize,
    /// Random subset of the augmented windows kept per patient; `None`
    /// keeps all of them.
    pub items_per_patient: Option<usize>,
    /// Also train on `(t1, t2) -> t4` when a fourth time point exists, so the
    /// interval factor sees long intervals with compounded growth.
    #[serde(default = "enabled")]
    pub later_targets: bool,
}

fn enabled() -> bool {
    true
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            max_shift: 2,
            train_margin: 1,
            test_margin: 2,
            items_per_patient: Some(160),
            later_targets: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ItemRef {
    record: usize,
    /// Input, input and target time points.
    times: [usize; 3],
    variant: usize,
    augmentation: Augmentation,
    start: usize,
}

/// Training set of `(t1, t2) -> (t2, t3)` sub-sequences, plus
/// `(t1, t2) -> (t2, t4)` ones when enabled. Augmented volumes
/// are recomputed per item, so memory stays proportional to the records.
pub struct PredictionData {
    records: Vec<DatasetRecord>,
    items: Vec<ItemRef>,
    slices: usize,
}

impl PredictionData {
    pub fn build(records: Vec<DatasetRecord>, slices: usize, sampling: &SamplingConfig, seed: u64) -> Result<Self> {
        let per_record: Vec<Result<Vec<ItemRef>>> = records
            .par_iter()
            .enumerate()
            .map(|(ri, rec)| {
                contract!(rec.time_points() >= 3, "patient {} has fewer than 3 time points", rec.patient_id);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ rec.seed);
                rng.set_stream(3);
                let mut triples = vec![[0, 1, 2]];
                if sampling.later_targets && rec.time_points() >= 4 {
                    triples.push([0, 1, 3]);
                }
                let mut refs = Vec::new();
                for (variant, augmentation) in Augmentation::enumerate(&mut rng, sampling.max_shift).into_iter().enumerate() {
                    let vols: Vec<Volume> = rec.volumes.iter().map(|v| augmentation.apply(v)).collect();
                    for &times in &triples {
                        for start in crop_windows(&vols, &times, slices, true, sampling.train_margin) {
                            refs.push(ItemRef { record: ri, times, variant, augmentation, start });
                        }
                    }
                }
                if let Some(cap) = sampling.items_per_patient {
                    if refs.len() > cap {
                        refs.shuffle(&mut rng);
                        refs.truncate(cap);
                        refs.sort_by_key(|r| (r.variant, r.times, r.start));
                    }
                }
                Ok(refs)
            })
            .collect();
        let mut items = Vec::new();
        for r in per_record {
            items.extend(r?);
        }
        Ok(Self { records, items, slices })
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }
}

impl Dataset for PredictionData {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn item(&self, i: usize) -> Result<TrainingItem> {
        let r = self.items.get(i).ok_or_else(|| Error::Contract(format!("item {i} out of range")))?;
        let rec = &self.records[r.record];
        let vols: Vec<Volume> = r
            .times
            .iter()
            .map(|&k| r.augmentation.apply_window(&rec.volumes[k], r.start, self.slices))
            .collect();
        let [a, b, c] = r.times;
        let intervals = [rec.intervals[a..b].iter().sum(), rec.intervals[b..c].iter().sum()];
        let seq = subsequence(&vols, &[0, 1, 2], 0, self.slices, &intervals);
        let factors = interval_factors(&intervals, 2)?;
        TrainingItem::prediction(seq.frames, factors)
    }
}

/// Inclusive test slice range: the tumor extent at times 1 and 2 widened by
/// `margin`, grown to at least `slices` slices.
fn test_range(record: &DatasetRecord, slices: usize, margin: usize) -> Result<(usize, usize)> {
    let depth = record.volumes[0].slices;
    contract!(depth >= slices, "volume has {depth} slices, windows need {slices}");
    let (mut lo, mut hi) = tumor_extent(&[&record.volumes[0], &record.volumes[1]], MASK, margin)
        .ok_or_else(|| Error::Contract(format!("patient {} has no tumor at times 1-2", record.patient_id)))?;
    while hi + 1 - lo < slices {
        if hi + 1 < depth {
            hi += 1;
        }
        if hi + 1 - lo < slices && lo > 0 {
            lo -= 1;
        }
    }
    Ok((lo, hi))
}

/// Predicts the volume at the time `intervals[1]` days after time 2 from
/// times 1 and 2 (`intervals[0]` apart). Overlapping window outputs are
/// averaged; slices outside every window keep the time-2 image with an
/// empty mask. The result is in storage scale.
pub fn predict_volume(
    record: &DatasetRecord,
    intervals: [f64; 2],
    params: &NetworkParams,
    cfg: &NetworkConfig,
    slices: usize,
    margin: usize,
) -> Result<Volume> {
    let (lo, hi) = test_range(record, slices, margin)?;
    let t2 = &record.volumes[1];
    let mut sum: Vec<Option<FeatureMap>> = vec![None; t2.slices];
    let mut count = vec![0usize; t2.slices];
    for start in window_starts(lo, hi, slices, false) {
        let seq = subsequence(&record.volumes, &[0, 1], start, slices, &intervals);
        let out = predict_future(&seq.frames[0], &seq.frames[1], &intervals, params, cfg)?;
        for (k, frame) in out.time3.into_iter().enumerate() {
            let s = start + k;
            count[s] += 1;
            sum[s] = Some(match sum[s].take() {
                None => frame,
                Some(mut acc) => {
                    acc.data_mut().iter_mut().zip(frame.data()).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
    }
    let mut out = t2.clone();
    for s in 0..t2.slices {
        match sum[s].take() {
            Some(mut acc) => {
                let inv = 1.0 / count[s] as f64;
                acc.data_mut().iter_mut().for_each(|v| *v *= inv);
                out.set_frame(s, &acc)?;
            }
            None => {
                for r in 0..t2.rows {
                    for c in 0..t2.cols {
                        out.set(s, r, c, MASK, 0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn as_f64(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

/// Compares a predicted storage-scale volume with the ground truth.
pub fn evaluate_volume(pred: &Volume, gt: &Volume) -> Result<VolumeReport> {
    contract!(pred.dims() == gt.dims(), "volume dims differ: {:?} vs {:?}", pred.dims(), gt.dims());
    let (pi, gi) = (as_f64(pred.channel(ICVF)), as_f64(gt.channel(ICVF)));
    let (pc, gc) = (as_f64(pred.channel(CT)), as_f64(gt.channel(CT)));
    let (pm, gm) = (pred.mask(MASK), gt.mask(MASK));
    metrics::evaluate(
        Channels { icvf: &pi, ct: &pc, mask: &pm },
        Channels { icvf: &gi, ct: &gc, mask: &gm },
    )
}

/// Linear-growth baseline mask for time 3 as a storage-scale volume whose
/// intensity channels are copied from time 2.
pub fn baseline_volume(record: &DatasetRecord) -> Result<Volume> {
    let (v1, v2) = (&record.volumes[0], &record.volumes[1]);
    let dims = [v1.slices, v1.rows, v1.cols];
    let (m1, m2) = (v1.mask(MASK), v2.mask(MASK));
    let mask = linear_baseline(
        MaskRef { dims, data: &m1 },
        MaskRef { dims, data: &m2 },
        record.intervals[0],
        record.intervals[1],
    )?;
    let mut out = v2.clone();
    let n = v2.rows * v2.cols;
    for (i, &b) in mask.iter().enumerate() {
        let (s, rc) = (i / n, i % n);
        out.set(s, rc / v2.cols, rc % v2.cols, MASK, if b { 255.0 } else { 0.0 });
    }
    Ok(out)
}

/// Foreground count of a storage-scale mask channel.
pub fn predicted_voxels(v: &Volume) -> usize {
    v.channel(MASK).iter().filter(|&&x| x >= MASK_THRESHOLD).count()
}

/// Per-patient outcome of one test fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub patient_id: u32,
    pub fold: usize,
    pub model: VolumeReport,
    pub baseline: VolumeReport,
    pub v_time2: usize,
    pub true_growth: f64,
    pub predicted_growth: f64,
    pub baseline_growth: f64,
}

/// Scores a storage-scale time-3 prediction of `record` against its ground
/// truth, alongside the linear baseline.
pub fn patient_result(record: &DatasetRecord, fold: usize, pred: &Volume) -> Result<PatientResult> {
    contract!(record.time_points() >= 3, "patient {} has fewer than 3 time points", record.patient_id);
    let base = baseline_volume(record)?;
    let gt = &record.volumes[2];
    let v2 = record.mask_volume(1);
    Ok(PatientResult {
        patient_id: record.patient_id,
        fold,
        model: evaluate_volume(pred, gt)?,
        baseline: evaluate_volume(&base, gt)?,
        v_time2: v2,
        true_growth: record.growth_rate(1),
        predicted_growth: metrics::growth_rate(v2, predicted_voxels(pred))?,
        baseline_growth: metrics::growth_rate(v2, predicted_voxels(&base))?,
    })
}

/// Predicts time 3 of one test patient and scores it.
pub fn evaluate_patient(
    record: &DatasetRecord,
    fold: usize,
    params: &NetworkParams,
    cfg: &NetworkConfig,
    slices: usize,
    margin: usize,
) -> Result<(PatientResult, Volume)> {
    contract!(record.time_points() >= 3, "patient {} has fewer than 3 time points", record.patient_id);
    let intervals = [record.intervals[0], record.intervals[1]];
    let pred = predict_volume(record, intervals, params, cfg, slices, margin)?;
    Ok((patient_result(record, fold, &pred)?, pred))
}

/// Predicted tumor volume (voxels) for each substituted second interval.
pub fn later_future_volumes(
    record: &DatasetRecord,
    days: &[f64],
    params: &NetworkParams,
    cfg: &NetworkConfig,
    slices: usize,
    margin: usize,
) -> Result<Vec<usize>> {
    days.iter()
        .map(|&d| {
            let v = predict_volume(record, [record.intervals[0], d], params, cfg, slices, margin)?;
            Ok(predicted_voxels(&v))
        })
        .collect()
}

/// Outcome of training and testing one fold.
pub struct FoldOutcome {
    pub fold: usize,
    pub params: NetworkParams,
    pub history: Vec<f64>,
    pub results: Vec<PatientResult>,
}

/// Trains on every record outside `fold` and evaluates the records in it.
/// `assignment` maps record index to fold.
pub fn run_fold(
    records: &[DatasetRecord],
    assignment: &[usize],
    fold: usize,
    cfg: &NetworkConfig,
    tc: &TrainConfig,
    sampling: &SamplingConfig,
    on_epoch: &mut dyn FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<FoldOutcome> {
    contract!(assignment.len() == records.len(), "fold assignment length mismatch");
    let train: Vec<DatasetRecord> = records
        .iter()
        .zip(assignment)
        .filter(|(_, &f)| f != fold)
        .map(|(r, _)| r.clone())
        .collect();
    let test: Vec<&DatasetRecord> = records
        .iter()
        .zip(assignment)
        .filter(|(_, &f)| f == fold)
        .map(|(r, _)| r)
        .collect();
    let data = PredictionData::build(train, tc.slices, sampling, tc.seed)?;
    log::info!("fold {fold}: {} training windows, {} test patients", data.len(), test.len());
    let outcome = training::train(&data, cfg, tc, on_epoch)?;
    let results = test
        .par_iter()
        .map(|r| evaluate_patient(r, fold, &outcome.params, cfg, tc.slices, sampling.test_margin).map(|(p, _)| p))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldOutcome {
        fold,
        params: outcome.params,
        history: outcome.history,
        results,
    })
}
