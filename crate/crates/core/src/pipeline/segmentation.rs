//! Sparse-label segmentation experiment on the synthetic echo sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::echo::EchoSequence;
use crate::error::{contract, Error, Result};
use crate::metrics;
use crate::network::{segment, NetworkConfig, NetworkParams};
use crate::tensor::FeatureMap;
use crate::training::{Dataset, GridTargets, TrainingItem};

/// Full sequences, supervised only where a label exists.
pub struct SegmentationData {
    pub sequences: Vec<EchoSequence>,
}

fn target(seq: &EchoSequence, t: usize, s: usize) -> Option<FeatureMap> {
    let v = &seq.volumes[t];
    seq.label(t, s).map(|m| {
        let data = m.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        FeatureMap::new(v.rows, v.cols, 1, data).expect("label dims")
    })
}

pub fn segmentation_item(seq: &EchoSequence) -> TrainingItem {
    let inputs = seq.frames();
    let targets: GridTargets = (0..seq.volumes.len())
        .map(|t| (0..seq.volumes[t].slices).map(|s| target(seq, t, s)).collect())
        .collect();
    TrainingItem {
        inputs,
        factors: Vec::new(),
        targets,
    }
}

impl Dataset for SegmentationData {
    fn len(&self) -> usize {
        self.sequences.len()
    }

    fn item(&self, i: usize) -> Result<TrainingItem> {
        let seq = self
            .sequences
            .get(i)
            .ok_or_else(|| Error::Contract(format!("sequence {i} out of range")))?;
        Ok(segmentation_item(seq))
    }
}

/// Dice of one labeled `(t, s)` frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDice {
    pub time: usize,
    pub slice: usize,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub id: u32,
    /// Volumetric Dice per labeled time point (1-based time, Dice).
    pub dice_by_time: Vec<(usize, f64)>,
    pub frames: Vec<FrameDice>,
    /// Inference wall time; kept out of reports so they stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

/// Masks `[t][s]` for every frame and Dice where labels exist.
pub fn evaluate_sequence(
    seq: &EchoSequence,
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<(SequenceResult, Vec<Vec<Vec<bool>>>)> {
    contract!(!seq.volumes.is_empty(), "sequence {} has no time points", seq.id);
    let start = std::time::Instant::now();
    let masks = segment(&seq.frames(), params, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut frames = Vec::new();
    let mut dice_by_time = Vec::new();
    for (t, col) in masks.iter().enumerate() {
        if !seq.labeled[t] {
            continue;
        }
        let mut pred_all = Vec::new();
        let mut gt_all = Vec::new();
        for (s, pred) in col.iter().enumerate() {
            let gt = seq.label(t, s).expect("labeled");
            if let Ok(d) = metrics::dice(pred, &gt) {
                frames.push(FrameDice { time: t + 1, slice: s + 1, dice: d });
            }
            pred_all.extend_from_slice(pred);
            gt_all.extend(gt);
        }
        dice_by_time.push((t + 1, metrics::dice(&pred_all, &gt_all)?));
    }
    Ok((
        SequenceResult {
            id: seq.id,
            dice_by_time,
            frames,
            seconds,
        },
        masks,
    ))
}

/// Evaluates sequences in parallel, results in input order.
pub fn evaluate_sequences(
    seqs: &[EchoSequence],
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<Vec<SequenceResult>> {
    seqs.par_iter()
        .map(|s| evaluate_sequence(s, params, cfg).map(|(r, _)| r))
        .collect()
}

/// Mean of the volumetric Dice over every labeled time point of `results`.
pub fn mean_dice(results: &[SequenceResult]) -> Option<f64> {
    let all: Vec<f64> = results.iter().flat_map(|r| r.dice_by_time.iter().map(|d| d.1)).collect();
    (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
}
