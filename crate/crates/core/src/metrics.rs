//! Volumetric evaluation metrics, progression scoring and cohort summaries.
//!
//! All functions take flat voxel slices of equal length, so they are
//! independent of layout. Masks are boolean; intensity channels are in the
//! stored `[0, 255]` scale unless noted.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::storage_to_hu;
use crate::error::{Error, Result};

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: length {a} vs {b}")));
    }
    Ok(())
}

/// `(TPV, V_pred, V_gt)` in voxels.
pub fn volumes(pred: &[bool], gt: &[bool]) -> Result<(usize, usize, usize)> {
    same_len(pred.len(), gt.len(), "masks")?;
    let mut tpv = 0;
    let mut vp = 0;
    let mut vg = 0;
    for (&p, &g) in pred.iter().zip(gt) {
        vp += p as usize;
        vg += g as usize;
        tpv += (p && g) as usize;
    }
    Ok((tpv, vp, vg))
}

pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    let (tpv, vp, vg) = volumes(pred, gt)?;
    if vp + vg == 0 {
        return Err(Error::Undefined("Dice of two empty masks".into()));
    }
    Ok(2.0 * tpv as f64 / (vp + vg) as f64)
}

pub fn rvd(pred: &[bool], gt: &[bool]) -> Result<f64> {
    let (_, vp, vg) = volumes(pred, gt)?;
    if vg == 0 {
        return Err(Error::Undefined("RVD with empty ground truth".into()));
    }
    Ok((vp as f64 - vg as f64).abs() / vg as f64)
}

/// Relative RMSE over the true-positive voxels and the number of those
/// voxels skipped because the ground truth is zero there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeRmse {
    pub value: f64,
    pub excluded: usize,
}

/// `sqrt(mean((pred - gt)^2 / gt^2))` over the TPV. Any common scale of
/// the two intensity slices cancels.
pub fn icvf_rmse(pred_icvf: &[f64], gt_icvf: &[f64], pred_mask: &[bool], gt_mask: &[bool]) -> Result<RelativeRmse> {
    same_len(pred_mask.len(), gt_mask.len(), "masks")?;
    same_len(pred_icvf.len(), pred_mask.len(), "predicted ICVF")?;
    same_len(gt_icvf.len(), gt_mask.len(), "ground-truth ICVF")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut tpv = 0usize;
    let mut excluded = 0usize;
    for i in 0..gt_mask.len() {
        if !(pred_mask[i] && gt_mask[i]) {
            continue;
        }
        tpv += 1;
        if gt_icvf[i] == 0.0 {
            excluded += 1;
            continue;
        }
        let r = (pred_icvf[i] - gt_icvf[i]) / gt_icvf[i];
        sum += r * r;
        n += 1;
    }
    if tpv == 0 {
        return Err(Error::Undefined("ICVF RMSE with empty TPV".into()));
    }
    if n == 0 {
        return Err(Error::Undefined("ICVF RMSE: ground truth is zero on every TPV voxel".into()));
    }
    Ok(RelativeRmse {
        value: (sum / n as f64).sqrt(),
        excluded,
    })
}

/// `|mean HU_pred - mean HU_gt| / |mean HU_gt|` over the TPV, with the
/// stored CT values mapped back to Hounsfield units first.
pub fn diff_hu(pred_ct: &[f64], gt_ct: &[f64], pred_mask: &[bool], gt_mask: &[bool]) -> Result<f64> {
    same_len(pred_mask.len(), gt_mask.len(), "masks")?;
    same_len(pred_ct.len(), pred_mask.len(), "predicted CT")?;
    same_len(gt_ct.len(), gt_mask.len(), "ground-truth CT")?;
    let mut sp = 0.0;
    let mut sg = 0.0;
    let mut n = 0usize;
    for i in 0..gt_mask.len() {
        if pred_mask[i] && gt_mask[i] {
            sp += storage_to_hu(pred_ct[i]);
            sg += storage_to_hu(gt_ct[i]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Undefined("diff.HU with empty TPV".into()));
    }
    let (mp, mg) = (sp / n as f64, sg / n as f64);
    if mg == 0.0 {
        return Err(Error::Undefined("diff.HU: mean ground-truth HU is zero".into()));
    }
    Ok((mp - mg).abs() / mg.abs())
}

/// Per-volume evaluation. Intensity metrics are `None` when the TPV is
/// empty; `dice` is 0 when only one mask is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub dice: f64,
    pub rvd: f64,
    pub icvf_rmse: Option<f64>,
    pub icvf_excluded: usize,
    pub diff_hu: Option<f64>,
    pub tpv: usize,
    pub v_pred: usize,
    pub v_gt: usize,
}

/// Channels of one volume as flat slices.
#[derive(Clone, Copy, Debug)]
pub struct Channels<'a> {
    pub icvf: &'a [f64],
    pub ct: &'a [f64],
    pub mask: &'a [bool],
}

pub fn evaluate(pred: Channels<'_>, gt: Channels<'_>) -> Result<VolumeReport> {
    let (tpv, v_pred, v_gt) = volumes(pred.mask, gt.mask)?;
    let rmse = match icvf_rmse(pred.icvf, gt.icvf, pred.mask, gt.mask) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let dhu = match diff_hu(pred.ct, gt.ct, pred.mask, gt.mask) {
        Ok(v) => Some(v),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(VolumeReport {
        dice: dice(pred.mask, gt.mask)?,
        rvd: rvd(pred.mask, gt.mask)?,
        icvf_rmse: rmse.map(|r| r.value),
        icvf_excluded: rmse.map_or(0, |r| r.excluded),
        diff_hu: dhu,
        tpv,
        v_pred,
        v_gt,
    })
}

/// Growth rate `(after - before) / before` of two voxel counts.
pub fn growth_rate(before: usize, after: usize) -> Result<f64> {
    if before == 0 {
        return Err(Error::Undefined("growth rate from an empty volume".into()));
    }
    Ok((after as f64 - before as f64) / before as f64)
}

/// Sensitivity over truly progressing cases and specificity over truly
/// regressing ones. A zero true rate counts as neither class. A class
/// without members yields `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressionScores {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub progressing: usize,
    pub regressing: usize,
}

pub fn progression_scores(predicted: &[f64], truth: &[f64]) -> Result<ProgressionScores> {
    same_len(predicted.len(), truth.len(), "growth rates")?;
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        if t > 0.0 {
            pos += 1;
            tp += (p > 0.0) as usize;
        } else if t < 0.0 {
            neg += 1;
            tn += (p < 0.0) as usize;
        }
    }
    Ok(ProgressionScores {
        sensitivity: (pos > 0).then(|| tp as f64 / pos as f64),
        specificity: (neg > 0).then(|| tn as f64 / neg as f64),
        progressing: pos,
        regressing: neg,
    })
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len(), "samples")?;
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean, population standard deviation and range of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            n: values.len(),
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Formats as percentages, e.g. `83.2 ± 5.8 [71.6, 92.3]`.
    pub fn percent(&self) -> String {
        format!(
            "{:.1} ± {:.1} [{:.1}, {:.1}]",
            100.0 * self.mean,
            100.0 * self.std,
            100.0 * self.min,
            100.0 * self.max
        )
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} [{:.4}, {:.4}]", self.mean, self.std, self.min, self.max)
    }
}

/// Writes rows as CSV with a header line.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Contract(format!("csv row has {} fields, header {}", r.len(), header.len())));
        }
        w.write_record(r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Renders an optional number for CSV cells.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}
