//! Cohort reports for the prediction experiment: JSON with sorted keys and
//! a per-patient CSV.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prediction::PatientResult;
use crate::error::{Error, Result};
use crate::format;
use crate::metrics::{self, cell, ProgressionScores, Summary, VolumeReport};

/// Cohort statistics of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Metric name to summary; absent when no patient has a value.
    pub metrics: BTreeMap<String, Summary>,
    /// Metric name to `"mean ± std [min, max]"` in percent.
    pub table: BTreeMap<String, String>,
    pub progression: ProgressionScores,
    /// Pearson r of predicted and true time-3 volumes.
    pub volume_r: Option<f64>,
    /// Pearson r of predicted and true growth rates.
    pub growth_r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub seed: u64,
    pub config: serde_json::Value,
    pub patients: Vec<PatientResult>,
    pub model: MethodSummary,
    pub baseline: MethodSummary,
}

fn summarize(results: &[PatientResult], pick: impl Fn(&PatientResult) -> (&VolumeReport, f64)) -> Result<MethodSummary> {
    let reports: Vec<(&VolumeReport, f64)> = results.iter().map(&pick).collect();
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (r, _) in &reports {
        columns.entry("dice".into()).or_default().push(r.dice);
        columns.entry("rvd".into()).or_default().push(r.rvd);
        if let Some(v) = r.icvf_rmse {
            columns.entry("icvf_rmse".into()).or_default().push(v);
        }
        if let Some(v) = r.diff_hu {
            columns.entry("diff_hu".into()).or_default().push(v);
        }
    }
    let mut summaries = BTreeMap::new();
    let mut table = BTreeMap::new();
    for (k, v) in columns {
        if let Some(s) = Summary::of(&v) {
            table.insert(k.clone(), s.percent());
            summaries.insert(k, s);
        }
    }
    let predicted: Vec<f64> = reports.iter().map(|r| r.1).collect();
    let truth: Vec<f64> = results.iter().map(|r| r.true_growth).collect();
    let v_pred: Vec<f64> = reports.iter().map(|r| r.0.v_pred as f64).collect();
    let v_gt: Vec<f64> = reports.iter().map(|r| r.0.v_gt as f64).collect();
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(MethodSummary {
        metrics: summaries,
        table,
        progression: metrics::progression_scores(&predicted, &truth)?,
        volume_r: defined(metrics::pearson_r(&v_pred, &v_gt))?,
        growth_r: defined(metrics::pearson_r(&predicted, &truth))?,
    })
}

impl CohortReport {
    /// Sorts patients by id and computes both method summaries.
    pub fn new(seed: u64, config: serde_json::Value, mut patients: Vec<PatientResult>) -> Result<Self> {
        patients.sort_by_key(|p| p.patient_id);
        let model = summarize(&patients, |p| (&p.model, p.predicted_growth))?;
        let baseline = summarize(&patients, |p| (&p.baseline, p.baseline_growth))?;
        Ok(Self {
            seed,
            config,
            patients,
            model,
            baseline,
        })
    }

    pub fn mean_dice(&self) -> Option<f64> {
        self.model.metrics.get("dice").map(|s| s.mean)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, format::to_sorted_json(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub const CSV_HEADER: [&'static str; 16] = [
        "patient_id",
        "fold",
        "dice",
        "rvd",
        "icvf_rmse",
        "diff_hu",
        "tpv",
        "v_pred",
        "v_gt",
        "v_time2",
        "true_growth",
        "predicted_growth",
        "baseline_dice",
        "baseline_rvd",
        "baseline_v_pred",
        "baseline_growth",
    ];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .patients
            .iter()
            .map(|p| {
                vec![
                    p.patient_id.to_string(),
                    p.fold.to_string(),
                    p.model.dice.to_string(),
                    p.model.rvd.to_string(),
                    cell(p.model.icvf_rmse),
                    cell(p.model.diff_hu),
                    p.model.tpv.to_string(),
                    p.model.v_pred.to_string(),
                    p.model.v_gt.to_string(),
                    p.v_time2.to_string(),
                    p.true_growth.to_string(),
                    p.predicted_growth.to_string(),
                    p.baseline.dice.to_string(),
                    p.baseline.rvd.to_string(),
                    p.baseline.v_pred.to_string(),
                    p.baseline_growth.to_string(),
                ]
            })
            .collect();
        metrics::write_csv(path, &Self::CSV_HEADER, &rows)
    }
}
