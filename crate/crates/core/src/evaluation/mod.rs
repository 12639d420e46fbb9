//! Classification metrics, per-CWE reports and hyperparameter search.

mod grid;

pub use grid::{
    forest_grid, gbt_grid, grid_search, joint_search, net_grid, train_learner, GridResult, GridRow,
    JointResult, LearnerHyper, TrainVal,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics in percent, plus the confusion counts they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cwe: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the labels contain a single class.
    pub auroc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Threshold metrics from confusion counts; zero denominators give 0.
    pub fn from_confusion(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricsReport {
            cwe: String::new(),
            accuracy: 100.0 * ratio(tp + tn, tp + fp + tn + fn_),
            precision: 100.0 * precision,
            recall: 100.0 * recall,
            f1: 100.0 * f1,
            auroc: None,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn with_cwe(mut self, cwe: impl Into<String>) -> Self {
        self.cwe = cwe.into();
        self
    }
}

/// Metrics with label 1 as the positive class. `scores` feed the AUROC.
pub fn compute_metrics(labels: &[u8], predicted: &[u8], scores: &[f64]) -> Result<MetricsReport> {
    if labels.len() != predicted.len() || labels.len() != scores.len() {
        return Err(Error::LengthMismatch(format!(
            "{} labels, {} predictions, {} scores",
            labels.len(),
            predicted.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::NoData);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&t, &p) in labels.iter().zip(predicted) {
        match (t == 1, p == 1) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let mut report = MetricsReport::from_confusion(tp, fp, tn, fn_);
    report.auroc = auroc(labels, scores).ok().map(|a| 100.0 * a);
    Ok(report)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney statistic over mid-ranks).
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch(format!(
            "{} labels, {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Unweighted column means over per-CWE reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_cwes: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean over the reports that have an AUROC.
    pub auroc: Option<f64>,
}

pub fn summary_report(reports: &[MetricsReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::NoData);
    }
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let aurocs: Vec<f64> = reports.iter().filter_map(|r| r.auroc).collect();
    Ok(Summary {
        n_cwes: reports.len(),
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        auroc: (!aurocs.is_empty()).then(|| aurocs.iter().sum::<f64>() / aurocs.len() as f64),
    })
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.decimals$}"))
}

/// Aligned plain-text table: one row per CWE (2 decimals) and a mean row
/// (3 decimals).
pub fn render_text(reports: &[MetricsReport], summary: &Summary) -> String {
    let mut out = format!(
        "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "CWE", "Precision", "Recall", "F1", "Accuracy", "AUROC"
    );
    for r in reports {
        out += &format!(
            "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
            r.cwe,
            r.precision,
            r.recall,
            r.f1,
            r.accuracy,
            cell(r.auroc, 2)
        );
    }
    out += &format!(
        "{:<10} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9}\n",
        "mean",
        summary.precision,
        summary.recall,
        summary.f1,
        summary.accuracy,
        cell(summary.auroc, 3)
    );
    out
}

/// The same numbers as [`render_text`], as JSON.
pub fn render_json(reports: &[MetricsReport], summary: &Summary) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "reports": reports,
        "summary": summary,
    }))
    .expect("reports serialize")
}
