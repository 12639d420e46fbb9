//! Exhaustive grid search, one learner at a time or over member triples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compute_metrics;
use crate::ensemble::vote;
use crate::error::{Error, Result};
use crate::learners::{
    train_forest, train_gbt, train_net, ForestHyper, GbtHyper, LearnerKind, LearnerModel,
    NetHyper, Optimizer,
};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerHyper {
    Gbt(GbtHyper),
    Forest(ForestHyper),
    Net(NetHyper),
}

impl LearnerHyper {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerHyper::Gbt(_) => LearnerKind::Gbt,
            LearnerHyper::Forest(_) => LearnerKind::Forest,
            LearnerHyper::Net(_) => LearnerKind::Net,
        }
    }
}

pub fn train_learner(hyper: &LearnerHyper, x: &Matrix, y: &[u8], seed: u64) -> Result<LearnerModel> {
    Ok(match hyper {
        LearnerHyper::Gbt(h) => LearnerModel::Gbt(train_gbt(x, y, h)?),
        LearnerHyper::Forest(h) => LearnerModel::Forest(train_forest(x, y, h, seed)?),
        LearnerHyper::Net(h) => LearnerModel::Net(train_net(x, y, h, seed)?),
    })
}

/// Depth, then minimum child weight, then L2 penalty; other fields from `base`.
pub fn gbt_grid(base: &GbtHyper) -> Vec<LearnerHyper> {
    let mut out = Vec::new();
    for max_depth in [3, 5, 7, 9] {
        for min_child_weight in [1.0, 3.0, 5.0] {
            for l2_lambda in [0.1, 0.2, 0.3, 0.4, 0.5] {
                out.push(LearnerHyper::Gbt(GbtHyper {
                    max_depth,
                    min_child_weight,
                    l2_lambda,
                    ..base.clone()
                }));
            }
        }
    }
    out
}

/// Decay factor, optimizer, hidden layers, units.
pub fn net_grid(base: &NetHyper) -> Vec<LearnerHyper> {
    let mut out = Vec::new();
    for lr_decay_factor in [0.95, 0.5, 0.1] {
        for optimizer in [Optimizer::Adam, Optimizer::Sgd, Optimizer::AdaDelta] {
            for n_hidden in [2, 3, 4, 5] {
                for units in [128, 256, 512] {
                    out.push(LearnerHyper::Net(NetHyper {
                        lr_decay_factor,
                        optimizer,
                        n_hidden,
                        units,
                        ..base.clone()
                    }));
                }
            }
        }
    }
    out
}

/// Minimum samples to split, depth, number of trees.
pub fn forest_grid(_base: &ForestHyper) -> Vec<LearnerHyper> {
    let mut out = Vec::new();
    for min_samples_split in [2, 4, 6] {
        for max_depth in [5, 10, 15] {
            for n_estimators in [10, 100, 500] {
                out.push(LearnerHyper::Forest(ForestHyper {
                    min_samples_split,
                    max_depth,
                    n_estimators,
                }));
            }
        }
    }
    out
}

/// Training rows and the held-out validation rows.
#[derive(Debug, Clone, Copy)]
pub struct TrainVal<'a> {
    pub x_train: &'a Matrix,
    pub y_train: &'a [u8],
    pub x_val: &'a Matrix,
    pub y_val: &'a [u8],
}

impl TrainVal<'_> {
    fn check(&self) -> Result<()> {
        let pos = self.y_val.iter().filter(|&&v| v == 1).count();
        if pos == 0 || pos == self.y_val.len() {
            return Err(Error::DegenerateLabels);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hyper: LearnerHyper,
    /// Validation F1 in percent; -1 when training failed.
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub kind: LearnerKind,
    pub table: Vec<GridRow>,
    /// Index into `table` of the first row with the highest F1.
    pub best: usize,
}

impl GridResult {
    pub fn best_hyper(&self) -> &LearnerHyper {
        &self.table[self.best].hyper
    }
}

fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if v >= 0.0 && best.is_none_or(|b| v > b.1) {
            best = Some((i, v));
        }
    }
    best
}

fn val_probs(model: &LearnerModel, x: &Matrix) -> Result<Vec<f64>> {
    (0..x.rows).map(|r| model.predict_proba(x.row(r))).collect()
}

fn f1_of(labels: &[u8], probs: &[f64]) -> Result<f64> {
    let predicted: Vec<u8> = probs.iter().map(|&p| (p >= 0.5) as u8).collect();
    Ok(compute_metrics(labels, &predicted, probs)?.f1)
}

/// Trains every combination with the same seed and keeps the one with the
/// best validation F1; ties go to the earlier combination.
pub fn grid_search(grid: &[LearnerHyper], data: TrainVal<'_>, seed: u64) -> Result<GridResult> {
    let kind = grid.first().ok_or(Error::GridExhausted)?.kind();
    if grid.iter().any(|h| h.kind() != kind) {
        return Err(Error::InvalidArgument("grid mixes learner kinds".into()));
    }
    data.check()?;
    let table: Vec<GridRow> = grid
        .par_iter()
        .map(|hyper| {
            let f1 = train_learner(hyper, data.x_train, data.y_train, seed)
                .and_then(|m| f1_of(data.y_val, &val_probs(&m, data.x_val)?))
                .unwrap_or_else(|e| {
                    log::warn!("{kind} combination failed: {e}");
                    -1.0
                });
            GridRow {
                hyper: hyper.clone(),
                f1,
            }
        })
        .collect();
    let (best, _) = first_argmax(table.iter().map(|r| r.f1)).ok_or(Error::GridExhausted)?;
    Ok(GridResult { kind, table, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointResult {
    /// (gbt index, forest index, net index, ensemble F1), gbt-major order.
    pub table: Vec<(usize, usize, usize, f64)>,
    pub best: usize,
    pub gbt: Vec<LearnerHyper>,
    pub forest: Vec<LearnerHyper>,
    pub net: Vec<LearnerHyper>,
}

/// Scores every (gbt, forest, net) triple by the F1 of its majority vote.
/// Each member combination is trained once and its validation
/// probabilities reused across triples, so this is practical only for
/// small grids.
pub fn joint_search(
    gbt: &[LearnerHyper],
    forest: &[LearnerHyper],
    net: &[LearnerHyper],
    data: TrainVal<'_>,
    seed: u64,
) -> Result<JointResult> {
    data.check()?;
    let probs = |grid: &[LearnerHyper]| -> Vec<Option<Vec<f64>>> {
        grid.par_iter()
            .map(|h| {
                train_learner(h, data.x_train, data.y_train, seed)
                    .and_then(|m| val_probs(&m, data.x_val))
                    .ok()
            })
            .collect()
    };
    let (pg, pf, pn) = (probs(gbt), probs(forest), probs(net));
    let mut table = Vec::with_capacity(gbt.len() * forest.len() * net.len());
    for (i, g) in pg.iter().enumerate() {
        for (j, f) in pf.iter().enumerate() {
            for (k, n) in pn.iter().enumerate() {
                let f1 = match (g, f, n) {
                    (Some(g), Some(f), Some(n)) => {
                        let (labels, scores): (Vec<u8>, Vec<f64>) =
                            (0..g.len()).map(|r| vote([g[r], f[r], n[r]])).unzip();
                        compute_metrics(data.y_val, &labels, &scores)?.f1
                    }
                    _ => -1.0,
                };
                table.push((i, j, k, f1));
            }
        }
    }
    let (best, _) = first_argmax(table.iter().map(|r| r.3)).ok_or(Error::GridExhausted)?;
    Ok(JointResult {
        table,
        best,
        gbt: gbt.to_vec(),
        forest: forest.to_vec(),
        net: net.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(gbt_grid(&GbtHyper::default()).len(), 60);
        assert_eq!(net_grid(&NetHyper::default()).len(), 108);
        assert_eq!(forest_grid(&ForestHyper::default()).len(), 27);
    }

    #[test]
    fn argmax_prefers_earlier_and_skips_failures() {
        assert_eq!(first_argmax([-1.0, 3.0, 5.0, 5.0]), Some((2, 5.0)));
        assert_eq!(first_argmax([-1.0, -1.0]), None);
    }
}
