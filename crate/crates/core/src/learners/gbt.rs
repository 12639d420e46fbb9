//! Second-order gradient-boosted trees on logistic loss.

use serde::{Deserialize, Serialize};

use super::tree::{sort_by_feature, TreeNode};
use crate::error::{Error, Result};
use crate::linalg::{bce_with_logit, logit, sigmoid, Matrix};

/// Gains closer than this are treated as equal, so the earlier candidate in
/// (feature, threshold) order wins regardless of summation order.
pub(crate) const GAIN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtHyper {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub l2_lambda: f64,
    pub n_rounds: usize,
    pub eta: f64,
    pub base_score: f64,
}

impl Default for GbtHyper {
    fn default() -> Self {
        GbtHyper {
            max_depth: 3,
            min_child_weight: 1.0,
            l2_lambda: 0.1,
            n_rounds: 100,
            eta: 0.1,
            base_score: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub hyper: GbtHyper,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    /// Mean training logistic loss before the first round and after each one.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        logit(self.hyper.base_score) + self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}

/// Optimal leaf weight `-G / (H + lambda)`.
pub fn gbt_leaf_weight(g: f64, h: f64, l2_lambda: f64) -> Result<f64> {
    let denom = h + l2_lambda;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(-g / denom)
}

/// Loss reduction from splitting a node into the given children.
pub fn gbt_split_gain(gl: f64, hl: f64, gr: f64, hr: f64, l2_lambda: f64) -> f64 {
    let term = |g: f64, h: f64| g * g / (h + l2_lambda);
    0.5 * (term(gl, hl) + term(gr, hr) - term(gl + gr, hl + hr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exact greedy search over every feature and every midpoint between
/// consecutive distinct values. Candidates with negative gain or a child
/// hessian below `min_child_weight` are skipped.
pub fn find_best_split(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    min_child_weight: f64,
    l2_lambda: f64,
) -> Option<SplitCandidate> {
    let rows: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    let sorted: Vec<Vec<u32>> = (0..x.cols).map(|f| sort_by_feature(x, &rows, f)).collect();
    best_split_sorted(x, &sorted, grad, hess, min_child_weight, l2_lambda)
}

fn best_split_sorted(
    x: &Matrix,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    min_child_weight: f64,
    l2_lambda: f64,
) -> Option<SplitCandidate> {
    let rows = &sorted[0];
    let g_total: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r as usize]).sum();
    let mut best: Option<SplitCandidate> = None;
    for (f, order) in sorted.iter().enumerate() {
        let (mut gl, mut hl) = (0.0, 0.0);
        for k in 0..order.len().saturating_sub(1) {
            let r = order[k] as usize;
            gl += grad[r];
            hl += hess[r];
            let (lo, hi) = (x.get(r, f), x.get(order[k + 1] as usize, f));
            if lo >= hi {
                continue;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < min_child_weight || hr < min_child_weight {
                continue;
            }
            let gain = gbt_split_gain(gl, hl, gr, hr, l2_lambda);
            if gain < 0.0 {
                continue;
            }
            if best.is_none_or(|b| gain > b.gain + GAIN_TOLERANCE) {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: lo + (hi - lo) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

struct Grower<'a> {
    x: &'a Matrix,
    grad: &'a [f64],
    hess: &'a [f64],
    hyper: &'a GbtHyper,
    goes_left: Vec<bool>,
}

impl Grower<'_> {
    fn leaf(&self, rows: &[u32]) -> Result<TreeNode> {
        let g: f64 = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r as usize]).sum();
        let value = if h < self.hyper.min_child_weight {
            0.0
        } else {
            self.hyper.eta * gbt_leaf_weight(g, h, self.hyper.l2_lambda)?
        };
        Ok(TreeNode::Leaf { value })
    }

    /// `sorted[f]` holds this node's rows ordered by feature `f`.
    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> Result<TreeNode> {
        if depth >= self.hyper.max_depth {
            return self.leaf(&sorted[0]);
        }
        let Some(split) = best_split_sorted(
            self.x,
            &sorted,
            self.grad,
            self.hess,
            self.hyper.min_child_weight,
            self.hyper.l2_lambda,
        ) else {
            return self.leaf(&sorted[0]);
        };
        for &r in &sorted[0] {
            self.goes_left[r as usize] = self.x.get(r as usize, split.feature) < split.threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for order in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = order.into_iter().partition(|&r| self.goes_left[r as usize]);
            left.push(l);
            right.push(r);
        }
        Ok(TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(left, depth + 1)?),
            right: Box::new(self.grow(right, depth + 1)?),
        })
    }
}

fn mean_loss(raw: &[f64], y: &[u8]) -> f64 {
    raw.iter().zip(y).map(|(&z, &t)| bce_with_logit(z, t as f64)).sum::<f64>() / raw.len() as f64
}

pub fn train_gbt(x: &Matrix, y: &[u8], hyper: &GbtHyper) -> Result<GbtModel> {
    super::check_training_data(x, y)?;
    if !(hyper.base_score > 0.0 && hyper.base_score < 1.0) {
        return Err(Error::InvalidArgument("base_score must lie in (0, 1)".into()));
    }
    let n = x.rows;
    let all: Vec<u32> = (0..n as u32).collect();
    let presorted: Vec<Vec<u32>> = (0..x.cols).map(|f| sort_by_feature(x, &all, f)).collect();
    let mut raw = vec![logit(hyper.base_score); n];
    let mut train_loss = vec![mean_loss(&raw, y)];
    let mut trees = Vec::with_capacity(hyper.n_rounds);
    let (mut grad, mut hess) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..hyper.n_rounds {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = p - y[i] as f64;
            hess[i] = p * (1.0 - p);
        }
        let mut grower = Grower {
            x,
            grad: &grad,
            hess: &hess,
            hyper,
            goes_left: vec![false; n],
        };
        let tree = grower.grow(presorted.clone(), 0)?;
        for (i, z) in raw.iter_mut().enumerate() {
            *z += tree.eval(x.row(i));
        }
        train_loss.push(mean_loss(&raw, y));
        trees.push(tree);
    }
    Ok(GbtModel {
        hyper: hyper.clone(),
        n_features: x.cols,
        trees,
        train_loss,
    })
}
