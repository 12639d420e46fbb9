//! Random forest of Gini-split trees on bootstrap resamples.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{sort_by_feature, TreeNode};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::{derive_seed, seeded_rng, Rng};

/// Impurity decreases at or below this are not worth a split.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHyper {
    pub min_samples_split: usize,
    pub max_depth: usize,
    pub n_estimators: usize,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            min_samples_split: 2,
            max_depth: 10,
            n_estimators: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub hyper: ForestHyper,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

impl ForestModel {
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        self.trees.iter().map(|t| t.eval(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    hyper: &'a ForestHyper,
    n_try: usize,
    rng: Rng,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> TreeNode {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r as usize] == 1).count();
        let leaf = TreeNode::Leaf {
            value: pos as f64 / n as f64,
        };
        if depth >= self.hyper.max_depth || n < self.hyper.min_samples_split || pos == 0 || pos == n {
            return leaf;
        }
        let parent = gini(pos as f64, n as f64);
        let mut features = index::sample(&mut self.rng, self.x.cols, self.n_try).into_vec();
        features.sort_unstable();

        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let order = sort_by_feature(self.x, &rows, f);
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                let r = order[k] as usize;
                left_pos += self.y[r] as usize;
                let (lo, hi) = (self.x.get(r, f), self.x.get(order[k + 1] as usize, f));
                if lo >= hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let child = (nl * gini(left_pos as f64, nl)
                    + nr * gini((pos - left_pos) as f64, nr))
                    / n as f64;
                let decrease = parent - child;
                if decrease > MIN_DECREASE && best.is_none_or(|b| decrease > b.0 + MIN_DECREASE) {
                    best = Some((decrease, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return leaf;
        };
        let (left, right): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| self.x.get(r as usize, feature) < threshold);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
        }
    }
}

pub fn train_forest(x: &Matrix, y: &[u8], hyper: &ForestHyper, seed: u64) -> Result<ForestModel> {
    super::check_training_data(x, y)?;
    let n = x.rows;
    let n_try = (x.cols as f64).sqrt().ceil() as usize;
    let trees = (0..hyper.n_estimators)
        .map(|t| {
            let mut rng = seeded_rng(derive_seed(seed, t as u64));
            let rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
            Builder {
                x,
                y,
                hyper,
                n_try: n_try.clamp(1, x.cols),
                rng,
            }
            .grow(rows, 0)
        })
        .collect();
    Ok(ForestModel {
        hyper: hyper.clone(),
        seed,
        n_features: x.cols,
        trees,
    })
}
