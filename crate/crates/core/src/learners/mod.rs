//! Binary classifiers over code vectors.
//!
//! Each trainer takes a row-major feature matrix and 0/1 labels. Trained
//! models are immutable and serialize into the ensemble registry.

mod forest;
mod gbt;
mod net;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use forest::{train_forest, ForestHyper, ForestModel};
pub use gbt::{
    find_best_split, gbt_leaf_weight, gbt_split_gain, train_gbt, GbtHyper, GbtModel, SplitCandidate,
};
pub use net::{
    net_loss_and_grad, train_net, Layer, NetHyper, NetModel, Optimizer, PlateauScheduler,
};
pub use tree::TreeNode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Gbt,
    Forest,
    Net,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [LearnerKind::Gbt, LearnerKind::Forest, LearnerKind::Net];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Gbt => "gbt",
            LearnerKind::Forest => "forest",
            LearnerKind::Net => "net",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A trained classifier of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerModel {
    Gbt(GbtModel),
    Forest(ForestModel),
    Net(NetModel),
}

impl LearnerModel {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerModel::Gbt(_) => LearnerKind::Gbt,
            LearnerModel::Forest(_) => LearnerKind::Forest,
            LearnerModel::Net(_) => LearnerKind::Net,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            LearnerModel::Gbt(m) => m.n_features,
            LearnerModel::Forest(m) => m.n_features,
            LearnerModel::Net(m) => m.n_features(),
        }
    }

    /// Probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let expected = self.n_features();
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: x.len(),
            });
        }
        Ok(match self {
            LearnerModel::Gbt(m) => m.predict_unchecked(x),
            LearnerModel::Forest(m) => m.predict_unchecked(x),
            LearnerModel::Net(m) => m.predict_unchecked(x),
        })
    }
}

/// Shared preconditions of every trainer.
fn check_training_data(x: &Matrix, y: &[u8]) -> Result<()> {
    if x.rows != y.len() {
        return Err(Error::LengthMismatch(format!(
            "{} rows but {} labels",
            x.rows,
            y.len()
        )));
    }
    if x.cols == 0 {
        return Err(Error::InvalidDims("feature matrix has no columns".into()));
    }
    if x.rows < 2 {
        return Err(Error::NoData);
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("label {bad} is not 0 or 1")));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels);
    }
    if !x.is_finite() {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    Ok(())
}
