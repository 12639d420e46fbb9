//! Per-CWE bagging ensemble of one boosted-tree model, one forest and one net.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{
    train_forest, train_gbt, train_net, ForestHyper, ForestModel, GbtHyper, GbtModel, LearnerKind,
    LearnerModel, NetHyper, NetModel,
};
use crate::linalg::Matrix;
use crate::{derive_seed, seeded_rng};

pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

/// `rows.len()` uniform draws with replacement.
pub fn bootstrap_sample<T: Clone>(rows: &[T], seed: u64) -> Vec<T> {
    let mut rng = seeded_rng(seed);
    (0..rows.len())
        .map(|_| rows[rng.random_range(0..rows.len())].clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleHyper {
    pub gbt: GbtHyper,
    pub forest: ForestHyper,
    pub net: NetHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Members {
    pub gbt: GbtModel,
    pub forest: ForestModel,
    pub net: NetModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub cwe: String,
    pub n_features: usize,
    pub master_seed: u64,
    /// Seeds of the gbt, forest and net resamples, in that order.
    pub bootstrap_seeds: [u64; 3],
    pub version: u64,
    /// Wall-clock training time; kept out of the registry file so that
    /// identical training runs produce identical bytes.
    #[serde(skip)]
    pub trained_at: Option<String>,
    pub members: Members,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub warning_id: String,
    /// Probabilities of the gbt, forest and net members.
    pub member_probs: [f64; 3],
    pub votes: [u8; 3],
    pub final_label: u8,
    pub score: f64,
}

/// Majority label over `p >= 0.5` votes and the mean probability.
pub fn vote(member_probs: [f64; 3]) -> (u8, f64) {
    let ayes = member_probs.iter().filter(|&&p| p >= 0.5).count();
    let score = member_probs.iter().sum::<f64>() / 3.0;
    ((ayes >= 2) as u8, score)
}

/// Trains the three members, each on its own resample of the given rows.
pub fn train_cwe_ensemble(
    cwe: &str,
    x: &Matrix,
    y: &[u8],
    hyper: &EnsembleHyper,
    master_seed: u64,
) -> Result<EnsembleModel> {
    if x.rows != y.len() {
        return Err(Error::LengthMismatch(format!("{} rows but {} labels", x.rows, y.len())));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels);
    }
    let seeds = [0, 1, 2].map(|k| derive_seed(master_seed, k));
    let all: Vec<usize> = (0..x.rows).collect();
    let resample = |k: usize| {
        let rows = bootstrap_sample(&all, seeds[k]);
        let labels: Vec<u8> = rows.iter().map(|&r| y[r]).collect();
        (x.select_rows(&rows), labels)
    };
    let (xg, yg) = resample(0);
    let gbt = train_gbt(&xg, &yg, &hyper.gbt)?;
    let (xf, yf) = resample(1);
    let forest = train_forest(&xf, &yf, &hyper.forest, derive_seed(seeds[1], 1))?;
    let (xn, yn) = resample(2);
    let net = train_net(&xn, &yn, &hyper.net, derive_seed(seeds[2], 1))?;
    Ok(EnsembleModel {
        cwe: cwe.to_string(),
        n_features: x.cols,
        master_seed,
        bootstrap_seeds: seeds,
        version: 1,
        trained_at: None,
        members: Members { gbt, forest, net },
    })
}

impl EnsembleModel {
    /// Members in vote order, as the generic learner type.
    pub fn learners(&self) -> [LearnerModel; 3] {
        [
            LearnerModel::Gbt(self.members.gbt.clone()),
            LearnerModel::Forest(self.members.forest.clone()),
            LearnerModel::Net(self.members.net.clone()),
        ]
    }

    pub fn member_probs(&self, x: &[f64]) -> Result<[f64; 3]> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok([
            self.members.gbt.predict_unchecked(x),
            self.members.forest.predict_unchecked(x),
            self.members.net.predict_unchecked(x),
        ])
    }

    pub fn predict(&self, warning_id: &str, x: &[f64]) -> Result<Prediction> {
        let member_probs = self.member_probs(x)?;
        let (final_label, score) = vote(member_probs);
        Ok(Prediction {
            warning_id: warning_id.to_string(),
            member_probs,
            votes: member_probs.map(|p| (p >= 0.5) as u8),
            final_label,
            score,
        })
    }

    pub fn predict_batch(&self, items: &[(String, Vec<f64>)]) -> Result<Vec<Prediction>> {
        items.iter().map(|(id, x)| self.predict(id, x)).collect()
    }

    pub fn member_kinds() -> [LearnerKind; 3] {
        LearnerKind::ALL
    }
}

/// All live ensembles keyed by CWE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub schema_version: u32,
    pub models: BTreeMap<String, EnsembleModel>,
}

impl Default for Registry {
    fn default() -> Self {
        Registry {
            schema_version: REGISTRY_SCHEMA_VERSION,
            models: BTreeMap::new(),
        }
    }
}

impl Registry {
    pub fn get(&self, cwe: &str) -> Result<&EnsembleModel> {
        self.models
            .get(cwe)
            .ok_or_else(|| Error::UnknownCwe(cwe.to_string()))
    }

    /// Inserts `model` with a version one above the one it replaces.
    pub fn publish(&mut self, mut model: EnsembleModel) -> u64 {
        model.version = self.models.get(&model.cwe).map_or(1, |m| m.version + 1);
        let version = model.version;
        self.models.insert(model.cwe.clone(), model);
        version
    }

    /// Like [`Registry::publish`], but keeps the live entry and its version
    /// when `model` is identical to it apart from the version.
    pub fn publish_if_changed(&mut self, mut model: EnsembleModel) -> (u64, bool) {
        if let Some(live) = self.models.get(&model.cwe) {
            model.version = live.version;
            if *live == model {
                return (live.version, false);
            }
        }
        (self.publish(model), true)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("registry serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        match value.get("schema_version") {
            Some(v) if v.as_u64() == Some(REGISTRY_SCHEMA_VERSION as u64) => {}
            found => {
                return Err(Error::SchemaVersion {
                    expected: REGISTRY_SCHEMA_VERSION,
                    found: found.map_or_else(|| "none".to_string(), |v| v.to_string()),
                })
            }
        }
        let registry: Registry =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        for (key, model) in &registry.models {
            if key != &model.cwe {
                return Err(Error::Schema(format!("model {} stored under {key}", model.cwe)));
            }
        }
        Ok(registry)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_examples() {
        let (label, score) = vote([0.9, 0.4, 0.6]);
        assert_eq!(label, 1);
        assert!((score - 0.633_333_333_3).abs() < 1e-9);
        assert_eq!(vote([0.1, 0.2, 0.3]).0, 0);
        assert!((vote([0.1, 0.2, 0.3]).1 - 0.2).abs() < 1e-12);
        assert_eq!(vote([0.5, 0.5, 0.5]).0, 1);
    }

    #[test]
    fn bootstrap_of_one_row() {
        assert_eq!(bootstrap_sample(&["a"], 4), vec!["a"]);
        assert_eq!(bootstrap_sample(&[1, 2, 3], 8), bootstrap_sample(&[1, 2, 3], 8));
    }

    #[test]
    fn schema_version_is_checked() {
        let err = Registry::from_json(r#"{"schema_version":7,"models":{}}"#).unwrap_err();
        assert_eq!(err.to_string(), "schema version mismatch: expected 1, found 7");
        assert!(matches!(Registry::from_json("{\"schema"), Err(Error::Schema(_))));
    }
}
