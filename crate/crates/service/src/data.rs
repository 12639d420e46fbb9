//! On-disk layout of a data directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warntriage_core::corpus::{parse_records, CweDataset, WarningRecord};
use warntriage_core::embedder::EmbedderModel;
use warntriage_core::ensemble::{EnsembleHyper, Registry};
use warntriage_core::learners::{ForestHyper, GbtHyper, NetHyper};
use warntriage_core::write_atomic;

use crate::error::{Error, Result};

/// Best hyperparameters found by `tune`, per CWE and learner.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TunedCwe {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gbt: Option<GbtHyper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<ForestHyper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetHyper>,
}

pub type Tuned = BTreeMap<String, TunedCwe>;

/// `base` with any tuned members substituted.
pub fn hyper_for(tuned: &Tuned, cwe: &str, base: &EnsembleHyper) -> EnsembleHyper {
    let mut h = base.clone();
    if let Some(t) = tuned.get(cwe) {
        if let Some(g) = &t.gbt {
            h.gbt = g.clone();
        }
        if let Some(f) = &t.forest {
            h.forest = f.clone();
        }
        if let Some(n) = &t.net {
            h.net = n.clone();
        }
    }
    h
}

/// One line of the append-only model history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryLogEntry {
    pub cwe: String,
    pub version: u64,
    pub trigger: String,
    pub n_train: usize,
    pub unix_ms: u64,
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn datasets_path(&self) -> PathBuf {
        self.root.join("datasets.json")
    }
    pub fn open_path(&self) -> PathBuf {
        self.root.join("open.jsonl")
    }
    pub fn embedder_path(&self) -> PathBuf {
        self.root.join("embedder.json")
    }
    pub fn registry_path(&self) -> PathBuf {
        self.root.join("registry.json")
    }
    pub fn feedback_path(&self) -> PathBuf {
        self.root.join("feedback.jsonl")
    }
    pub fn tuned_path(&self) -> PathBuf {
        self.root.join("tuned.json")
    }
    pub fn registry_log_path(&self) -> PathBuf {
        self.root.join("registry_log.jsonl")
    }

    pub fn ensure(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }

    fn read(&self, path: PathBuf, step: &'static str) -> Result<String> {
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Missing { path, step }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn load_datasets(&self) -> Result<BTreeMap<String, CweDataset>> {
        let path = self.datasets_path();
        let text = self.read(path.clone(), "ingest")?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Core(warntriage_core::Error::Schema(format!("{}: {e}", path.display()))))
    }

    pub fn save_datasets(&self, datasets: &BTreeMap<String, CweDataset>) -> Result<()> {
        let mut text = serde_json::to_string(datasets).expect("datasets serialize");
        text.push('\n');
        Ok(write_atomic(&self.datasets_path(), text.as_bytes())?)
    }

    /// The open pool; empty when nothing has been ingested.
    pub fn load_open(&self) -> Result<Vec<WarningRecord>> {
        match self.read(self.open_path(), "ingest") {
            Ok(text) => Ok(parse_records(&text)?),
            Err(Error::Missing { .. }) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }

    pub fn load_embedder(&self) -> Result<EmbedderModel> {
        let text = self.read(self.embedder_path(), "pretrain-embedder")?;
        Ok(EmbedderModel::from_json(&text)?)
    }

    /// The saved registry, or an empty one before the first `train`.
    pub fn load_registry(&self) -> Result<Registry> {
        let path = self.registry_path();
        if !path.exists() {
            return Ok(Registry::default());
        }
        Ok(Registry::load(path)?)
    }

    pub fn load_existing_registry(&self) -> Result<Registry> {
        let path = self.registry_path();
        if !path.exists() {
            return Err(Error::Missing { path, step: "train" });
        }
        Ok(Registry::load(path)?)
    }

    pub fn load_tuned(&self) -> Result<Tuned> {
        match self.read(self.tuned_path(), "tune") {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::Core(warntriage_core::Error::Schema(format!("tuned.json: {e}")))),
            Err(Error::Missing { .. }) => Ok(Tuned::new()),
            Err(e) => Err(e),
        }
    }

    pub fn save_tuned(&self, tuned: &Tuned) -> Result<()> {
        let mut text = serde_json::to_string_pretty(tuned).expect("tuned serializes");
        text.push('\n');
        Ok(write_atomic(&self.tuned_path(), text.as_bytes())?)
    }

    pub fn append_registry_log(&self, entry: &RegistryLogEntry) -> Result<()> {
        let path = self.registry_log_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(entry).expect("log entry serializes") + "\n";
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }
}

pub fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
