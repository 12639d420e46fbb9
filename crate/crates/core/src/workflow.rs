//! Priority bands over ensemble scores and the developer feedback loop.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::WarningRecord;
use crate::ensemble::Prediction;
use crate::error::{Error, Result};

/// One-sided standard normal quantiles at 0.95 and 0.66.
pub const Z_HIGH: f64 = 1.644_853_626_951_472_2;
pub const Z_MED: f64 = 0.412_463_129_441_404_95;
/// Absolute probability cutoffs used when a normal fit is not meaningful.
pub const FALLBACK_HIGH: f64 = 0.95;
pub const FALLBACK_MED: f64 = 0.66;
/// Fewer open scores than this fall back to the absolute cutoffs.
pub const MIN_FIT_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandThresholds {
    pub cwe: String,
    pub n: usize,
    pub mu: f64,
    pub sigma: f64,
    pub z_high: f64,
    pub z_med: f64,
    pub t_high: f64,
    pub t_med: f64,
    /// True when `t_high`/`t_med` are the absolute fallback cutoffs.
    pub fallback: bool,
}

impl BandThresholds {
    /// Thresholds at `mu + z * sigma` without the fallback rules.
    pub fn from_normal(cwe: &str, mu: f64, sigma: f64) -> Self {
        BandThresholds {
            cwe: cwe.to_string(),
            n: 0,
            mu,
            sigma,
            z_high: Z_HIGH,
            z_med: Z_MED,
            t_high: mu + Z_HIGH * sigma,
            t_med: mu + Z_MED * sigma,
            fallback: false,
        }
    }
}

/// Fits a normal to `scores` (sample standard deviation) and places the
/// band cutoffs at its 95% and 66% quantiles.
pub fn fit_bands(cwe: &str, scores: &[f64]) -> BandThresholds {
    let n = scores.len();
    let mu = if n == 0 {
        0.0
    } else {
        scores.iter().sum::<f64>() / n as f64
    };
    let sigma = if n < 2 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let mut t = BandThresholds::from_normal(cwe, mu, sigma);
    t.n = n;
    if n < MIN_FIT_SAMPLES || sigma < 1e-9 || !sigma.is_finite() {
        t.t_high = FALLBACK_HIGH;
        t.t_med = FALLBACK_MED;
        t.fallback = true;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    Medium,
    High,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::High, Band::Medium, Band::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::Medium => "medium",
            Band::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Band> {
        Band::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

pub fn assign_band(t: &BandThresholds, score: f64) -> Band {
    if score >= t.t_high {
        Band::High
    } else if score >= t.t_med {
        Band::Medium
    } else {
        Band::Low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TruePositive,
    FalsePositive,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Verdict> {
        match s {
            "true_positive" => Some(Verdict::TruePositive),
            "false_positive" => Some(Verdict::FalsePositive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::TruePositive => "true_positive",
            Verdict::FalsePositive => "false_positive",
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Verdict::TruePositive => 1,
            Verdict::FalsePositive => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub warning_id: String,
    pub cwe: String,
    pub verdict: Verdict,
    pub user: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub model_version_at_verdict: u64,
}

/// An open warning turned into a labeled example by developer verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedLabel {
    pub warning_id: String,
    pub cwe: String,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Appended,
    /// Same verdict as the user's current one for this warning; not logged.
    Unchanged,
}

/// Append-only verdict log. Staged labels are derived from the log on
/// demand, so replaying the file reproduces them exactly.
#[derive(Debug, Default)]
pub struct FeedbackStore {
    path: Option<PathBuf>,
    events: Vec<FeedbackEvent>,
}

impl FeedbackStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Replays the log at `path`; a missing file is an empty log.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let events = match fs::read_to_string(&path) {
            Ok(text) => parse_events(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(FeedbackStore {
            path: Some(path),
            events,
        })
    }

    pub fn events(&self) -> &[FeedbackEvent] {
        &self.events
    }

    /// Logs `event` for a warning in `open_pool`. The event's CWE is taken
    /// from the pool record.
    pub fn record_feedback(
        &mut self,
        open_pool: &[WarningRecord],
        mut event: FeedbackEvent,
    ) -> Result<RecordOutcome> {
        let record = open_pool
            .iter()
            .find(|r| r.id == event.warning_id)
            .ok_or_else(|| Error::UnknownWarning(event.warning_id.clone()))?;
        event.cwe = record.cwe.clone();
        let current = self
            .events
            .iter()
            .rev()
            .find(|e| e.warning_id == event.warning_id && e.user == event.user);
        if current.is_some_and(|c| {
            c.verdict == event.verdict && c.model_version_at_verdict == event.model_version_at_verdict
        }) {
            return Ok(RecordOutcome::Unchanged);
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            f.sync_data().map_err(|e| Error::io(path, e))?;
        }
        self.events.push(event);
        Ok(RecordOutcome::Appended)
    }

    /// Labels staged for `cwe` against model `live_version`, one per
    /// warning, sorted by warning id. Only each user's latest verdict
    /// counts, and the most recent of those decides the label.
    pub fn staged(&self, cwe: &str, live_version: u64) -> Vec<StagedLabel> {
        let mut latest: HashMap<(&str, &str), usize> = HashMap::new();
        for (i, e) in self.events.iter().enumerate() {
            latest.insert((&e.warning_id, &e.user), i);
        }
        let mut per_warning: BTreeMap<&str, usize> = BTreeMap::new();
        for (&(warning, _), &i) in &latest {
            let e = &self.events[i];
            if e.cwe == cwe && e.model_version_at_verdict == live_version {
                let slot = per_warning.entry(warning).or_insert(i);
                *slot = (*slot).max(i);
            }
        }
        per_warning
            .into_iter()
            .map(|(warning, i)| StagedLabel {
                warning_id: warning.to_string(),
                cwe: cwe.to_string(),
                label: self.events[i].verdict.label(),
            })
            .collect()
    }

    /// Latest verdict on each warning across all users.
    pub fn latest_verdicts(&self) -> HashMap<&str, Verdict> {
        self.events
            .iter()
            .map(|e| (e.warning_id.as_str(), e.verdict))
            .collect()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

fn parse_events(text: &str) -> Result<Vec<FeedbackEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::record(i + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainPolicy {
    pub min_new_labels: usize,
}

impl Default for RetrainPolicy {
    fn default() -> Self {
        RetrainPolicy { min_new_labels: 50 }
    }
}

pub fn should_retrain(store: &FeedbackStore, cwe: &str, live_version: u64, policy: &RetrainPolicy) -> bool {
    store.staged(cwe, live_version).len() >= policy.min_new_labels
}

/// Warnings a developer dismissed although the ensemble calls them true
/// and ranks them in the high band.
pub fn highlight_disagreements(items: &[(Prediction, Band)], store: &FeedbackStore) -> Vec<String> {
    let verdicts = store.latest_verdicts();
    items
        .iter()
        .filter(|(p, band)| {
            verdicts.get(p.warning_id.as_str()) == Some(&Verdict::FalsePositive)
                && p.final_label == 1
                && *band == Band::High
        })
        .map(|(p, _)| p.warning_id.clone())
        .collect()
}
