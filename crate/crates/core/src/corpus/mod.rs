//! Warning records, per-CWE datasets and the synthetic corpus generator.

mod synth;

pub use synth::{generate_synthetic_corpus, write_synthetic_corpus, SynthCounts, SynthSpec, TEMPLATES};

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Where a record came from; the label follows from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Reported by the tool and fixed by a developer: a true warning.
    ReportedFixed,
    /// Dismissed by a developer as a false alarm.
    Dismissed,
    /// The post-fix version of a reported function, used as a negative.
    SyntheticFixed,
    /// Not yet acted upon; unlabeled.
    Open,
}

impl Origin {
    pub const ALL: [Origin; 4] = [
        Origin::ReportedFixed,
        Origin::Dismissed,
        Origin::SyntheticFixed,
        Origin::Open,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::ReportedFixed => "reported_fixed",
            Origin::Dismissed => "dismissed",
            Origin::SyntheticFixed => "synthetic_fixed",
            Origin::Open => "open",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        Origin::ALL.into_iter().find(|o| o.as_str() == s)
    }

    pub fn label(self) -> Option<u8> {
        match self {
            Origin::ReportedFixed => Some(1),
            Origin::Dismissed | Origin::SyntheticFixed => Some(0),
            Origin::Open => None,
        }
    }
}

/// One function-level snippet carrying a static-analysis warning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningRecord {
    pub id: String,
    pub cwe: String,
    pub source: String,
    pub file_path: String,
    pub line: usize,
    pub checker: String,
    pub origin: Origin,
}

impl WarningRecord {
    /// 1 for a true warning, 0 for a false alarm, `None` while open.
    pub fn label(&self) -> Option<u8> {
        self.origin.label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// Labeled records of a single CWE plus their train/validation assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CweDataset {
    pub cwe: String,
    pub records: Vec<WarningRecord>,
    #[serde(default)]
    pub split: BTreeMap<String, Split>,
}

impl CweDataset {
    pub fn new(cwe: impl Into<String>) -> Self {
        CweDataset {
            cwe: cwe.into(),
            records: Vec::new(),
            split: BTreeMap::new(),
        }
    }

    pub fn records_in(&self, which: Split) -> impl Iterator<Item = &WarningRecord> {
        self.records
            .iter()
            .filter(move |r| self.split.get(&r.id) == Some(&which))
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self.records.iter().filter(|r| r.label() == Some(1)).count();
        (pos, self.records.len() - pos)
    }
}

/// Everything read from a corpus file: labeled datasets keyed by CWE and the
/// pool of open warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub datasets: BTreeMap<String, CweDataset>,
    pub open: Vec<WarningRecord>,
}

impl Corpus {
    pub fn open_for<'a>(&'a self, cwe: &'a str) -> impl Iterator<Item = &'a WarningRecord> + 'a {
        self.open.iter().filter(move |r| r.cwe == cwe)
    }
}

const REQUIRED_STRINGS: [&str; 6] = ["id", "cwe", "source", "file_path", "checker", "origin"];

fn parse_record(line_no: usize, text: &str) -> Result<WarningRecord> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::record(line_no, format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::record(line_no, "expected a JSON object"))?;
    for key in REQUIRED_STRINGS {
        match obj.get(key) {
            None => return Err(Error::record(line_no, format!("missing field {key}"))),
            Some(v) if !v.is_string() => {
                return Err(Error::record(line_no, format!("field {key} must be a string")))
            }
            _ => {}
        }
    }
    let line = match obj.get("line") {
        None => return Err(Error::record(line_no, "missing field line")),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::record(line_no, "field line must be a positive integer"))?,
    };
    let origin_str = obj["origin"].as_str().unwrap_or_default();
    let origin = Origin::parse(origin_str)
        .ok_or_else(|| Error::record(line_no, format!("unknown origin \"{origin_str}\"")))?;
    let get = |k: &str| obj[k].as_str().unwrap_or_default().to_string();
    let record = WarningRecord {
        id: get("id"),
        cwe: get("cwe"),
        source: get("source"),
        file_path: get("file_path"),
        line: line as usize,
        checker: get("checker"),
        origin,
    };
    let n_lines = record.source.lines().count();
    if record.line == 0 || record.line > n_lines {
        return Err(Error::record(
            line_no,
            format!("warning line {} outside source of {n_lines} lines", record.line),
        ));
    }
    Ok(record)
}

/// Validated records of JSONL text in input order. Blank lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<WarningRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record = parse_record(line_no, raw)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::record(line_no, format!("duplicate id \"{}\"", record.id)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Parses JSONL corpus text, grouping labeled records by CWE.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for record in parse_records(text)? {
        if record.origin == Origin::Open {
            corpus.open.push(record);
        } else {
            corpus
                .datasets
                .entry(record.cwe.clone())
                .or_insert_with(|| CweDataset::new(record.cwe.clone()))
                .records
                .push(record);
        }
    }
    Ok(corpus)
}

/// Reads a JSONL corpus file and groups its records by CWE.
pub fn ingest_warnings(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Serializes records as JSONL in the corpus exchange schema.
pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a WarningRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// One row of per-CWE dataset accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsRow {
    pub cwe: String,
    pub n_true: usize,
    pub n_fixed: usize,
    pub n_fake: usize,
    pub total: usize,
    /// Size of the open (unlabeled) pool for this CWE; not part of `total`.
    pub n_open: usize,
}

pub fn dataset_stats(dataset: &CweDataset, open: &[WarningRecord]) -> CountsRow {
    let count = |o: Origin| dataset.records.iter().filter(|r| r.origin == o).count();
    let n_true = count(Origin::ReportedFixed);
    let n_fixed = count(Origin::SyntheticFixed);
    let n_fake = count(Origin::Dismissed);
    CountsRow {
        cwe: dataset.cwe.clone(),
        n_true,
        n_fixed,
        n_fake,
        total: n_true + n_fixed + n_fake,
        n_open: open
            .iter()
            .filter(|r| r.cwe == dataset.cwe && r.origin == Origin::Open)
            .count(),
    }
}

/// Per-class train counts: proportional shares by largest remainder, then
/// nudged so every class with two or more records keeps one on each side.
fn class_train_counts(sizes: [usize; 2], ratio: f64) -> [usize; 2] {
    let n: usize = sizes.iter().sum();
    let target = (ratio * n as f64).round() as usize;
    let exact = sizes.map(|s| ratio * s as f64);
    let mut take = exact.map(|e| e.floor() as usize);
    let mut remaining = target.saturating_sub(take.iter().sum());
    // Larger fractional part first, positives first on ties.
    let mut order = [1usize, 0];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(b.cmp(&a))
    });
    for &c in &order {
        if remaining > 0 && take[c] < sizes[c] {
            take[c] += 1;
            remaining -= 1;
        }
    }
    let bounds = sizes.map(|s| match s {
        0 => (0, 0),
        1 => (1, 1),
        s => (1, s - 1),
    });
    for c in 0..2 {
        let other = 1 - c;
        while take[c] < bounds[c].0 {
            take[c] += 1;
            if take[other] > bounds[other].0 {
                take[other] -= 1;
            }
        }
        while take[c] > bounds[c].1 {
            take[c] -= 1;
            if take[other] < bounds[other].1 {
                take[other] += 1;
            }
        }
    }
    take
}

/// Stratified train/validation split. Deterministic for a fixed seed.
pub fn stratified_split(dataset: &CweDataset, ratio: f64, seed: u64) -> Result<CweDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} not in (0, 1)")));
    }
    if dataset.records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} has {} records; at least 2 are needed to split",
            dataset.cwe,
            dataset.records.len()
        )));
    }
    if let Some(r) = dataset.records.iter().find(|r| r.cwe != dataset.cwe) {
        return Err(Error::InvalidArgument(format!(
            "record {} has cwe {} in dataset {}",
            r.id, r.cwe, dataset.cwe
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for r in &dataset.records {
        let label = r
            .label()
            .ok_or_else(|| Error::InvalidArgument(format!("record {} is unlabeled", r.id)))?;
        by_class[label as usize].push(&r.id);
    }
    let take = class_train_counts([by_class[0].len(), by_class[1].len()], ratio);
    let mut split = BTreeMap::new();
    for (label, ids) in by_class.iter_mut().enumerate() {
        if ids.len() == 1 {
            log::warn!(
                "{}: label {label} has a single record; assigning it to train",
                dataset.cwe
            );
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            let side = if i < take[label] { Split::Train } else { Split::Val };
            split.insert(id.to_string(), side);
        }
    }
    Ok(CweDataset {
        cwe: dataset.cwe.clone(),
        records: dataset.records.clone(),
        split,
    })
}
