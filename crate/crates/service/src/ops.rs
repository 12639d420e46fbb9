//! Operations behind the CLI subcommands. The HTTP service reuses the
//! retrain and scoring pieces.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use warntriage_core::corpus::{
    dataset_stats, ingest_warnings, parse_records, to_jsonl, write_synthetic_corpus, CountsRow,
    CweDataset, Split, SynthSpec, WarningRecord,
};
use warntriage_core::derive_seed;
use warntriage_core::embedder::{EmbedderModel, PretrainReport};
use warntriage_core::ensemble::{train_cwe_ensemble, EnsembleHyper, EnsembleModel, Registry};
use warntriage_core::evaluation::{
    forest_grid, gbt_grid, grid_search, joint_search, net_grid, summary_report, GridResult,
    JointResult, LearnerHyper, MetricsReport, Summary, TrainVal,
};
use warntriage_core::learners::LearnerKind;
use warntriage_core::linalg::Matrix;
use warntriage_core::pipeline::{
    band_predictions, embed_records, evaluate_dataset, predict_rows, pretrain_embedder,
    split_corpus, split_data, training_records, ScoredWarning, SplitData,
};
use warntriage_core::workflow::{
    should_retrain, BandThresholds, FeedbackEvent, FeedbackStore, RecordOutcome, RetrainPolicy,
    Verdict,
};
use warntriage_core::write_atomic;

use crate::config::Settings;
use crate::data::{hyper_for, unix_ms, DataDir, RegistryLogEntry, TunedCwe};
use crate::error::{Error, Result};

/// `all`, or a comma-separated list of CWE ids, resolved against `known`.
pub fn select_cwes<'a>(selector: &str, known: impl IntoIterator<Item = &'a String>) -> Result<Vec<String>> {
    let known: Vec<&String> = known.into_iter().collect();
    if selector == "all" {
        return Ok(known.into_iter().cloned().collect());
    }
    selector
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            known
                .iter()
                .find(|k| k.as_str() == c)
                .map(|k| k.to_string())
                .ok_or_else(|| warntriage_core::Error::UnknownCwe(c.to_string()).into())
        })
        .collect()
}

fn dataset<'a>(datasets: &'a BTreeMap<String, CweDataset>, cwe: &str) -> Result<&'a CweDataset> {
    datasets
        .get(cwe)
        .ok_or_else(|| warntriage_core::Error::UnknownCwe(cwe.to_string()).into())
}

pub fn generate(spec: &str, seed: u64, out: &Path) -> Result<usize> {
    Ok(write_synthetic_corpus(&SynthSpec::parse(spec)?, seed, out)?)
}

/// Splits the labeled records of `input` and stores them with the open pool.
pub fn ingest(settings: &Settings, input: &Path) -> Result<Vec<CountsRow>> {
    let corpus = ingest_warnings(input)?;
    let datasets = split_corpus(&corpus, settings.split_ratio, settings.seed)?;
    let dir = DataDir::new(&settings.data_dir);
    dir.ensure()?;
    dir.save_datasets(&datasets)?;
    write_atomic(&dir.open_path(), to_jsonl(&corpus.open).as_bytes())?;
    Ok(datasets.values().map(|d| dataset_stats(d, &corpus.open)).collect())
}

pub fn pretrain(settings: &Settings) -> Result<(EmbedderModel, PretrainReport)> {
    let dir = DataDir::new(&settings.data_dir);
    let datasets = dir.load_datasets()?;
    let records = training_records(&datasets);
    let (model, report) = pretrain_embedder(&records, &settings.pretrain, settings.seed)?;
    model.save(dir.embedder_path())?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub cwe: String,
    pub version: u64,
    /// False when the retrained model equals the live one.
    pub changed: bool,
    pub n_train: usize,
}

pub fn train(settings: &Settings, selector: &str) -> Result<Vec<TrainOutcome>> {
    let dir = DataDir::new(&settings.data_dir);
    let datasets = dir.load_datasets()?;
    let embedder = dir.load_embedder()?;
    let tuned = dir.load_tuned()?;
    let mut registry = dir.load_registry()?;
    let mut out = Vec::new();
    for cwe in select_cwes(selector, datasets.keys())? {
        let ds = dataset(&datasets, &cwe)?;
        let train = split_data(ds, Split::Train, &embedder);
        let hyper = hyper_for(&tuned, &cwe, &settings.hyper);
        let model = train_cwe_ensemble(&cwe, &train.x, &train.y, &hyper, settings.seed)?;
        let (version, changed) = registry.publish_if_changed(model);
        if changed {
            dir.append_registry_log(&RegistryLogEntry {
                cwe: cwe.clone(),
                version,
                trigger: "train".into(),
                n_train: train.y.len(),
                unix_ms: unix_ms(),
            })?;
        }
        out.push(TrainOutcome {
            cwe,
            version,
            changed,
            n_train: train.y.len(),
        });
    }
    registry.save(dir.registry_path())?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum TuneOutcome {
    Separate(Vec<GridResult>),
    Joint(Box<JointResult>),
}

fn embedded_train_val(ds: &CweDataset, embedder: &EmbedderModel) -> (SplitData, SplitData) {
    (split_data(ds, Split::Train, embedder), split_data(ds, Split::Val, embedder))
}

/// Grid-searches the selected learners of each CWE on its validation split
/// and records the winners in `tuned.json`.
pub fn tune(
    settings: &Settings,
    selector: &str,
    learner: Option<LearnerKind>,
) -> Result<Vec<(String, TuneOutcome)>> {
    let dir = DataDir::new(&settings.data_dir);
    let datasets = dir.load_datasets()?;
    let embedder = dir.load_embedder()?;
    let mut tuned = dir.load_tuned()?;
    let base = &settings.hyper;
    let mut out = Vec::new();
    for cwe in select_cwes(selector, datasets.keys())? {
        let (train, val) = embedded_train_val(dataset(&datasets, &cwe)?, &embedder);
        let data = TrainVal {
            x_train: &train.x,
            y_train: &train.y,
            x_val: &val.x,
            y_val: &val.y,
        };
        let entry = tuned.entry(cwe.clone()).or_default();
        let outcome = if settings.joint_tuning {
            let res = joint_search(&gbt_grid(&base.gbt), &forest_grid(&base.forest), &net_grid(&base.net), data, settings.seed)?;
            let (g, f, n, _) = res.table[res.best];
            for h in [&res.gbt[g], &res.forest[f], &res.net[n]] {
                record_best(entry, h);
            }
            TuneOutcome::Joint(Box::new(res))
        } else {
            let kinds: Vec<LearnerKind> = learner.map_or(LearnerKind::ALL.to_vec(), |k| vec![k]);
            let mut results = Vec::new();
            for kind in kinds {
                let grid = match kind {
                    LearnerKind::Gbt => gbt_grid(&base.gbt),
                    LearnerKind::Forest => forest_grid(&base.forest),
                    LearnerKind::Net => net_grid(&base.net),
                };
                let res = grid_search(&grid, data, settings.seed)?;
                record_best(entry, res.best_hyper());
                results.push(res);
            }
            TuneOutcome::Separate(results)
        };
        out.push((cwe, outcome));
    }
    dir.save_tuned(&tuned)?;
    Ok(out)
}

fn record_best(entry: &mut TunedCwe, hyper: &LearnerHyper) {
    match hyper {
        LearnerHyper::Gbt(h) => entry.gbt = Some(h.clone()),
        LearnerHyper::Forest(h) => entry.forest = Some(h.clone()),
        LearnerHyper::Net(h) => entry.net = Some(h.clone()),
    }
}

/// Validation metrics of the live models.
pub fn eval(settings: &Settings, selector: &str) -> Result<(Vec<MetricsReport>, Summary)> {
    let dir = DataDir::new(&settings.data_dir);
    let datasets = dir.load_datasets()?;
    let embedder = dir.load_embedder()?;
    let registry = dir.load_existing_registry()?;
    let mut reports = Vec::new();
    for cwe in select_cwes(selector, registry.models.keys())? {
        let model = registry.get(&cwe)?;
        reports.push(evaluate_dataset(model, dataset(&datasets, &cwe)?, &embedder)?);
    }
    let summary = summary_report(&reports)?;
    Ok((reports, summary))
}

/// Scores rows of `x` with `model` and bands them against each other.
pub fn score_rows(model: &EnsembleModel, ids: &[String], x: &Matrix) -> Result<(BandThresholds, Vec<ScoredWarning>)> {
    Ok(band_predictions(&model.cwe, predict_rows(model, ids, x)?))
}

pub fn score_records(
    model: &EnsembleModel,
    embedder: &EmbedderModel,
    records: &[&WarningRecord],
) -> Result<(BandThresholds, Vec<ScoredWarning>)> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    score_rows(model, &ids, &embed_records(embedder, records.iter().copied()))
}

/// Band cutoffs and the banded open pool of one CWE.
pub fn bands(settings: &Settings, cwe: &str) -> Result<(BandThresholds, Vec<ScoredWarning>)> {
    let dir = DataDir::new(&settings.data_dir);
    let registry = dir.load_existing_registry()?;
    let model = registry.get(cwe)?;
    let embedder = dir.load_embedder()?;
    let open = dir.load_open()?;
    let pool: Vec<&WarningRecord> = open.iter().filter(|r| r.cwe == cwe).collect();
    score_records(model, &embedder, &pool)
}

/// One scored input row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub warning_id: String,
    pub cwe: String,
    pub score: f64,
    pub band: warntriage_core::workflow::Band,
    pub final_label: u8,
    pub member_probs: [f64; 3],
    pub model_version: u64,
}

/// Scores every record of a JSONL file, banding each CWE's scores against
/// each other. Rows come back in input order.
pub fn score_file(settings: &Settings, input: &Path) -> Result<Vec<ScoreRow>> {
    let dir = DataDir::new(&settings.data_dir);
    let registry = dir.load_existing_registry()?;
    let embedder = dir.load_embedder()?;
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let records = parse_records(&text)?;
    let mut by_cwe: BTreeMap<&str, Vec<&WarningRecord>> = BTreeMap::new();
    for r in &records {
        by_cwe.entry(&r.cwe).or_default().push(r);
    }
    let mut scored: BTreeMap<String, ScoreRow> = BTreeMap::new();
    for (cwe, recs) in by_cwe {
        let model = registry.get(cwe)?;
        for s in score_records(model, &embedder, &recs)?.1 {
            let p = s.prediction;
            scored.insert(
                p.warning_id.clone(),
                ScoreRow {
                    warning_id: p.warning_id,
                    cwe: cwe.to_string(),
                    score: p.score,
                    band: s.band,
                    final_label: p.final_label,
                    member_probs: p.member_probs,
                    model_version: model.version,
                },
            );
        }
    }
    Ok(records
        .iter()
        .map(|r| scored.remove(&r.id).expect("every record was scored"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackReport {
    pub cwe: String,
    pub appended: bool,
    pub staged: usize,
    pub retrain_due: bool,
}

pub fn feedback(settings: &Settings, id: &str, verdict: &str, user: &str) -> Result<FeedbackReport> {
    let verdict = Verdict::parse(verdict)
        .ok_or_else(|| Error::BadRequest(format!("invalid verdict {verdict:?}; use true_positive or false_positive")))?;
    if user.trim().is_empty() {
        return Err(Error::BadRequest("user must not be empty".into()));
    }
    let dir = DataDir::new(&settings.data_dir);
    let open = dir.load_open()?;
    let registry = dir.load_registry()?;
    let cwe = open
        .iter()
        .find(|r| r.id == id)
        .map(|r| r.cwe.clone())
        .ok_or_else(|| warntriage_core::Error::UnknownWarning(id.to_string()))?;
    let version = registry.models.get(&cwe).map_or(0, |m| m.version);
    let mut store = FeedbackStore::open(dir.feedback_path())?;
    let outcome = store.record_feedback(
        &open,
        FeedbackEvent {
            warning_id: id.to_string(),
            cwe: cwe.clone(),
            verdict,
            user: user.to_string(),
            timestamp: unix_ms(),
            model_version_at_verdict: version,
        },
    )?;
    let policy = RetrainPolicy {
        min_new_labels: settings.retrain_threshold,
    };
    Ok(FeedbackReport {
        staged: store.staged(&cwe, version).len(),
        retrain_due: version > 0 && should_retrain(&store, &cwe, version, &policy),
        appended: outcome == RecordOutcome::Appended,
        cwe,
    })
}

/// Latest verdict on each warning of `cwe`, across users and model versions.
pub fn feedback_labels(store: &FeedbackStore, cwe: &str) -> BTreeMap<String, u8> {
    store
        .events()
        .iter()
        .filter(|e| e.cwe == cwe)
        .map(|e| (e.warning_id.clone(), e.verdict.label()))
        .collect()
}

/// Retrains `live` on its train split plus the labeled rows in `extra`.
/// The seed is derived from the live model, so a retrain is reproducible.
pub fn retrain_model(
    live: &EnsembleModel,
    train: &SplitData,
    extra: &[(&[f64], u8)],
    hyper: &EnsembleHyper,
) -> Result<EnsembleModel> {
    let mut rows: Vec<Vec<f64>> = (0..train.x.rows).map(|r| train.x.row(r).to_vec()).collect();
    let mut y = train.y.clone();
    for (x, label) in extra {
        rows.push(x.to_vec());
        y.push(*label);
    }
    let x = Matrix::from_rows(&rows);
    let seed = derive_seed(live.master_seed, live.version);
    Ok(train_cwe_ensemble(&live.cwe, &x, &y, hyper, seed)?)
}

/// `retrain --cwe C`: folds staged verdicts into the training rows and
/// publishes the result as the next version.
pub fn retrain(settings: &Settings, cwe: &str) -> Result<TrainOutcome> {
    let dir = DataDir::new(&settings.data_dir);
    let mut registry = dir.load_existing_registry()?;
    let live = registry.get(cwe)?.clone();
    let store = FeedbackStore::open(dir.feedback_path())?;
    if store.staged(cwe, live.version).is_empty() {
        return Err(Error::NothingStaged(cwe.to_string()));
    }
    let datasets = dir.load_datasets()?;
    let embedder = dir.load_embedder()?;
    let open = dir.load_open()?;
    let tuned = dir.load_tuned()?;
    let train = split_data(dataset(&datasets, cwe)?, Split::Train, &embedder);
    let labels = feedback_labels(&store, cwe);
    let labeled: Vec<&WarningRecord> = open.iter().filter(|r| labels.contains_key(&r.id)).collect();
    let x = embed_records(&embedder, labeled.iter().copied());
    let extra: Vec<(&[f64], u8)> = labeled
        .iter()
        .enumerate()
        .map(|(i, r)| (x.row(i), labels[&r.id]))
        .collect();
    let model = retrain_model(&live, &train, &extra, &hyper_for(&tuned, cwe, &settings.hyper))?;
    let n_train = train.y.len() + extra.len();
    let version = publish(&dir, &mut registry, model, "retrain", n_train)?;
    Ok(TrainOutcome {
        cwe: cwe.to_string(),
        version,
        changed: true,
        n_train,
    })
}

/// Publishes `model`, writes the registry and logs the new version.
pub fn publish(dir: &DataDir, registry: &mut Registry, model: EnsembleModel, trigger: &str, n_train: usize) -> Result<u64> {
    let cwe = model.cwe.clone();
    let version = registry.publish(model);
    registry.save(dir.registry_path())?;
    dir.append_registry_log(&RegistryLogEntry {
        cwe,
        version,
        trigger: trigger.into(),
        n_train,
        unix_ms: unix_ms(),
    })?;
    Ok(version)
}
