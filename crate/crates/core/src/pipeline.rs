//! End-to-end steps shared by the CLI, the HTTP service and the bindings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_split, Corpus, CweDataset, Split, WarningRecord};
use crate::embedder::{encode_bag, init_params, pretrain, Dims, EmbedderModel, PretrainReport};
use crate::ensemble::{train_cwe_ensemble, EnsembleHyper, EnsembleModel, Prediction};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, MetricsReport};
use crate::frontend::{build_vocab, extract_path_contexts, parse_function, ContextBag, ExtractConfig};
use crate::linalg::Matrix;
use crate::workflow::{assign_band, fit_bands, Band, BandThresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dims: Dims,
    pub extract: ExtractConfig,
    pub min_count: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dims: Dims::default(),
            extract: ExtractConfig::default(),
            min_count: 1,
            epochs: 30,
            learning_rate: 0.01,
        }
    }
}

/// Splits every labeled dataset of `corpus` with the same ratio and seed.
pub fn split_corpus(corpus: &Corpus, ratio: f64, seed: u64) -> Result<BTreeMap<String, CweDataset>> {
    corpus
        .datasets
        .iter()
        .map(|(cwe, ds)| Ok((cwe.clone(), stratified_split(ds, ratio, seed)?)))
        .collect()
}

/// Training-split records of every dataset, in CWE then record order.
pub fn training_records(datasets: &BTreeMap<String, CweDataset>) -> Vec<&WarningRecord> {
    datasets.values().flat_map(|d| d.records_in(Split::Train)).collect()
}

/// Pretrains the embedder on function-name prediction over `records`.
/// Records that do not parse are skipped with a warning.
pub fn pretrain_embedder(
    records: &[&WarningRecord],
    config: &PretrainConfig,
    seed: u64,
) -> Result<(EmbedderModel, PretrainReport)> {
    let bags: Vec<ContextBag> = records
        .iter()
        .filter_map(|r| match parse_function(&r.source) {
            Ok(ast) => Some(extract_path_contexts(&ast, &config.extract)),
            Err(e) => {
                log::warn!("{}: skipped for pretraining: {e}", r.id);
                None
            }
        })
        .collect();
    let vocab = build_vocab(&bags, config.min_count)?;
    let encoded: Vec<_> = bags.iter().map(|b| encode_bag(&vocab, b)).collect();
    let params = init_params(&vocab, config.dims, seed)?;
    let (params, report) = pretrain(params, &encoded, config.epochs, config.learning_rate, seed)?;
    Ok((EmbedderModel::new(config.extract, vocab, params), report))
}

/// Code vectors of `records` as matrix rows. Sources that fail to parse
/// embed to the zero vector.
pub fn embed_records<'a>(
    model: &EmbedderModel,
    records: impl IntoIterator<Item = &'a WarningRecord>,
) -> Matrix {
    let rows: Vec<Vec<f64>> = records
        .into_iter()
        .map(|r| match model.embed_function(&r.source) {
            Ok(e) => e.vector.0,
            Err(e) => {
                log::warn!("{}: {e}; using the zero vector", r.id);
                vec![0.0; model.d_code()]
            }
        })
        .collect();
    if rows.is_empty() {
        return Matrix::zeros(0, model.d_code());
    }
    Matrix::from_rows(&rows)
}

/// Embedded rows and labels of one split.
pub struct SplitData {
    pub ids: Vec<String>,
    pub x: Matrix,
    pub y: Vec<u8>,
}

pub fn split_data(dataset: &CweDataset, which: Split, embedder: &EmbedderModel) -> SplitData {
    let records: Vec<&WarningRecord> = dataset.records_in(which).collect();
    SplitData {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        x: embed_records(embedder, records.iter().copied()),
        y: records.iter().map(|r| r.label().unwrap_or(0)).collect(),
    }
}

/// Trains one CWE's ensemble on its train split.
pub fn train_dataset(
    dataset: &CweDataset,
    embedder: &EmbedderModel,
    hyper: &EnsembleHyper,
    seed: u64,
) -> Result<EnsembleModel> {
    let train = split_data(dataset, Split::Train, embedder);
    if train.y.is_empty() {
        return Err(Error::NoData);
    }
    train_cwe_ensemble(&dataset.cwe, &train.x, &train.y, hyper, seed)
}

/// Ensemble metrics on the validation split.
pub fn evaluate_dataset(
    model: &EnsembleModel,
    dataset: &CweDataset,
    embedder: &EmbedderModel,
) -> Result<MetricsReport> {
    let val = split_data(dataset, Split::Val, embedder);
    let preds = predict_rows(model, &val.ids, &val.x)?;
    let labels: Vec<u8> = preds.iter().map(|p| p.final_label).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    Ok(compute_metrics(&val.y, &labels, &scores)?.with_cwe(&dataset.cwe))
}

pub fn predict_rows(model: &EnsembleModel, ids: &[String], x: &Matrix) -> Result<Vec<Prediction>> {
    ids.iter()
        .enumerate()
        .map(|(r, id)| model.predict(id, x.row(r)))
        .collect()
}

/// A scored open warning with its band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredWarning {
    pub prediction: Prediction,
    pub band: Band,
}

/// Scores `open` with `model` and bands the scores against a normal fitted
/// to those same scores.
pub fn score_and_band(
    model: &EnsembleModel,
    embedder: &EmbedderModel,
    open: &[&WarningRecord],
) -> Result<(BandThresholds, Vec<ScoredWarning>)> {
    let ids: Vec<String> = open.iter().map(|r| r.id.clone()).collect();
    let x = embed_records(embedder, open.iter().copied());
    Ok(band_predictions(&model.cwe, predict_rows(model, &ids, &x)?))
}

/// Fits bands to the scores of `preds` and assigns each prediction its band.
pub fn band_predictions(cwe: &str, preds: Vec<Prediction>) -> (BandThresholds, Vec<ScoredWarning>) {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let bands = fit_bands(cwe, &scores);
    let scored = preds
        .into_iter()
        .map(|p| ScoredWarning {
            band: assign_band(&bands, p.score),
            prediction: p,
        })
        .collect();
    (bands, scored)
}
