//! Python module `warntriage`.
//!
//! Structured results (reports, predictions, thresholds) come back as plain
//! dicts and lists; models are wrapped in classes with JSON round-trips.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;
use warntriage_core::corpus::{generate_synthetic_corpus, parse_records, to_jsonl, SynthSpec};
use warntriage_core::embedder::EmbedderModel;
use warntriage_core::ensemble::{self, train_cwe_ensemble, EnsembleHyper};
use warntriage_core::evaluation;
use warntriage_core::frontend::{self, ExtractConfig};
use warntriage_core::linalg::Matrix;
use warntriage_core::pipeline::{pretrain_embedder, PretrainConfig};
use warntriage_core::workflow::{self, BandThresholds};
use warntriage_service::{ops, Settings};

create_exception!(warntriage, WarntriageError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    WarntriageError::new_err(e.to_string())
}

/// Converts through JSON so results are ordinary Python containers.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(err("rows have different lengths"));
    }
    Ok(Matrix::from_rows(rows))
}

/// Debug rendering of the function's syntax tree.
#[pyfunction]
fn parse_function(source: &str) -> PyResult<String> {
    Ok(frontend::parse_function(source).map_err(err)?.to_debug_text())
}

/// `(left_terminal, path, right_terminal)` triples of one function.
#[pyfunction]
#[pyo3(signature = (source, max_path_length=8, max_path_width=2, max_contexts=None, seed=0))]
fn path_contexts(
    source: &str,
    max_path_length: usize,
    max_path_width: usize,
    max_contexts: Option<usize>,
    seed: u64,
) -> PyResult<Vec<(String, String, String)>> {
    let ast = frontend::parse_function(source).map_err(err)?;
    let cfg = ExtractConfig {
        max_path_length,
        max_path_width,
        max_contexts: max_contexts.unwrap_or(usize::MAX),
        seed,
    };
    Ok(frontend::extract_path_contexts(&ast, &cfg)
        .contexts
        .into_iter()
        .map(|c| {
            let path = c.path_string();
            (c.left_terminal, path, c.right_terminal)
        })
        .collect())
}

/// Synthetic corpus as JSONL, e.g. `generate_corpus("CWE-476:100:100:20", 42)`.
#[pyfunction]
#[pyo3(signature = (spec, seed=42))]
fn generate_corpus(spec: &str, seed: u64) -> PyResult<String> {
    let spec = SynthSpec::parse(spec).map_err(err)?;
    Ok(to_jsonl(&generate_synthetic_corpus(&spec, seed).map_err(err)?))
}

#[pyfunction]
fn compute_metrics(py: Python<'_>, labels: Vec<u8>, predicted: Vec<u8>, scores: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &evaluation::compute_metrics(&labels, &predicted, &scores).map_err(err)?)
}

#[pyfunction]
fn auroc(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<f64> {
    evaluation::auroc(&labels, &scores).map_err(err)
}

/// Majority label and mean probability of three member outputs.
#[pyfunction]
fn vote(member_probs: [f64; 3]) -> (u8, f64) {
    ensemble::vote(member_probs)
}

#[pyclass(name = "BandThresholds", frozen)]
struct PyBands(BandThresholds);

#[pymethods]
impl PyBands {
    #[getter]
    fn t_high(&self) -> f64 {
        self.0.t_high
    }

    #[getter]
    fn t_med(&self) -> f64 {
        self.0.t_med
    }

    #[getter]
    fn fallback(&self) -> bool {
        self.0.fallback
    }

    /// `"high"`, `"medium"` or `"low"`.
    fn band(&self, score: f64) -> &'static str {
        workflow::assign_band(&self.0, score).as_str()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!("BandThresholds(t_high={}, t_med={}, fallback={})", self.0.t_high, self.0.t_med, self.0.fallback)
    }
}

#[pyfunction]
fn fit_bands(cwe: &str, scores: Vec<f64>) -> PyBands {
    PyBands(workflow::fit_bands(cwe, &scores))
}

#[pyclass(name = "Embedder", frozen)]
struct PyEmbedder(EmbedderModel);

#[pymethods]
impl PyEmbedder {
    /// Pretrains on function-name prediction over a JSONL corpus.
    #[staticmethod]
    #[pyo3(signature = (jsonl, d_emb=128, d_code=384, epochs=30, seed=42))]
    fn pretrain(py: Python<'_>, jsonl: &str, d_emb: usize, d_code: usize, epochs: usize, seed: u64) -> PyResult<Self> {
        let records = parse_records(jsonl).map_err(err)?;
        let mut config = PretrainConfig { epochs, ..PretrainConfig::default() };
        config.dims.d_emb = d_emb;
        config.dims.d_code = d_code;
        let model = py
            .detach(|| {
                let refs: Vec<_> = records.iter().filter(|r| r.label().is_some()).collect();
                pretrain_embedder(&refs, &config, seed)
            })
            .map_err(err)?;
        Ok(PyEmbedder(model.0))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyEmbedder(EmbedderModel::from_json(text).map_err(err)?))
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn d_code(&self) -> usize {
        self.0.d_code()
    }

    fn embed(&self, source: &str) -> PyResult<Vec<f64>> {
        Ok(self.0.embed_function(source).map_err(err)?.vector.0)
    }

    /// The `k` contexts with the largest attention weights.
    #[pyo3(signature = (source, k=5))]
    fn top_contexts(&self, source: &str, k: usize) -> PyResult<Vec<(String, String, String, f64)>> {
        Ok(self
            .0
            .top_contexts(source, k)
            .map_err(err)?
            .into_iter()
            .map(|(c, alpha)| {
                let path = c.path_string();
                (c.left_terminal, path, c.right_terminal, alpha)
            })
            .collect())
    }
}

#[pyclass(name = "EnsembleModel", frozen)]
struct PyEnsemble(ensemble::EnsembleModel);

#[pymethods]
impl PyEnsemble {
    /// Trains the three members on bootstrap resamples of `(x, y)`.
    #[staticmethod]
    #[pyo3(signature = (cwe, x, y, seed=42))]
    fn train(py: Python<'_>, cwe: &str, x: Vec<Vec<f64>>, y: Vec<u8>, seed: u64) -> PyResult<Self> {
        let x = matrix(&x)?;
        let model = py
            .detach(|| train_cwe_ensemble(cwe, &x, &y, &EnsembleHyper::default(), seed))
            .map_err(err)?;
        Ok(PyEnsemble(model))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyEnsemble(serde_json::from_str(text).map_err(err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(err)
    }

    #[getter]
    fn cwe(&self) -> &str {
        &self.0.cwe
    }

    #[getter]
    fn version(&self) -> u64 {
        self.0.version
    }

    /// One prediction dict per row.
    #[pyo3(signature = (x, ids=None))]
    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>, ids: Option<Vec<String>>) -> PyResult<Py<PyAny>> {
        let ids = ids.unwrap_or_else(|| (0..x.len()).map(|i| i.to_string()).collect());
        if ids.len() != x.len() {
            return Err(err(format!("{} ids for {} rows", ids.len(), x.len())));
        }
        let preds = ids
            .iter()
            .zip(&x)
            .map(|(id, row)| self.0.predict(id, row))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        to_py(py, &preds)
    }
}

/// A data directory driven like the command line tool.
#[pyclass(name = "Project", frozen)]
struct PyProject(Settings);

#[pymethods]
impl PyProject {
    #[new]
    #[pyo3(signature = (data_dir, config=None))]
    fn new(data_dir: PathBuf, config: Option<PathBuf>) -> PyResult<Self> {
        let mut settings = Settings::load(config.as_deref()).map_err(err)?;
        settings.data_dir = data_dir;
        Ok(PyProject(settings))
    }

    /// A copy with one configuration key overridden, e.g.
    /// `with_setting("embed.epochs", "5")`.
    fn with_setting(&self, key: &str, value: &str) -> PyResult<Self> {
        let mut settings = self.0.clone();
        settings.set(key, value).map_err(err)?;
        Ok(PyProject(settings))
    }

    fn ingest(&self, py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
        let rows = py.detach(|| ops::ingest(&self.0, &path)).map_err(err)?;
        to_py(py, &rows)
    }

    /// Returns the per-epoch pretraining losses.
    fn pretrain(&self, py: Python<'_>) -> PyResult<Vec<f64>> {
        let (_, report) = py.detach(|| ops::pretrain(&self.0)).map_err(err)?;
        Ok(report.epoch_losses)
    }

    #[pyo3(signature = (cwe="all"))]
    fn train(&self, py: Python<'_>, cwe: &str) -> PyResult<Py<PyAny>> {
        let out = py.detach(|| ops::train(&self.0, cwe)).map_err(err)?;
        to_py(py, &out)
    }

    #[pyo3(signature = (cwe="all"))]
    fn eval(&self, py: Python<'_>, cwe: &str) -> PyResult<Py<PyAny>> {
        let (reports, summary) = py.detach(|| ops::eval(&self.0, cwe)).map_err(err)?;
        to_py(py, &serde_json::json!({ "reports": reports, "summary": summary }))
    }

    fn score(&self, py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
        let rows = py.detach(|| ops::score_file(&self.0, &path)).map_err(err)?;
        to_py(py, &rows)
    }

    fn feedback(&self, py: Python<'_>, warning_id: &str, verdict: &str, user: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &ops::feedback(&self.0, warning_id, verdict, user).map_err(err)?)
    }

    fn retrain(&self, py: Python<'_>, cwe: &str) -> PyResult<Py<PyAny>> {
        let out = py.detach(|| ops::retrain(&self.0, cwe)).map_err(err)?;
        to_py(py, &out)
    }
}

#[pymodule]
fn warntriage(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WarntriageError", m.py().get_type::<WarntriageError>())?;
    m.add_function(wrap_pyfunction!(parse_function, m)?)?;
    m.add_function(wrap_pyfunction!(path_contexts, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(fit_bands, m)?)?;
    m.add_class::<PyBands>()?;
    m.add_class::<PyEmbedder>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyProject>()?;
    Ok(())
}
