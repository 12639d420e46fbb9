//! Path-attention code embedder.
//!
//! Each context `(left, path, right)` is embedded as the concatenation of
//! its three embedding rows, squashed through `tanh(combine · c)`, and the
//! function's code vector is the attention-weighted sum of those rows. A
//! softmax head over function-name tags provides the pretraining signal.

mod train;

pub use train::{batch_loss_and_grad, predict_tag, pretrain, Gradients, PretrainReport};

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{extract_path_contexts, parse_function, ContextBag, ExtractConfig, PathContext, Vocabulary};
use crate::linalg::{dot, softmax, Matrix};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_emb: usize,
    pub d_code: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_emb: 128,
            d_code: 384,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    pub dims: Dims,
    /// |tokens| × d_emb
    pub value_embeddings: Matrix,
    /// |paths| × d_emb
    pub path_embeddings: Matrix,
    /// d_code × 3·d_emb
    pub combine: Matrix,
    /// d_code
    pub attention: Vec<f64>,
    /// |tags| × d_code
    pub tag_weights: Matrix,
}

impl EmbedderParams {
    pub fn is_finite(&self) -> bool {
        self.value_embeddings.is_finite()
            && self.path_embeddings.is_finite()
            && self.combine.is_finite()
            && self.attention.iter().all(|v| v.is_finite())
            && self.tag_weights.is_finite()
    }
}

/// Fixed-length function embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeVector(pub Vec<f64>);

impl CodeVector {
    pub fn zeros(d: usize) -> Self {
        CodeVector(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A context bag mapped through the vocabulary: `[left, path, right]` ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBag {
    pub contexts: Vec<[u32; 3]>,
    pub tag: u32,
}

pub fn encode_bag(vocab: &Vocabulary, bag: &ContextBag) -> EncodedBag {
    EncodedBag {
        contexts: bag
            .contexts
            .iter()
            .map(|c| {
                [
                    vocab.tokens.id(&c.left_terminal),
                    vocab.paths.id(&c.path_string()),
                    vocab.tokens.id(&c.right_terminal),
                ]
            })
            .collect(),
        tag: vocab.tags.id(&bag.function_name),
    }
}

pub fn init_params(vocab: &Vocabulary, dims: Dims, seed: u64) -> Result<EmbedderParams> {
    if dims.d_emb == 0 || dims.d_code == 0 {
        return Err(Error::InvalidDims(format!(
            "d_emb={} d_code={} must both be positive",
            dims.d_emb, dims.d_code
        )));
    }
    if vocab.tokens.is_empty() || vocab.paths.is_empty() || vocab.tags.is_empty() {
        return Err(Error::NoData);
    }
    let mut rng = crate::seeded_rng(seed);
    // Glorot-uniform: limit sqrt(6 / (fan_in + fan_out)).
    let mut uniform = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let mut m = Matrix::zeros(rows, cols);
        m.data.iter_mut().for_each(|v| *v = rng.random_range(-limit..=limit));
        m
    };
    let value_embeddings = uniform(vocab.tokens.len(), dims.d_emb);
    let path_embeddings = uniform(vocab.paths.len(), dims.d_emb);
    let combine = uniform(dims.d_code, 3 * dims.d_emb);
    let attention = uniform(1, dims.d_code).data;
    let tag_weights = uniform(vocab.tags.len(), dims.d_code);
    Ok(EmbedderParams {
        dims,
        value_embeddings,
        path_embeddings,
        combine,
        attention,
        tag_weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub attention_weights: Vec<f64>,
    pub code_vector: CodeVector,
    pub tag_distribution: Vec<f64>,
}

/// Block projections `combine[:, block] · e` cached per (block, id), so
/// each distinct token or path is projected once per bag or batch.
#[derive(Default)]
pub(crate) struct Projections {
    cache: std::collections::HashMap<(usize, u32), Vec<f64>>,
}

impl Projections {
    fn get(&mut self, params: &EmbedderParams, block: usize, id: u32) -> &[f64] {
        self.cache.entry((block, id)).or_insert_with(|| {
            let d = params.dims.d_emb;
            let table = if block == 1 {
                &params.path_embeddings
            } else {
                &params.value_embeddings
            };
            let e = table.row(id as usize);
            (0..params.dims.d_code)
                .map(|row| dot(&params.combine.row(row)[block * d..(block + 1) * d], e))
                .collect()
        })
    }

    /// Hidden row `tanh(combine · c)` for one context.
    pub(crate) fn hidden(&mut self, params: &EmbedderParams, ctx: [u32; 3]) -> Vec<f64> {
        let mut h = self.get(params, 0, ctx[0]).to_vec();
        for b in 1..3 {
            let p = self.get(params, b, ctx[b]);
            h.iter_mut().zip(p).for_each(|(x, y)| *x += y);
        }
        h.iter_mut().for_each(|x| *x = x.tanh());
        h
    }
}

/// Per-context hidden rows `tanh(combine · c_i)`.
pub(crate) fn hidden_rows(params: &EmbedderParams, contexts: &[[u32; 3]]) -> Vec<Vec<f64>> {
    let mut proj = Projections::default();
    contexts.iter().map(|&c| proj.hidden(params, c)).collect()
}

pub fn forward_encoded(params: &EmbedderParams, bag: &EncodedBag) -> Result<Forward> {
    if bag.contexts.is_empty() {
        return Err(Error::NoContexts);
    }
    let h = hidden_rows(params, &bag.contexts);
    let scores: Vec<f64> = h.iter().map(|hi| dot(hi, &params.attention)).collect();
    let alpha = softmax(&scores);
    let mut v = vec![0.0; params.dims.d_code];
    for (a, hi) in alpha.iter().zip(&h) {
        crate::linalg::axpy(*a, hi, &mut v);
    }
    let logits: Vec<f64> = (0..params.tag_weights.rows)
        .map(|t| dot(params.tag_weights.row(t), &v))
        .collect();
    Ok(Forward {
        attention_weights: alpha,
        code_vector: CodeVector(v),
        tag_distribution: softmax(&logits),
    })
}

/// Attention weights, code vector and tag distribution for one bag.
pub fn forward(params: &EmbedderParams, vocab: &Vocabulary, bag: &ContextBag) -> Result<Forward> {
    forward_encoded(params, &encode_bag(vocab, bag))
}

/// Everything needed to embed a function: extraction caps, vocabularies and
/// trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderModel {
    pub format_version: u32,
    pub extract: ExtractConfig,
    pub vocab: Vocabulary,
    pub params: EmbedderParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: CodeVector,
    /// Set when the function produced no contexts and the zero vector was
    /// returned instead.
    pub empty_bag: bool,
}

impl EmbedderModel {
    pub fn new(extract: ExtractConfig, vocab: Vocabulary, params: EmbedderParams) -> Self {
        EmbedderModel {
            format_version: MODEL_FORMAT_VERSION,
            extract,
            vocab,
            params,
        }
    }

    pub fn d_code(&self) -> usize {
        self.params.dims.d_code
    }

    pub fn bag(&self, source: &str) -> Result<ContextBag> {
        Ok(extract_path_contexts(&parse_function(source)?, &self.extract))
    }

    /// Parse, extract and run the frozen network. Never mutates the model.
    pub fn embed_function(&self, source: &str) -> Result<Embedding> {
        let bag = self.bag(source)?;
        if bag.contexts.is_empty() {
            log::warn!("function {:?} has no path contexts; using the zero vector", bag.function_name);
            return Ok(Embedding {
                vector: CodeVector::zeros(self.d_code()),
                empty_bag: true,
            });
        }
        let out = forward(&self.params, &self.vocab, &bag)?;
        Ok(Embedding {
            vector: out.code_vector,
            empty_bag: false,
        })
    }

    /// The `k` contexts with the highest attention weight, descending.
    pub fn top_contexts(&self, source: &str, k: usize) -> Result<Vec<(PathContext, f64)>> {
        let bag = self.bag(source)?;
        if bag.contexts.is_empty() {
            return Ok(Vec::new());
        }
        let out = forward(&self.params, &self.vocab, &bag)?;
        let mut ranked: Vec<(PathContext, f64)> = bag.contexts.into_iter().zip(out.attention_weights).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked.truncate(k);
        Ok(ranked)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("embedder model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("embedder model: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::SchemaVersion {
                    expected: MODEL_FORMAT_VERSION,
                    found: other.map_or("none".into(), |v| v.to_string()),
                })
            }
        }
        let model: EmbedderModel =
            serde_json::from_value(value).map_err(|e| Error::Schema(format!("embedder model: {e}")))?;
        let p = &model.params;
        let d = p.dims;
        let shapes_ok = p.value_embeddings.rows == model.vocab.tokens.len()
            && p.path_embeddings.rows == model.vocab.paths.len()
            && p.tag_weights.rows == model.vocab.tags.len()
            && p.value_embeddings.cols == d.d_emb
            && p.path_embeddings.cols == d.d_emb
            && p.combine.rows == d.d_code
            && p.combine.cols == 3 * d.d_emb
            && p.attention.len() == d.d_code
            && p.tag_weights.cols == d.d_code
            && [&p.value_embeddings, &p.path_embeddings, &p.combine, &p.tag_weights]
                .iter()
                .all(|m| m.data.len() == m.rows * m.cols);
        if !shapes_ok {
            return Err(Error::Schema("embedder model: matrix shapes disagree with dims/vocabulary".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
