//! Analytic gradients and mini-batch pretraining on tag prediction.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{EmbedderParams, EncodedBag, Projections};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, softmax, Matrix};

const BATCH_SIZE: usize = 32;

/// Gradients with the same shapes as [`EmbedderParams`]. Embedding rows that
/// received gradient are listed so updates and resets stay sparse.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub value_embeddings: Matrix,
    pub path_embeddings: Matrix,
    pub combine: Matrix,
    pub attention: Vec<f64>,
    pub tag_weights: Matrix,
    touched_values: Vec<u32>,
    touched_paths: Vec<u32>,
}

impl Gradients {
    pub fn zeros_like(p: &EmbedderParams) -> Self {
        Gradients {
            value_embeddings: Matrix::zeros(p.value_embeddings.rows, p.value_embeddings.cols),
            path_embeddings: Matrix::zeros(p.path_embeddings.rows, p.path_embeddings.cols),
            combine: Matrix::zeros(p.combine.rows, p.combine.cols),
            attention: vec![0.0; p.attention.len()],
            tag_weights: Matrix::zeros(p.tag_weights.rows, p.tag_weights.cols),
            touched_values: Vec::new(),
            touched_paths: Vec::new(),
        }
    }

    fn reset(&mut self) {
        for &r in &self.touched_values {
            self.value_embeddings.row_mut(r as usize).fill(0.0);
        }
        for &r in &self.touched_paths {
            self.path_embeddings.row_mut(r as usize).fill(0.0);
        }
        self.touched_values.clear();
        self.touched_paths.clear();
        self.combine.fill(0.0);
        self.attention.fill(0.0);
        self.tag_weights.fill(0.0);
    }

    fn apply_sgd(&self, p: &mut EmbedderParams, lr: f64) {
        for &r in &self.touched_values {
            axpy(-lr, self.value_embeddings.row(r as usize), p.value_embeddings.row_mut(r as usize));
        }
        for &r in &self.touched_paths {
            axpy(-lr, self.path_embeddings.row(r as usize), p.path_embeddings.row_mut(r as usize));
        }
        axpy(-lr, &self.combine.data, &mut p.combine.data);
        axpy(-lr, &self.attention, &mut p.attention);
        axpy(-lr, &self.tag_weights.data, &mut p.tag_weights.data);
    }
}

/// Distinct ids of one block of the combine matrix, with their projections
/// and accumulated pre-activation gradients.
struct Block {
    slot: HashMap<u32, usize>,
    ids: Vec<u32>,
    grad_z: Vec<Vec<f64>>,
}

impl Block {
    fn new() -> Self {
        Block {
            slot: HashMap::new(),
            ids: Vec::new(),
            grad_z: Vec::new(),
        }
    }

    fn index(&mut self, id: u32, d_code: usize) -> usize {
        *self.slot.entry(id).or_insert_with(|| {
            self.ids.push(id);
            self.grad_z.push(vec![0.0; d_code]);
            self.ids.len() - 1
        })
    }
}

/// Mean cross-entropy of the tag head over `bags`; gradients are written
/// into `grads` (which is reset first).
///
/// Because `combine · c_i` splits into three block products, gradients with
/// respect to `combine` and the embeddings are accumulated once per distinct
/// (block, id) in the batch rather than once per context.
fn accumulate(params: &EmbedderParams, bags: &[&EncodedBag], grads: &mut Gradients) -> Result<f64> {
    grads.reset();
    let d = params.dims.d_emb;
    let dc = params.dims.d_code;
    let n_tags = params.tag_weights.rows;
    let scale = 1.0 / bags.len() as f64;
    let mut blocks = [Block::new(), Block::new(), Block::new()];
    let mut total_loss = 0.0;
    let mut proj = Projections::default();

    for bag in bags {
        if bag.contexts.is_empty() {
            return Err(Error::NoContexts);
        }
        let h: Vec<Vec<f64>> = bag.contexts.iter().map(|&c| proj.hidden(params, c)).collect();
        let scores: Vec<f64> = h.iter().map(|hi| dot(hi, &params.attention)).collect();
        let alpha = softmax(&scores);
        let mut v = vec![0.0; dc];
        for (a, hi) in alpha.iter().zip(&h) {
            axpy(*a, hi, &mut v);
        }
        let logits: Vec<f64> = (0..n_tags).map(|t| dot(params.tag_weights.row(t), &v)).collect();
        let probs = softmax(&logits);
        let tag = bag.tag as usize;
        total_loss += -probs[tag].ln();

        let mut dlogits = probs;
        dlogits[tag] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= scale);
        let mut dv = vec![0.0; dc];
        for (t, &g) in dlogits.iter().enumerate() {
            axpy(g, &v, grads.tag_weights.row_mut(t));
            axpy(g, params.tag_weights.row(t), &mut dv);
        }
        let dalpha: Vec<f64> = h.iter().map(|hi| dot(hi, &dv)).collect();
        let mean_dalpha: f64 = alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
        for (i, hi) in h.iter().enumerate() {
            let ds = alpha[i] * (dalpha[i] - mean_dalpha);
            axpy(ds, hi, &mut grads.attention);
            let dz: Vec<f64> = (0..dc)
                .map(|r| (alpha[i] * dv[r] + ds * params.attention[r]) * (1.0 - hi[r] * hi[r]))
                .collect();
            for (b, &id) in bag.contexts[i].iter().enumerate() {
                let s = blocks[b].index(id, dc);
                axpy(1.0, &dz, &mut blocks[b].grad_z[s]);
            }
        }
    }

    for (b, block) in blocks.iter().enumerate() {
        let (table, grad_table, touched) = if b == 1 {
            (&params.path_embeddings, &mut grads.path_embeddings, &mut grads.touched_paths)
        } else {
            (&params.value_embeddings, &mut grads.value_embeddings, &mut grads.touched_values)
        };
        let cols = b * d..(b + 1) * d;
        for (s, &id) in block.ids.iter().enumerate() {
            let e = table.row(id as usize);
            let gz = &block.grad_z[s];
            let ge = grad_table.row_mut(id as usize);
            for r in 0..dc {
                if gz[r] != 0.0 {
                    axpy(gz[r], e, &mut grads.combine.row_mut(r)[cols.clone()]);
                    axpy(gz[r], &params.combine.row(r)[cols.clone()], ge);
                }
            }
            if !touched.contains(&id) {
                touched.push(id);
            }
        }
    }
    Ok(total_loss * scale)
}

/// Mean tag cross-entropy over `bags` and its gradient for every parameter.
pub fn batch_loss_and_grad(params: &EmbedderParams, bags: &[EncodedBag]) -> Result<(f64, Gradients)> {
    if bags.is_empty() {
        return Err(Error::NoData);
    }
    let mut grads = Gradients::zeros_like(params);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let loss = accumulate(params, &refs, &mut grads)?;
    Ok((loss, grads))
}

/// Most probable tag id for a bag.
pub fn predict_tag(params: &EmbedderParams, bag: &EncodedBag) -> Result<u32> {
    let out = super::forward_encoded(params, bag)?;
    Ok(out
        .tag_distribution
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i as u32)
        .unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent on tag cross-entropy. Bags without contexts
/// are skipped; the visiting order is reshuffled every epoch from `seed`.
pub fn pretrain(
    mut params: EmbedderParams,
    bags: &[EncodedBag],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(EmbedderParams, PretrainReport)> {
    let usable: Vec<&EncodedBag> = bags.iter().filter(|b| !b.contexts.is_empty()).collect();
    let mut tags: Vec<u32> = usable.iter().map(|b| b.tag).collect();
    tags.sort_unstable();
    tags.dedup();
    if tags.len() < 2 {
        return Err(Error::InvalidArgument(
            "pretraining needs at least two distinct tags".into(),
        ));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut grads = Gradients::zeros_like(&params);
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(BATCH_SIZE) {
            let batch: Vec<&EncodedBag> = chunk.iter().map(|&i| usable[i]).collect();
            let loss = accumulate(&params, &batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum += loss * batch.len() as f64;
            grads.apply_sgd(&mut params, learning_rate);
        }
        let mean = sum / usable.len() as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("embedder epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok((params, PretrainReport { epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{forward_encoded, Dims};
    use crate::seeded_rng;
    use rand::Rng;

    fn random_params(seed: u64, tokens: usize, paths: usize, tags: usize, dims: Dims) -> EmbedderParams {
        let mut rng = seeded_rng(seed);
        let mut m = |r: usize, c: usize| {
            let mut m = Matrix::zeros(r, c);
            m.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            m
        };
        EmbedderParams {
            dims,
            value_embeddings: m(tokens, dims.d_emb),
            path_embeddings: m(paths, dims.d_emb),
            combine: m(dims.d_code, 3 * dims.d_emb),
            attention: m(1, dims.d_code).data,
            tag_weights: m(tags, dims.d_code),
        }
    }

    fn random_bags(seed: u64, n: usize, tokens: u32, paths: u32, tags: u32) -> Vec<EncodedBag> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| EncodedBag {
                contexts: (0..rng.random_range(1..6))
                    .map(|_| {
                        [
                            rng.random_range(0..tokens),
                            rng.random_range(0..paths),
                            rng.random_range(0..tokens),
                        ]
                    })
                    .collect(),
                tag: rng.random_range(0..tags),
            })
            .collect()
    }

    fn loss(p: &EmbedderParams, bags: &[EncodedBag]) -> f64 {
        bags.iter()
            .map(|b| -forward_encoded(p, b).unwrap().tag_distribution[b.tag as usize].ln())
            .sum::<f64>()
            / bags.len() as f64
    }

    #[test]
    fn analytic_loss_matches_forward() {
        let p = random_params(1, 5, 4, 3, Dims { d_emb: 3, d_code: 9 });
        let bags = random_bags(2, 4, 5, 4, 3);
        let (l, _) = batch_loss_and_grad(&p, &bags).unwrap();
        assert!((l - loss(&p, &bags)).abs() < 1e-12);
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let p = random_params(5, 6, 5, 3, Dims { d_emb: 3, d_code: 9 });
        let bags = random_bags(6, 5, 6, 5, 3);
        let (_, g) = batch_loss_and_grad(&p, &bags).unwrap();
        let h = 1e-5;
        for i in 0..p.attention.len() {
            let (mut plus, mut minus) = (p.clone(), p.clone());
            plus.attention[i] += h;
            minus.attention[i] -= h;
            let numeric = (loss(&plus, &bags) - loss(&minus, &bags)) / (2.0 * h);
            let a = g.attention[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "attention[{i}]: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = random_params(1, 5, 4, 3, Dims { d_emb: 3, d_code: 9 });
        let bags = random_bags(2, 10, 5, 4, 3);
        let (out, report) = pretrain(p.clone(), &bags, 0, 0.01, 1).unwrap();
        assert_eq!(out, p);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn single_tag_is_rejected() {
        let p = random_params(1, 5, 4, 3, Dims { d_emb: 3, d_code: 9 });
        let bags = random_bags(2, 10, 5, 4, 1);
        assert!(pretrain(p, &bags, 1, 0.01, 1).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut p = random_params(1, 5, 4, 3, Dims { d_emb: 3, d_code: 9 });
        p.tag_weights.data[0] = f64::INFINITY;
        let bags = random_bags(2, 10, 5, 4, 3);
        let err = pretrain(p, &bags, 3, 0.01, 1).unwrap_err();
        assert_eq!(err.to_string(), "divergence at epoch 1");
    }

    #[test]
    fn loss_decreases_on_separable_tags() {
        // Tag 1 bags use tokens 1..3, tag 2 bags tokens 3..5.
        let mut rng = seeded_rng(4);
        let bags: Vec<EncodedBag> = (0..40)
            .map(|i| {
                let tag = 1 + (i % 2) as u32;
                let base = 1 + 2 * (tag - 1);
                EncodedBag {
                    contexts: (0..4)
                        .map(|_| [base + rng.random_range(0..2), rng.random_range(1..3), base])
                        .collect(),
                    tag,
                }
            })
            .collect();
        let p = random_params(7, 6, 4, 3, Dims { d_emb: 4, d_code: 12 });
        let (_, report) = pretrain(p, &bags, 20, 0.05, 3).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    }
}
