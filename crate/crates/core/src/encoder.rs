//! Mean-of-word-embeddings document encoder and its CBOW-with-document
//! training objective.
//!
//! A document embedding is the count-weighted mean of the input-embedding
//! rows of its words. The training score of a target word is
//! `v_target · (mean(U[context]) + mean(U[doc_sample]))`, optimized with
//! negative sampling; the full softmax is kept as a reference.

use std::borrow::Borrow;
use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::contrastive::PredictorWeights;
use crate::corpus::{SparseBow, TokenizedDocument, WordId};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{self, Purpose};

/// Learnable parameters. Row `w` of `input` is the word embedding of `w`;
/// row `w` of `output` is its output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input: Array2<f64>,
    pub output: Array2<f64>,
    pub predictor: PredictorWeights,
}

impl ModelParams {
    /// Input embeddings uniform in `[-0.5/d, 0.5/d]`, output projections zero.
    pub fn init(vocab_size: usize, dim: usize, predictor_hidden: usize, seed: u64) -> Self {
        let mut rng = rng::derive(seed, 0, 0, Purpose::Init);
        let half = 0.5 / dim as f64;
        let input = Array2::from_shape_fn((vocab_size, dim), |_| rng.random_range(-half..half));
        let output = Array2::zeros((vocab_size, dim));
        let predictor = PredictorWeights::init(dim, predictor_hidden, &mut rng);
        Self {
            input,
            output,
            predictor,
        }
    }

    pub fn dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(self.output.iter()).all(|x| x.is_finite()) && self.predictor.is_finite()
    }

    pub fn input_row(&self, id: WordId) -> &[f64] {
        row(&self.input, id)
    }

    pub fn output_row(&self, id: WordId) -> &[f64] {
        row(&self.output, id)
    }
}

pub(crate) fn row(m: &Array2<f64>, id: WordId) -> &[f64] {
    let d = m.ncols();
    let start = id as usize * d;
    &m.as_slice().expect("parameter matrices are contiguous")[start..start + d]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Count-weighted mean of the input rows of the document's words.
pub fn embed_document(bow: &SparseBow, input: &Array2<f64>) -> Result<Array1<f64>> {
    if bow.total == 0 {
        return Err(Error::InvalidInput("cannot embed an empty document".into()));
    }
    // One addition per token occurrence, then a single division, so the
    // result is bit-identical to averaging the expanded bag token by token.
    let mut h = vec![0.0; input.ncols()];
    for (id, count) in bow.iter() {
        let r = row(input, id);
        for _ in 0..count {
            h.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
    }
    let t = bow.total as f64;
    h.iter_mut().for_each(|x| *x /= t);
    Ok(Array1::from(h))
}

/// Embeds every document; row `i` corresponds to `docs[i]`.
pub fn embed_documents(docs: &[TokenizedDocument], input: &Array2<f64>, exec: Execution) -> Result<Array2<f64>> {
    let rows = par::map(exec, docs, |d| {
        SparseBow::from_tokens(&d.tokens)
            .ok_or(Error::EmptyDocument { doc_id: d.doc_id })
            .and_then(|bow| embed_document(&bow, input))
    });
    let mut out = Array2::zeros((docs.len(), input.ncols()));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingWindow {
    pub target: WordId,
    pub context: Vec<WordId>,
    pub doc_sample: Vec<WordId>,
}

/// One window per position. Context is up to `window` tokens on each side of
/// the target. The document sample is drawn once with replacement and shared
/// by all windows of this call.
pub fn sample_windows<R: Rng + ?Sized>(
    doc: &TokenizedDocument,
    window: usize,
    doc_sample_size: usize,
    rng: &mut R,
) -> Vec<TrainingWindow> {
    let n = doc.tokens.len();
    if n == 0 {
        return Vec::new();
    }
    let doc_sample: Vec<WordId> = (0..doc_sample_size.max(1))
        .map(|_| doc.tokens[rng.random_range(0..n)])
        .collect();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(window);
            let hi = (t + window + 1).min(n);
            let context = doc.tokens[lo..t]
                .iter()
                .chain(&doc.tokens[t + 1..hi])
                .copied()
                .collect();
            TrainingWindow {
                target: doc.tokens[t],
                context,
                doc_sample: doc_sample.clone(),
            }
        })
        .collect()
}

fn mean_rows(m: &Array2<f64>, ids: &[WordId]) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    if ids.is_empty() {
        return out;
    }
    for &id in ids {
        axpy(1.0, row(m, id), &mut out);
    }
    let inv = 1.0 / ids.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    out
}

/// Full-softmax probability of every vocabulary word given the window.
pub fn softmax_distribution(context: &[WordId], doc_sample: &[WordId], params: &ModelParams) -> Result<Vec<f64>> {
    if context.is_empty() && doc_sample.is_empty() {
        return Err(Error::InvalidInput("context and document sample are both empty".into()));
    }
    if params.vocab_size() == 0 {
        return Err(Error::InvalidInput("empty vocabulary".into()));
    }
    let mut s = mean_rows(&params.input, context);
    axpy(1.0, &mean_rows(&params.input, doc_sample), &mut s);
    let logits: Vec<f64> = (0..params.vocab_size())
        .map(|w| dot(params.output_row(w as WordId), &s))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

pub fn softmax_probability(
    target: WordId,
    context: &[WordId],
    doc_sample: &[WordId],
    params: &ModelParams,
) -> Result<f64> {
    let dist = softmax_distribution(context, doc_sample, params)?;
    dist.get(target as usize)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("target {target} outside vocabulary")))
}

/// Draws negative words.
pub trait NoiseSampler: Sync {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WordId;
}

/// Unigram distribution raised to the 3/4 power.
#[derive(Debug, Clone)]
pub struct UnigramNoise {
    table: WeightedAliasIndex<f64>,
}

impl UnigramNoise {
    pub fn new(freqs: &[u64]) -> Result<Self> {
        let weights: Vec<f64> = freqs.iter().map(|&f| (f as f64).powf(0.75)).collect();
        let table =
            WeightedAliasIndex::new(weights).map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
        Ok(Self { table })
    }
}

impl NoiseSampler for UnigramNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WordId {
        self.table.sample(rng) as WordId
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UniformNoise {
    pub vocab_size: usize,
}

impl NoiseSampler for UniformNoise {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WordId {
        rng.random_range(0..self.vocab_size) as WordId
    }
}

/// Row-sparse gradient accumulator. Rows appear in first-touch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    dim: usize,
    slots: HashMap<WordId, usize>,
    ids: Vec<WordId>,
    data: Vec<f64>,
}

impl SparseRows {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_mut(&mut self, id: WordId) -> &mut [f64] {
        let slot = match self.slots.get(&id) {
            Some(&s) => s,
            None => {
                let s = self.ids.len();
                self.slots.insert(id, s);
                self.ids.push(id);
                self.data.resize(self.data.len() + self.dim, 0.0);
                s
            }
        };
        &mut self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn get(&self, id: WordId) -> Option<&[f64]> {
        self.slots
            .get(&id)
            .map(|&s| &self.data[s * self.dim..(s + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, &[f64])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(s, &id)| (id, &self.data[s * self.dim..(s + 1) * self.dim]))
    }

    pub fn add_scaled(&mut self, id: WordId, alpha: f64, x: &[f64]) {
        axpy(alpha, x, self.row_mut(id));
    }

    /// Adds `other` row by row, in `other`'s row order.
    pub fn merge(&mut self, other: &SparseRows) {
        for (id, g) in other.iter() {
            axpy(1.0, g, self.row_mut(id));
        }
    }
}

/// Sparse gradient of the backbone loss with respect to both matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    pub input: SparseRows,
    pub output: SparseRows,
}

impl BackboneGrads {
    pub fn new(dim: usize) -> Self {
        Self {
            input: SparseRows::new(dim),
            output: SparseRows::new(dim),
        }
    }

    pub fn merge(&mut self, other: &BackboneGrads) {
        self.input.merge(&other.input);
        self.output.merge(&other.output);
    }
}

/// Inverted-dropout masks applied to the context mean and the document-sample
/// mean. Entries are 0 or `1/(1-p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub context: Vec<f64>,
    pub doc: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(dim: usize, p: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut draw = || -> Vec<f64> {
            (0..dim)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        let context = draw();
        let doc = draw();
        Self { context, doc }
    }
}

/// Negative-sampling loss of one window for fixed negatives and masks,
/// accumulating gradients into `grads`.
///
/// `loss = -ln σ(v_t·s) - Σ_j ln σ(-v_{n_j}·s)` with
/// `s = mask_c ⊙ mean(U[context]) + mask_h ⊙ mean(U[doc_sample])`.
pub fn window_loss_grad(
    win: &TrainingWindow,
    negatives: &[WordId],
    masks: Option<&DropoutMasks>,
    params: &ModelParams,
    grads: &mut BackboneGrads,
) -> f64 {
    let d = params.dim();
    let mut ctx = mean_rows(&params.input, &win.context);
    let mut doc = mean_rows(&params.input, &win.doc_sample);
    if let Some(m) = masks {
        ctx.iter_mut().zip(&m.context).for_each(|(x, k)| *x *= k);
        doc.iter_mut().zip(&m.doc).for_each(|(x, k)| *x *= k);
    }
    let s: Vec<f64> = ctx.iter().zip(&doc).map(|(a, b)| a + b).collect();

    let mut grad_s = vec![0.0; d];
    let f = dot(params.output_row(win.target), &s);
    let mut loss = softplus(-f);
    let g = sigmoid(f) - 1.0;
    axpy(g, params.output_row(win.target), &mut grad_s);
    grads.output.add_scaled(win.target, g, &s);
    for &n in negatives {
        let f = dot(params.output_row(n), &s);
        loss += softplus(f);
        let g = sigmoid(f);
        axpy(g, params.output_row(n), &mut grad_s);
        grads.output.add_scaled(n, g, &s);
    }

    if !win.context.is_empty() {
        let mut gc = grad_s.clone();
        if let Some(m) = masks {
            gc.iter_mut().zip(&m.context).for_each(|(x, k)| *x *= k);
        }
        let inv = 1.0 / win.context.len() as f64;
        for &c in &win.context {
            grads.input.add_scaled(c, inv, &gc);
        }
    }
    if !win.doc_sample.is_empty() {
        let mut gh = grad_s;
        if let Some(m) = masks {
            gh.iter_mut().zip(&m.doc).for_each(|(x, k)| *x *= k);
        }
        let inv = 1.0 / win.doc_sample.len() as f64;
        for &w in &win.doc_sample {
            grads.input.add_scaled(w, inv, &gh);
        }
    }
    loss
}

/// Draws `k` negatives (and dropout masks when `dropout > 0`) and evaluates
/// [`window_loss_grad`].
pub fn negsample_loss_grad<N: NoiseSampler, R: Rng + ?Sized>(
    win: &TrainingWindow,
    params: &ModelParams,
    k: usize,
    dropout: f64,
    noise: &N,
    rng: &mut R,
) -> (f64, BackboneGrads) {
    let mut grads = BackboneGrads::new(params.dim());
    let loss = accumulate_window(win, params, k, dropout, noise, rng, &mut grads);
    (loss, grads)
}

fn accumulate_window<N: NoiseSampler, R: Rng + ?Sized>(
    win: &TrainingWindow,
    params: &ModelParams,
    k: usize,
    dropout: f64,
    noise: &N,
    rng: &mut R,
    grads: &mut BackboneGrads,
) -> f64 {
    let negatives: Vec<WordId> = (0..k).map(|_| noise.sample(rng)).collect();
    let masks = (dropout > 0.0).then(|| DropoutMasks::sample(params.dim(), dropout, rng));
    window_loss_grad(win, &negatives, masks.as_ref(), params, grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub window: usize,
    pub negatives: usize,
    pub doc_sample_size: usize,
    pub dropout: f64,
}

/// How shard gradients are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Fixed shard order; results do not depend on the thread count.
    Ordered,
    /// Scheduler-dependent tree reduction.
    Unordered,
}

/// Documents per gradient shard. Fixed so that shard boundaries, and hence
/// ordered reductions, never depend on the number of threads.
pub const SHARD_DOCS: usize = 32;

fn document_loss_grad<N: NoiseSampler>(
    doc: &TokenizedDocument,
    params: &ModelParams,
    config: &BackboneConfig,
    noise: &N,
    seed: u64,
    epoch: u64,
    grads: &mut BackboneGrads,
) -> f64 {
    let mut rng = rng::derive(seed, epoch, doc.doc_id as u64, Purpose::Windows);
    let windows = sample_windows(doc, config.window, config.doc_sample_size, &mut rng);
    windows
        .iter()
        .map(|w| accumulate_window(w, params, config.negatives, config.dropout, noise, &mut rng, grads))
        .sum()
}

/// Summed negative-sampling loss over every window of every document in
/// `batch`, with its sparse gradient. Each document draws from its own
/// stream keyed by `(seed, epoch, doc_id)`.
#[allow(clippy::too_many_arguments)]
pub fn batch_backbone_loss<N: NoiseSampler, D: Borrow<TokenizedDocument> + Sync>(
    batch: &[D],
    params: &ModelParams,
    config: &BackboneConfig,
    noise: &N,
    seed: u64,
    epoch: u64,
    exec: Execution,
    reduction: Reduction,
) -> Result<(f64, BackboneGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let dim = params.dim();
    let shards: Vec<&[D]> = batch.chunks(SHARD_DOCS).collect();
    let shard_result = |shard: &&[D]| {
        let mut g = BackboneGrads::new(dim);
        let loss: f64 = shard
            .iter()
            .map(|doc| document_loss_grad(doc.borrow(), params, config, noise, seed, epoch, &mut g))
            .sum();
        (loss, g)
    };
    match reduction {
        Reduction::Ordered => {
            let parts = par::map(exec, &shards, shard_result);
            let mut total = 0.0;
            let mut grads = BackboneGrads::new(dim);
            for (loss, g) in &parts {
                total += loss;
                grads.merge(g);
            }
            Ok((total, grads))
        }
        Reduction::Unordered => Ok(par::map_reduce(
            exec,
            &shards,
            || (0.0, BackboneGrads::new(dim)),
            |(acc_loss, mut acc), shard| {
                let (loss, g) = shard_result(shard);
                acc.merge(&g);
                (acc_loss + loss, acc)
            },
            |(la, mut a), (lb, b)| {
                a.merge(&b);
                (la + lb, a)
            },
        )),
    }
}
