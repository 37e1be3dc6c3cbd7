//! Surrogate text CNN: embedding matrix → 1-D convolutions of several window
//! heights → ReLU → global max pool → (dropout) → dense 2-class logits.
//!
//! The network never applies a softmax; the softmax only appears inside the
//! training loss, so explanations always see the raw class scores.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Prediction};
use crate::embeddings::{embed_pad, DocMatrix, EmbeddingTable};
use crate::error::{Error, Result};

pub const CNN_FORMAT_VERSION: u32 = 1;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub dim: usize,
    pub pad_len: usize,
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
}

fn default_optimizer() -> Optimizer {
    Optimizer::Sgd
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            dim: 300,
            pad_len: 100,
            filter_sizes: vec![2, 3, 4],
            filters_per_size: 150,
            dropout_rate: 0.4,
            seed: 0,
            epochs: 5,
            batch_size: 30,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.dim == 0 {
            issues.push("cnn.dim must be positive".into());
        }
        if self.pad_len == 0 {
            issues.push("cnn.pad_len must be positive".into());
        }
        if self.filter_sizes.is_empty() {
            issues.push("cnn.filter_sizes must not be empty".into());
        }
        for &s in &self.filter_sizes {
            if s == 0 || s > self.pad_len {
                issues.push(format!("cnn filter size {s} outside 1..={}", self.pad_len));
            }
        }
        if self.filters_per_size == 0 {
            issues.push("cnn.filters_per_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            issues.push(format!("cnn.dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.epochs == 0 {
            issues.push("cnn.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            issues.push("cnn.batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            issues.push("cnn.learning_rate must be positive".into());
        }
        issues
    }

    pub fn total_filters(&self) -> usize {
        self.filter_sizes.len() * self.filters_per_size
    }
}

/// Filters of one window height. `weights` is `filters × size × dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub size: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn filters(&self) -> usize {
        self.biases.len()
    }

    pub fn filter(&self, k: usize, dim: usize) -> &[f64] {
        let w = self.size * dim;
        &self.weights[k * w..(k + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnParams {
    pub format_version: u32,
    pub config: CnnConfig,
    pub conv: Vec<ConvLayer>,
    /// `total_filters × 2`, row-major: `dense_weights[f * 2 + c]`.
    pub dense_weights: Vec<f64>,
    pub dense_biases: [f64; NUM_CLASSES],
}

impl CnnParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &CnnConfig) -> Result<Self> {
        let issues = config.validate();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let nf = config.filters_per_size;
        let conv = config
            .filter_sizes
            .iter()
            .map(|&s| {
                let limit = (6.0 / (s * d + nf) as f64).sqrt();
                ConvLayer {
                    size: s,
                    weights: (0..nf * s * d).map(|_| rng.random_range(-limit..limit)).collect(),
                    biases: vec![0.0; nf],
                }
            })
            .collect();
        let total = config.total_filters();
        let limit = (6.0 / (total + NUM_CLASSES) as f64).sqrt();
        let dense_weights = (0..total * NUM_CLASSES)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Ok(CnnParams {
            format_version: CNN_FORMAT_VERSION,
            config: config.clone(),
            conv,
            dense_weights,
            dense_biases: [0.0; NUM_CLASSES],
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn pad_len(&self) -> usize {
        self.config.pad_len
    }

    pub fn total_filters(&self) -> usize {
        self.conv.iter().map(ConvLayer::filters).sum()
    }

    pub fn dense_weight(&self, f: usize, c: usize) -> f64 {
        self.dense_weights[f * NUM_CLASSES + c]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.config.dim;
        let mut total = 0;
        for layer in &self.conv {
            if layer.weights.len() != layer.filters() * layer.size * d {
                return Err(Error::Shape(format!(
                    "conv layer of size {} has {} weights for {} filters",
                    layer.size,
                    layer.weights.len(),
                    layer.filters()
                )));
            }
            if layer.size == 0 || layer.size > self.config.pad_len {
                return Err(Error::Shape(format!("conv size {} exceeds pad length", layer.size)));
            }
            total += layer.filters();
        }
        if self.dense_weights.len() != total * NUM_CLASSES {
            return Err(Error::Shape(format!(
                "dense layer has {} weights for {total} pooled features",
                self.dense_weights.len()
            )));
        }
        let finite = self
            .conv
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .chain(&self.dense_weights)
            .chain(&self.dense_biases)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Shape("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: CnnParams = serde_json::from_str(&raw)?;
        if params.format_version != CNN_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                params.format_version
            )));
        }
        params.check_shapes()?;
        Ok(params)
    }
}

/// Per-window-height activations kept for the backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCache {
    pub size: usize,
    pub positions: usize,
    /// `positions × filters`, row-major.
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub max: Vec<f64>,
    pub argmax: Vec<usize>,
}

impl ConvCache {
    pub fn pre_at(&self, t: usize, k: usize) -> f64 {
        self.pre[t * self.max.len() + k]
    }

    pub fn post_at(&self, t: usize, k: usize) -> f64 {
        self.post[t * self.max.len() + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub input: DocMatrix,
    pub layers: Vec<ConvCache>,
    /// Max-pooled features, before dropout.
    pub pooled: Vec<f64>,
    /// Features entering the dense layer (pooled × dropout mask in training).
    pub dense_input: Vec<f64>,
    pub dropout_mask: Option<Vec<f64>>,
    pub logits: [f64; NUM_CLASSES],
    pub train_mode: bool,
}

impl ActivationCache {
    /// Softmax probability of class 1.
    pub fn proba(&self) -> f64 {
        softmax(&self.logits)[1]
    }
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverted-dropout mask over the pooled features: kept entries scale by `1/(1-rate)`.
pub fn dropout_mask<R: Rng>(rng: &mut R, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub fn cnn_forward(
    params: &CnnParams,
    matrix: &DocMatrix,
    train_mode: bool,
    dropout: Option<&[f64]>,
) -> Result<ActivationCache> {
    let d = params.dim();
    if matrix.len() != params.pad_len() || matrix.dim() != d {
        return Err(Error::Shape(format!(
            "input is {}×{}, network expects {}×{d}",
            matrix.len(),
            matrix.dim(),
            params.pad_len()
        )));
    }
    let total = params.total_filters();
    if params.dense_weights.len() != total * NUM_CLASSES {
        return Err(Error::Shape("dense layer does not match conv filters".into()));
    }
    if let (true, Some(mask)) = (train_mode, dropout) {
        if mask.len() != total {
            return Err(Error::Shape(format!(
                "dropout mask of {} for {total} pooled features",
                mask.len()
            )));
        }
    }

    let x = matrix.data();
    let mut layers = Vec::with_capacity(params.conv.len());
    let mut pooled = Vec::with_capacity(total);
    for layer in &params.conv {
        let s = layer.size;
        let nf = layer.filters();
        let positions = matrix.len() + 1 - s;
        let mut pre = vec![0.0; positions * nf];
        for t in 0..positions {
            let window = &x[t * d..(t + s) * d];
            for k in 0..nf {
                pre[t * nf + k] = dot(layer.filter(k, d), window) + layer.biases[k];
            }
        }
        let post: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let mut max = vec![f64::NEG_INFINITY; nf];
        let mut argmax = vec![0usize; nf];
        for t in 0..positions {
            for k in 0..nf {
                // strict comparison keeps the lowest index on ties
                if post[t * nf + k] > max[k] {
                    max[k] = post[t * nf + k];
                    argmax[k] = t;
                }
            }
        }
        pooled.extend_from_slice(&max);
        layers.push(ConvCache {
            size: s,
            positions,
            pre,
            post,
            max,
            argmax,
        });
    }

    let (dense_input, dropout_mask) = match (train_mode, dropout) {
        (true, Some(mask)) => (
            pooled.iter().zip(mask).map(|(p, m)| p * m).collect(),
            Some(mask.to_vec()),
        ),
        _ => (pooled.clone(), None),
    };
    let mut logits = params.dense_biases;
    for (f, v) in dense_input.iter().enumerate() {
        for (c, l) in logits.iter_mut().enumerate() {
            *l += v * params.dense_weight(f, c);
        }
    }
    Ok(ActivationCache {
        input: matrix.clone(),
        layers,
        pooled,
        dense_input,
        dropout_mask,
        logits,
        train_mode,
    })
}

/// Gradient of `logit[target_class]` with respect to every input cell (L×D, row-major).
///
/// Max pooling routes the gradient to the recorded argmax window; an inactive
/// ReLU (pre-activation ≤ 0) blocks it.
pub fn cnn_backward_gradients(params: &CnnParams, cache: &ActivationCache, target_class: usize) -> Vec<f64> {
    let d = params.dim();
    let mut grad = vec![0.0; cache.input.len() * d];
    let mut f = 0;
    for (layer, lc) in params.conv.iter().zip(&cache.layers) {
        for k in 0..layer.filters() {
            let mut g = params.dense_weight(f, target_class);
            if let Some(mask) = &cache.dropout_mask {
                g *= mask[f];
            }
            f += 1;
            let t = lc.argmax[k];
            if g == 0.0 || lc.pre_at(t, k) <= 0.0 {
                continue;
            }
            let w = layer.filter(k, d);
            for (gx, wx) in grad[t * d..(t + layer.size) * d].iter_mut().zip(w) {
                *gx += g * wx;
            }
        }
    }
    grad
}

pub fn cnn_predict_matrix(params: &CnnParams, matrix: &DocMatrix) -> Result<Prediction> {
    let cache = cnn_forward(params, matrix, false, None)?;
    let score = cache.proba();
    Ok(Prediction {
        label: u8::from(score >= 0.5),
        score,
    })
}

pub fn cnn_predict(params: &CnnParams, doc: &Document, table: &EmbeddingTable) -> Result<Prediction> {
    cnn_predict_matrix(params, &embed_pad(doc, table, params.pad_len()))
}

pub fn cnn_predict_corpus(params: &CnnParams, corpus: &Corpus, table: &EmbeddingTable) -> Result<Vec<Prediction>> {
    corpus
        .documents()
        .par_iter()
        .map(|d| cnn_predict(params, d, table))
        .collect()
}

/// Gradient contributions of one training example. Conv gradients are kept
/// sparse: each active filter touches only its argmax window.
struct ExampleGrad {
    /// (layer, filter, window start, dL/dz) for filters whose argmax is active.
    conv: Vec<(usize, usize, usize, f64)>,
    dense_input: Vec<f64>,
    dlogits: [f64; NUM_CLASSES],
    loss: f64,
}

fn example_grad(params: &CnnParams, matrix: &DocMatrix, label: u8, mask: Option<&[f64]>) -> Result<ExampleGrad> {
    let cache = cnn_forward(params, matrix, mask.is_some(), mask)?;
    let p = softmax(&cache.logits);
    let y = usize::from(label);
    let mut dlogits = p;
    dlogits[y] -= 1.0;
    let loss = -p[y].max(1e-300).ln();

    let mut conv = Vec::new();
    let mut f = 0;
    for (li, (layer, lc)) in params.conv.iter().zip(&cache.layers).enumerate() {
        for k in 0..layer.filters() {
            let mut g: f64 = (0..NUM_CLASSES)
                .map(|c| params.dense_weight(f, c) * dlogits[c])
                .sum();
            if let Some(m) = mask {
                g *= m[f];
            }
            f += 1;
            let t = lc.argmax[k];
            if g != 0.0 && lc.pre_at(t, k) > 0.0 {
                conv.push((li, k, t, g));
            }
        }
    }
    Ok(ExampleGrad {
        conv,
        dense_input: cache.dense_input,
        dlogits,
        loss,
    })
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam => (vec![0.0; n], vec![0.0; n]),
        };
        OptimizerState { kind, lr, step: 0, m, v }
    }

    fn apply(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                let mut i = 0;
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        self.m[i] = b1 * self.m[i] + (1.0 - b1) * gi;
                        self.v[i] = b2 * self.v[i] + (1.0 - b2) * gi * gi;
                        *pi -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                        i += 1;
                    }
                }
            }
        }
    }
}

fn param_slices(params: &mut CnnParams) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for layer in &mut params.conv {
        out.push(&mut layer.weights);
        out.push(&mut layer.biases);
    }
    out.push(&mut params.dense_weights);
    out.push(&mut params.dense_biases);
    out
}

/// Mean training loss per epoch, returned alongside the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch training against the documents' black-box predicted labels.
pub fn cnn_train(config: &CnnConfig, corpus: &Corpus, table: &EmbeddingTable) -> Result<CnnParams> {
    cnn_train_with_report(config, corpus, table).map(|(p, _)| p)
}

pub fn cnn_train_with_report(
    config: &CnnConfig,
    corpus: &Corpus,
    table: &EmbeddingTable,
) -> Result<(CnnParams, TrainReport)> {
    if table.dim() != config.dim {
        return Err(Error::Shape(format!(
            "embedding dimension {} but cnn.dim is {}",
            table.dim(),
            config.dim
        )));
    }
    let labels: Vec<u8> = corpus
        .documents()
        .iter()
        .map(|d| {
            d.predicted_label().ok_or_else(|| {
                Error::invalid(format!(
                    "document {:?} has no black-box predicted label",
                    d.id
                ))
            })
        })
        .collect::<Result<_>>()?;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }

    let mut params = CnnParams::init(config)?;
    let n_params: usize = param_slices(&mut params).iter().map(|s| s.len()).sum();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, n_params);
    // separate streams so the shuffle does not depend on the dropout draws
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0001);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0002);
    let total = config.total_filters();
    let d = config.dim;
    let docs = corpus.documents();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let masks: Vec<Option<Vec<f64>>> = batch
                .iter()
                .map(|_| (config.dropout_rate > 0.0).then(|| dropout_mask(&mut drop_rng, total, config.dropout_rate)))
                .collect();
            let results: Vec<(DocMatrix, ExampleGrad)> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&i, mask)| {
                    let m = embed_pad(&docs[i], table, config.pad_len);
                    let g = example_grad(&params, &m, labels[i], mask.as_deref())?;
                    Ok((m, g))
                })
                .collect::<Result<_>>()?;

            let mut grads: Vec<Vec<f64>> = Vec::with_capacity(params.conv.len() * 2 + 2);
            for layer in &params.conv {
                grads.push(vec![0.0; layer.weights.len()]);
                grads.push(vec![0.0; layer.biases.len()]);
            }
            let mut g_dense_w = vec![0.0; params.dense_weights.len()];
            let mut g_dense_b = vec![0.0; NUM_CLASSES];
            let scale = 1.0 / batch.len() as f64;
            for (m, eg) in &results {
                epoch_loss += eg.loss;
                for &(li, k, t, g) in &eg.conv {
                    let s = params.conv[li].size;
                    let window = &m.data()[t * d..(t + s) * d];
                    let gw = &mut grads[2 * li][k * s * d..(k + 1) * s * d];
                    for (a, x) in gw.iter_mut().zip(window) {
                        *a += scale * g * x;
                    }
                    grads[2 * li + 1][k] += scale * g;
                }
                for (f, v) in eg.dense_input.iter().enumerate() {
                    for c in 0..NUM_CLASSES {
                        g_dense_w[f * NUM_CLASSES + c] += scale * v * eg.dlogits[c];
                    }
                }
                for c in 0..NUM_CLASSES {
                    g_dense_b[c] += scale * eg.dlogits[c];
                }
            }
            grads.push(g_dense_w);
            grads.push(g_dense_b);
            opt.apply(&mut param_slices(&mut params), &grads);
        }
        epoch_losses.push(epoch_loss / docs.len() as f64);
    }
    params.check_shapes()?;
    Ok((params, TrainReport { epoch_losses }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// L=3, D=2, one size-2 filter [[1,0],[0,1]], dense (1, −1).
    pub(crate) fn micro_net() -> CnnParams {
        let config = CnnConfig {
            dim: 2,
            pad_len: 3,
            filter_sizes: vec![2],
            filters_per_size: 1,
            dropout_rate: 0.0,
            ..CnnConfig::default()
        };
        CnnParams {
            format_version: CNN_FORMAT_VERSION,
            config,
            conv: vec![ConvLayer {
                size: 2,
                weights: vec![1.0, 0.0, 0.0, 1.0],
                biases: vec![0.0],
            }],
            dense_weights: vec![1.0, -1.0],
            dense_biases: [0.0, 0.0],
        }
    }

    pub(crate) fn micro_input() -> DocMatrix {
        DocMatrix::from_rows(3, 2, vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn hand_computed_forward() {
        let c = cnn_forward(&micro_net(), &micro_input(), false, None).unwrap();
        assert_eq!(c.layers[0].pre, [3.0, 0.0]);
        assert_eq!(c.pooled, [3.0]);
        assert_eq!(c.layers[0].argmax, [0]);
        assert_eq!(c.logits, [3.0, -3.0]);
    }

    #[test]
    fn zero_input_zero_logits() {
        let mut cfg = CnnConfig { dim: 3, pad_len: 5, filters_per_size: 4, ..CnnConfig::default() };
        cfg.filter_sizes = vec![1, 2];
        let p = CnnParams::init(&cfg).unwrap();
        let c = cnn_forward(&p, &DocMatrix::zeros(5, 3), false, None).unwrap();
        assert_eq!(c.logits, [0.0, 0.0]);
    }

    #[test]
    fn argmax_ties_break_low() {
        let mut p = micro_net();
        p.conv[0].weights = vec![0.0, 0.0, 0.0, 0.0];
        p.conv[0].biases = vec![1.0];
        let c = cnn_forward(&p, &micro_input(), false, None).unwrap();
        assert_eq!(c.layers[0].argmax, [0]);
        let mut p = micro_net();
        p.conv[0].weights = vec![0.0, 1.0, 0.0, 0.0];
        let tied = DocMatrix::from_rows(3, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let c = cnn_forward(&p, &tied, false, None).unwrap();
        assert_eq!(c.layers[0].argmax, [0]);
    }

    #[test]
    fn shape_mismatch_errors() {
        let bad = DocMatrix::zeros(4, 2);
        assert!(matches!(cnn_forward(&micro_net(), &bad, false, None), Err(Error::Shape(_))));
    }

    #[test]
    fn micro_net_gradient() {
        let p = micro_net();
        let c = cnn_forward(&p, &micro_input(), false, None).unwrap();
        let g = cnn_backward_gradients(&p, &c, 0);
        assert_eq!(g, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let g1 = cnn_backward_gradients(&p, &c, 1);
        assert_eq!(g1, [-1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn dead_relu_zero_gradient() {
        let mut p = micro_net();
        p.conv[0].biases = vec![-100.0];
        let c = cnn_forward(&p, &micro_input(), false, None).unwrap();
        assert!(cnn_backward_gradients(&p, &c, 0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = CnnConfig { dim: 4, pad_len: 8, filters_per_size: 5, seed: 3, ..CnnConfig::default() };
        let p = CnnParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DocMatrix::from_rows(8, 4, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = cnn_forward(&p, &m, false, None).unwrap();
        let b = cnn_forward(&p, &m, false, None).unwrap();
        assert_eq!(a, b);
        for lc in &a.layers {
            for k in 0..lc.max.len() {
                let best = (0..lc.positions).map(|t| lc.post_at(t, k)).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(lc.max[k], best);
                assert_eq!(lc.post_at(lc.argmax[k], k), lc.max[k]);
            }
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let p = micro_net();
        let mask = [0.0];
        let train = cnn_forward(&p, &micro_input(), true, Some(&mask)).unwrap();
        assert_eq!(train.logits, [0.0, 0.0]);
        let eval = cnn_forward(&p, &micro_input(), false, Some(&mask)).unwrap();
        assert_eq!(eval.logits, [3.0, -3.0]);
    }

    #[test]
    fn glorot_bounds() {
        let cfg = CnnConfig { dim: 10, pad_len: 20, filters_per_size: 8, ..CnnConfig::default() };
        let p = CnnParams::init(&cfg).unwrap();
        for layer in &p.conv {
            let limit = (6.0 / (layer.size * 10 + 8) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= limit));
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn invalid_config_listed() {
        let cfg = CnnConfig { filter_sizes: vec![0, 200], dropout_rate: 1.0, ..CnnConfig::default() };
        let issues = cfg.validate();
        assert_eq!(issues.len(), 3, "{issues:?}");
    }

    fn trigger_corpus() -> (Corpus, EmbeddingTable) {
        let mut t = EmbeddingTable::new(3);
        t.insert("awful", &[1.0, 0.2, -0.3]).unwrap();
        t.insert("lovely", &[-0.8, 0.5, 0.1]).unwrap();
        for (i, w) in ["the", "food", "was", "place", "here"].iter().enumerate() {
            let x = i as f64 * 0.1;
            t.insert(*w, &[0.05 - x * 0.1, x, 0.3 - x]).unwrap();
        }
        let texts = [
            ("the food was awful", 1),
            ("awful place", 1),
            ("the place here was awful", 1),
            ("awful awful food", 1),
            ("was the food awful here", 1),
            ("the food was lovely", 0),
            ("lovely place", 0),
            ("the place here was lovely", 0),
            ("lovely lovely food", 0),
            ("was the food lovely here", 0),
        ];
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, (text, y))| {
                let mut d = Document::new(format!("d{i}"), *text, None);
                d.prediction = Some(Prediction { label: *y, score: f64::from(*y) });
                d
            })
            .collect();
        (Corpus::new(docs).unwrap(), t)
    }

    fn toy_config() -> CnnConfig {
        CnnConfig {
            dim: 3,
            pad_len: 6,
            filter_sizes: vec![1, 2],
            filters_per_size: 4,
            dropout_rate: 0.0,
            seed: 11,
            epochs: 5,
            batch_size: 2,
            learning_rate: 0.05,
            optimizer: Optimizer::Adam,
        }
    }

    #[test]
    fn learns_trigger_tokens() {
        let (c, t) = trigger_corpus();
        let p = cnn_train(&toy_config(), &c, &t).unwrap();
        let preds = cnn_predict_corpus(&p, &c, &t).unwrap();
        for (d, pr) in c.documents().iter().zip(&preds) {
            assert_eq!(Some(pr.label), d.predicted_label(), "{}", d.raw_text);
        }
    }

    #[test]
    fn sgd_reduces_loss() {
        let (c, t) = trigger_corpus();
        let cfg = CnnConfig { optimizer: Optimizer::Sgd, learning_rate: 0.2, epochs: 30, dropout_rate: 0.2, ..toy_config() };
        let (_, report) = cnn_train_with_report(&cfg, &c, &t).unwrap();
        assert!(report.epoch_losses.last().unwrap() < &(0.5 * report.epoch_losses[0]), "{:?}", report.epoch_losses);
    }

    #[test]
    fn training_is_deterministic() {
        let (c, t) = trigger_corpus();
        let cfg = CnnConfig { dropout_rate: 0.4, ..toy_config() };
        assert_eq!(cnn_train(&cfg, &c, &t).unwrap(), cnn_train(&cfg, &c, &t).unwrap());
    }

    #[test]
    fn unlabeled_corpus_rejected() {
        let (_, t) = trigger_corpus();
        let c = Corpus::new(vec![Document::new("a", "awful", Some(1))]).unwrap();
        assert!(cnn_train(&toy_config(), &c, &t).is_err());
    }

    #[test]
    fn checkpoint_round_trip_exact() {
        let (c, t) = trigger_corpus();
        let p = cnn_train(&toy_config(), &c, &t).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        p.save(f.path()).unwrap();
        assert_eq!(CnnParams::load(f.path()).unwrap(), p);
    }
}
