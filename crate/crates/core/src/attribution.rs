//! Local token attributions.
//!
//! * `lrp`: layer-wise relevance propagation through the surrogate CNN with the
//!   ε-stabilized proportional rule on dense and conv layers and
//!   winner-takes-all through max pooling.
//! * `gbsa`: squared input gradients summed over each token's embedding cells.
//! * `ig`: integrated gradients from the all-zero matrix.
//! * `permutation`: leave-one-token-out probability deltas of the black box.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{permutation_importance, LinearModel};
use crate::cnn::{cnn_backward_gradients, cnn_forward, ActivationCache, CnnParams};
use crate::corpus::{Corpus, Document};
use crate::embeddings::{embed_pad, DocMatrix, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lrp,
    Gbsa,
    Ig,
    Permutation,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Permutation, Method::Lrp, Method::Gbsa, Method::Ig];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lrp => "lrp",
            Method::Gbsa => "gbsa",
            Method::Ig => "ig",
            Method::Permutation => "permutation",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrp" => Ok(Method::Lrp),
            "gbsa" => Ok(Method::Gbsa),
            "ig" => Ok(Method::Ig),
            "permutation" | "perm" => Ok(Method::Permutation),
            other => Err(Error::invalid(format!(
                "unknown explanation method {other:?} (expected lrp, gbsa, ig or permutation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub pos: usize,
    pub r: f64,
}

/// Per-token attributions for one document, method and target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub doc_id: String,
    pub method: Method,
    pub target_class: u8,
    /// The explained quantity: raw target logit for CNN methods, target-class
    /// probability for permutation.
    pub model_output: f64,
    pub scores: Vec<TokenScore>,
    /// Tokens past the padding length, which receive no relevance.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub truncated: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl RelevanceMap {
    pub fn total(&self) -> f64 {
        self.scores.iter().map(|s| s.r).sum()
    }

    pub fn relevances(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.r).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasPolicy {
    /// Biases enter the denominators but keep their share of relevance.
    #[default]
    Absorb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub bias_policy: BiasPolicy,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 0.01,
            bias_policy: BiasPolicy::Absorb,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self) -> Vec<String> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Vec::new()
        } else {
            vec![format!("lrp.epsilon must be positive, got {}", self.epsilon)]
        }
    }
}

/// `z + ε·sign(z)` with sign(0) = +1.
fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

/// ε-rule for one output neuron: `R_i = x_i·w_i / (z + ε·sign(z)) · R_out`.
pub fn epsilon_rule(inputs: &[f64], weights: &[f64], z: f64, relevance: f64, eps: f64) -> Vec<f64> {
    let den = stabilize(z, eps);
    if den == 0.0 {
        return vec![0.0; inputs.len()];
    }
    let scale = relevance / den;
    inputs.iter().zip(weights).map(|(x, w)| x * w * scale).collect()
}

fn check_cache(params: &CnnParams, cache: &ActivationCache, target_class: usize) -> Result<()> {
    if target_class > 1 {
        return Err(Error::invalid(format!("target class {target_class} is not 0 or 1")));
    }
    if cache.layers.len() != params.conv.len()
        || cache.pooled.len() != params.total_filters()
        || cache.input.len() != params.pad_len()
        || cache.input.dim() != params.dim()
        || cache
            .layers
            .iter()
            .zip(&params.conv)
            .any(|(lc, l)| lc.size != l.size || lc.max.len() != l.filters())
    {
        return Err(Error::Shape("activation cache does not match network parameters".into()));
    }
    Ok(())
}

/// Relevance of every input cell (L×D, row-major) for `logit[target_class]`.
pub fn lrp_cells(params: &CnnParams, cache: &ActivationCache, target_class: usize, config: &LrpConfig) -> Result<Vec<f64>> {
    check_cache(params, cache, target_class)?;
    let d = params.dim();
    let eps = config.epsilon;
    let out = cache.logits[target_class];

    // dense layer: only the target logit carries relevance
    let weights: Vec<f64> = (0..params.total_filters())
        .map(|f| params.dense_weight(f, target_class))
        .collect();
    let pooled_rel = epsilon_rule(&cache.dense_input, &weights, out, out, eps);

    let x = cache.input.data();
    let mut cells = vec![0.0; x.len()];
    let mut f = 0;
    for (layer, lc) in params.conv.iter().zip(&cache.layers) {
        let s = layer.size;
        for k in 0..layer.filters() {
            let r = pooled_rel[f];
            f += 1;
            if r == 0.0 {
                continue;
            }
            // winner takes all: the whole share goes to the argmax window
            let t = lc.argmax[k];
            let window = &x[t * d..(t + s) * d];
            let rel = epsilon_rule(window, layer.filter(k, d), lc.pre_at(t, k), r, eps);
            for (c, v) in cells[t * d..(t + s) * d].iter_mut().zip(rel) {
                *c += v;
            }
        }
    }
    Ok(cells)
}

/// Sums cell values per real token row.
fn pool_rows(matrix: &DocMatrix, cells: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let d = matrix.dim();
    (0..matrix.len())
        .filter(|&r| matrix.mask()[r])
        .map(|r| cells[r * d..(r + 1) * d].iter().map(|&v| f(v)).sum())
        .collect()
}

fn build_map(doc: &Document, method: Method, target_class: usize, model_output: f64, matrix: &DocMatrix, per_row: Vec<f64>) -> RelevanceMap {
    let scores = (0..matrix.len())
        .filter(|&r| matrix.mask()[r])
        .zip(per_row)
        .map(|(r, rel)| TokenScore {
            token: doc.tokens[matrix.token_index(r).expect("masked row is a token")].clone(),
            pos: r,
            r: rel,
        })
        .collect();
    RelevanceMap {
        doc_id: doc.id.clone(),
        method,
        target_class: target_class as u8,
        model_output,
        scores,
        truncated: matrix.truncated,
    }
}

pub fn lrp_explain(
    params: &CnnParams,
    cache: &ActivationCache,
    doc: &Document,
    target_class: usize,
    config: &LrpConfig,
) -> Result<RelevanceMap> {
    let cells = lrp_cells(params, cache, target_class, config)?;
    let per_row = pool_rows(&cache.input, &cells, |v| v);
    Ok(build_map(doc, Method::Lrp, target_class, cache.logits[target_class], &cache.input, per_row))
}

/// Σ_d g_d² per real token row of a gradient matrix.
pub fn gbsa_from_gradient(matrix: &DocMatrix, gradient: &[f64]) -> Vec<f64> {
    pool_rows(matrix, gradient, |g| g * g)
}

pub fn gbsa_explain(params: &CnnParams, cache: &ActivationCache, doc: &Document, target_class: usize) -> Result<RelevanceMap> {
    check_cache(params, cache, target_class)?;
    let grad = cnn_backward_gradients(params, cache, target_class);
    let per_row = gbsa_from_gradient(&cache.input, &grad);
    Ok(build_map(doc, Method::Gbsa, target_class, cache.logits[target_class], &cache.input, per_row))
}

/// Integrated gradients per cell, midpoint rule with `steps` points on the
/// straight line from the zero matrix.
pub fn ig_cells(params: &CnnParams, matrix: &DocMatrix, target_class: usize, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    let mut avg = vec![0.0; matrix.data().len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        let cache = cnn_forward(params, &matrix.scaled(alpha), false, None)?;
        for (a, g) in avg.iter_mut().zip(cnn_backward_gradients(params, &cache, target_class)) {
            *a += g;
        }
    }
    let inv = 1.0 / steps as f64;
    Ok(avg.iter().zip(matrix.data()).map(|(g, x)| x * g * inv).collect())
}

pub fn ig_explain(params: &CnnParams, matrix: &DocMatrix, doc: &Document, target_class: usize, steps: usize) -> Result<RelevanceMap> {
    if target_class > 1 {
        return Err(Error::invalid(format!("target class {target_class} is not 0 or 1")));
    }
    let cells = ig_cells(params, matrix, target_class, steps)?;
    let out = cnn_forward(params, matrix, false, None)?.logits[target_class];
    let per_row = pool_rows(matrix, &cells, |v| v);
    Ok(build_map(doc, Method::Ig, target_class, out, matrix, per_row))
}

/// Forward-difference gradient `(F(x + h·e) − F(x)) / h` of every cell.
pub fn fd_gradient(params: &CnnParams, matrix: &DocMatrix, target_class: usize, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let base = cnn_forward(params, matrix, false, None)?.logits[target_class];
    let mut shifted = matrix.clone();
    (0..matrix.data().len())
        .map(|i| {
            let orig = shifted.data()[i];
            shifted.data_mut()[i] = orig + h;
            let v = cnn_forward(params, &shifted, false, None)?.logits[target_class];
            shifted.data_mut()[i] = orig;
            Ok((v - base) / h)
        })
        .collect()
}

pub fn permutation_explain(model: &LinearModel, doc: &Document, table: &EmbeddingTable, target_class: usize) -> RelevanceMap {
    let p1 = model.proba_tokens(&doc.tokens, table);
    let sign = if target_class == 1 { 1.0 } else { -1.0 };
    let scores = permutation_importance(model, doc, table)
        .into_iter()
        .map(|d| TokenScore {
            token: d.token,
            pos: d.position,
            r: sign * d.delta,
        })
        .collect();
    RelevanceMap {
        doc_id: doc.id.clone(),
        method: Method::Permutation,
        target_class: target_class as u8,
        model_output: if target_class == 1 { p1 } else { 1.0 - p1 },
        scores,
        truncated: 0,
    }
}

/// The models an explanation can run against.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelBundle<'a> {
    pub blackbox: Option<&'a LinearModel>,
    pub surrogate: Option<&'a CnnParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub target_class: u8,
    /// Only explain documents the black box predicts as class 1.
    pub positive_only: bool,
    pub lrp: LrpConfig,
    pub ig_steps: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            target_class: 1,
            positive_only: true,
            lrp: LrpConfig::default(),
            ig_steps: 64,
        }
    }
}

pub fn explain_document(method: Method, models: ModelBundle<'_>, doc: &Document, table: &EmbeddingTable, config: &ExplainConfig) -> Result<RelevanceMap> {
    let target = usize::from(config.target_class);
    if method == Method::Permutation {
        let model = models
            .blackbox
            .ok_or_else(|| Error::invalid("permutation importance needs the black-box model"))?;
        return Ok(permutation_explain(model, doc, table, target));
    }
    let params = models
        .surrogate
        .ok_or_else(|| Error::invalid(format!("{method} needs the surrogate network")))?;
    let matrix = embed_pad(doc, table, params.pad_len());
    match method {
        Method::Lrp => {
            let cache = cnn_forward(params, &matrix, false, None)?;
            lrp_explain(params, &cache, doc, target, &config.lrp)
        }
        Method::Gbsa => {
            let cache = cnn_forward(params, &matrix, false, None)?;
            gbsa_explain(params, &cache, doc, target)
        }
        Method::Ig => ig_explain(params, &matrix, doc, target, config.ig_steps),
        Method::Permutation => unreachable!(),
    }
}

/// Explains every selected document; output order follows the corpus.
pub fn explain_corpus(method: Method, models: ModelBundle<'_>, corpus: &Corpus, table: &EmbeddingTable, config: &ExplainConfig) -> Result<Vec<RelevanceMap>> {
    let selected: Vec<&Document> = if config.positive_only {
        corpus
            .documents()
            .iter()
            .map(|d| {
                d.predicted_label()
                    .map(|l| (d, l))
                    .ok_or_else(|| Error::invalid(format!("document {:?} has no predicted label", d.id)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(_, l)| *l == 1)
            .map(|(d, _)| d)
            .collect()
    } else {
        corpus.documents().iter().collect()
    };
    selected
        .par_iter()
        .map(|d| explain_document(method, models, d, table, config))
        .collect()
}

pub fn write_relevance_jsonl(path: &Path, maps: &[RelevanceMap]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in maps {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_relevance_jsonl(path: &Path) -> Result<Vec<RelevanceMap>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut maps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        maps.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(maps)
}
