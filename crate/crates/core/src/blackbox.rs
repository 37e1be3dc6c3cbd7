//! The classifier under explanation: a linear margin model over averaged
//! embeddings with a sigmoid probability output, and leave-one-token-out
//! permutation importance against it.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Prediction};
use crate::embeddings::{featurize_tokens, EmbeddingTable, OovMode};
use crate::error::{Error, Result};
use crate::metrics::{Confusion, ConfusionSummary};

pub const LINEAR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Logistic,
}

/// Sigmoid calibration `p = σ(A·m + B)` of a raw margin `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub format_version: u32,
    pub dim: usize,
    pub loss_kind: LossKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platt: Option<Platt>,
    #[serde(default)]
    pub oov_mode: OovMode,
}

/// Numerically stable logistic function, kept strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64, loss_kind: LossKind, platt: Option<Platt>) -> Self {
        LinearModel {
            format_version: LINEAR_FORMAT_VERSION,
            dim: weights.len(),
            loss_kind,
            weights,
            bias,
            platt,
            oov_mode: OovMode::Include,
        }
    }

    pub fn margin(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    pub fn proba_from_margin(&self, margin: f64) -> f64 {
        match self.platt {
            Some(Platt { a, b }) => sigmoid(a * margin + b),
            None => sigmoid(margin),
        }
    }

    pub fn proba_features(&self, features: &[f64]) -> f64 {
        self.proba_from_margin(self.margin(features))
    }

    pub fn proba_tokens<S: AsRef<str>>(&self, tokens: &[S], table: &EmbeddingTable) -> f64 {
        self.proba_features(&featurize_tokens(tokens, table, self.oov_mode))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: LinearModel = serde_json::from_str(&raw)?;
        if model.format_version != LINEAR_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                model.format_version
            )));
        }
        if model.weights.len() != model.dim {
            return Err(Error::Shape(format!(
                "checkpoint declares dim {} but has {} weights",
                model.dim,
                model.weights.len()
            )));
        }
        Ok(model)
    }
}

/// Probability of class 1; the predicted label is 1 iff it reaches 0.5.
pub fn predict_proba(model: &LinearModel, doc: &Document, table: &EmbeddingTable) -> f64 {
    model.proba_tokens(&doc.tokens, table)
}

pub fn predict(model: &LinearModel, doc: &Document, table: &EmbeddingTable) -> Prediction {
    let score = predict_proba(model, doc, table);
    Prediction {
        label: u8::from(score >= 0.5),
        score,
    }
}

pub fn predict_corpus(model: &LinearModel, corpus: &Corpus, table: &EmbeddingTable) -> Vec<Prediction> {
    use rayon::prelude::*;
    corpus
        .documents()
        .par_iter()
        .map(|d| predict(model, d, table))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrainConfig {
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    #[serde(default)]
    pub oov_mode: OovMode,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        LinearTrainConfig {
            loss_kind: LossKind::Logistic,
            epochs: 20,
            learning_rate: 0.1,
            l2: 1e-4,
            seed: 0,
            oov_mode: OovMode::Include,
        }
    }
}

impl LinearTrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.epochs == 0 {
            issues.push("blackbox.epochs must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            issues.push("blackbox.learning_rate must be positive".to_string());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            issues.push("blackbox.l2 must be non-negative".to_string());
        }
        issues
    }
}

/// Mean regularized training loss, used to monitor convergence.
pub fn training_loss(model: &LinearModel, features: &[Vec<f64>], labels: &[u8], l2: f64) -> f64 {
    let data: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let m = model.margin(x);
            match model.loss_kind {
                LossKind::Logistic => {
                    // log(1 + e^{-s m}) with s = ±1
                    let z = if y == 1 { m } else { -m };
                    softplus(-z)
                }
                LossKind::Hinge => {
                    let s = if y == 1 { 1.0 } else { -1.0 };
                    (1.0 - s * m).max(0.0)
                }
            }
        })
        .sum::<f64>()
        / features.len() as f64;
    data + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stochastic (sub)gradient descent over averaged-embedding features.
pub fn train_linear(corpus: &Corpus, table: &EmbeddingTable, config: &LinearTrainConfig) -> Result<LinearModel> {
    let issues = config.validate();
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    let labels = corpus
        .labels()
        .ok_or_else(|| Error::invalid("black-box training needs every document labeled"))?;
    if corpus.class_counts().len() < 2 {
        return Err(Error::invalid(
            "black-box training needs both classes present in the corpus",
        ));
    }
    let features: Vec<Vec<f64>> = corpus
        .documents()
        .iter()
        .map(|d| featurize_tokens(&d.tokens, table, config.oov_mode))
        .collect();
    let (model, _) = fit_linear(&features, &labels, config);
    Ok(model)
}

/// Core optimizer; also returns the training loss after each epoch.
pub fn fit_linear(features: &[Vec<f64>], labels: &[u8], config: &LinearTrainConfig) -> (LinearModel, Vec<f64>) {
    let dim = features.first().map_or(0, Vec::len);
    let mut model = LinearModel::new(vec![0.0; dim], 0.0, config.loss_kind, None);
    model.oov_mode = config.oov_mode;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &features[i];
            let m = model.margin(x);
            // derivative of the per-example loss w.r.t. the margin
            let g = match config.loss_kind {
                LossKind::Logistic => sigmoid(m) - f64::from(labels[i]),
                LossKind::Hinge => {
                    let s = if labels[i] == 1 { 1.0 } else { -1.0 };
                    if s * m < 1.0 {
                        -s
                    } else {
                        0.0
                    }
                }
            };
            for (w, xi) in model.weights.iter_mut().zip(x) {
                *w -= lr * (g * xi + config.l2 * *w);
            }
            model.bias -= lr * g;
        }
        history.push(training_loss(&model, features, labels, config.l2));
    }

    if config.loss_kind == LossKind::Hinge {
        let margins: Vec<f64> = features.iter().map(|x| model.margin(x)).collect();
        model.platt = Some(fit_platt(&margins, labels));
    }
    (model, history)
}

/// Fits `σ(A·m + B)` to the labels by Newton's method on the logistic loss,
/// using the smoothed targets (N₊+1)/(N₊+2) and 1/(N₋+2).
pub fn fit_platt(margins: &[f64], labels: &[u8]) -> Platt {
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y == 1 { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(&m, &t)| {
                let z = a * m + b;
                // -t log σ(z) - (1-t) log(1-σ(z)) = softplus(z) - t z
                softplus(z) - t * z
            })
            .sum()
    };

    let (mut a, mut b) = (1.0, -((n_neg + 1.0) / (n_pos + 1.0)).ln());
    let mut f = objective(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&m, &t) in margins.iter().zip(&targets) {
            let p = sigmoid(a * m + b);
            let d = p - t;
            let w = p * (1.0 - p);
            ga += d * m;
            gb += d;
            haa += w * m * m;
            hab += w * m;
            hbb += w;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = (-(hbb * ga - hab * gb) / det, -(-hab * ga + haa * gb) / det);
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < f + 1e-4 * step * (ga * da + gb * db) {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                return Platt { a, b };
            }
        }
    }
    Platt { a, b }
}

/// Change in target-class probability when one token occurrence is removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDelta {
    pub token: String,
    pub position: usize,
    pub delta: f64,
}

/// Removes each token occurrence in turn, re-averages over the rest and
/// records `p(doc) − p(doc without it)` for class 1.
pub fn permutation_importance(model: &LinearModel, doc: &Document, table: &EmbeddingTable) -> Vec<TokenDelta> {
    let full = model.proba_tokens(&doc.tokens, table);
    let mut rest: Vec<&str> = Vec::with_capacity(doc.tokens.len());
    doc.tokens
        .iter()
        .enumerate()
        .map(|(pos, token)| {
            rest.clear();
            rest.extend(
                doc.tokens
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != pos)
                    .map(|(_, t)| t.as_str()),
            );
            TokenDelta {
                token: token.clone(),
                position: pos,
                delta: full - model.proba_tokens(&rest, table),
            }
        })
        .collect()
}

pub fn eval_confusion(model: &LinearModel, corpus: &Corpus, table: &EmbeddingTable) -> Result<ConfusionSummary> {
    let actual = corpus
        .labels()
        .ok_or_else(|| Error::invalid("evaluation needs every document labeled"))?;
    let predicted: Vec<u8> = predict_corpus(model, corpus, table)
        .iter()
        .map(|p| p.label)
        .collect();
    Ok(Confusion::from_labels(&predicted, &actual)?.summary())
}
