//! Explaining black-box text classifiers through a convolutional surrogate:
//! layer-wise relevance propagation, gradient sensitivity, integrated
//! gradients and permutation importance, aggregated into global reports.

pub mod analysis;
pub mod attribution;
pub mod blackbox;
pub mod cnn;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod reports;
pub mod synth;

pub use analysis::{
    aggregate_global, deletion_eval, ngram_scores, score_correlation, surrogate_fidelity, CorrelationMatrix,
    DeletionCurve, GlobalImportance, NgramReport, Split,
};
pub use attribution::{explain_corpus, explain_document, ExplainConfig, LrpConfig, Method, RelevanceMap, TokenScore};
pub use blackbox::{predict, predict_proba, train_linear, LinearModel, LinearTrainConfig, LossKind};
pub use cnn::{cnn_forward, cnn_predict, cnn_train, CnnConfig, CnnParams};
pub use corpus::{load_corpus, tokenize, Corpus, Document, Prediction, Vocabulary};
pub use embeddings::{load_embeddings, DocMatrix, EmbeddingTable};
pub use error::{Error, Result};
pub use metrics::{Confusion, ConfusionSummary};
pub use pipeline::{Pipeline, PipelineConfig};
pub use reports::{render_highlights, CaseSheet, HighlightDoc};
pub use synth::SyntheticSpec;
