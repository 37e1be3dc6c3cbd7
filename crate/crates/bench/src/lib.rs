//! Shared fixtures for the kernel benchmarks.

use lrptext::blackbox::{predict_corpus, train_linear, LinearModel, LinearTrainConfig};
use lrptext::cnn::{CnnConfig, CnnParams};
use lrptext::embeddings::{embed_pad, DocMatrix};
use lrptext::pipeline::desk_cnn_config;
use lrptext::synth::{generate, SyntheticData, SyntheticSpec};
use lrptext::{Corpus, Document, EmbeddingTable};

/// A small synthetic corpus with an untrained desk-sized CNN and a fitted black box.
pub struct Fixture {
    pub data: SyntheticData,
    pub config: CnnConfig,
    pub params: CnnParams,
    pub blackbox: LinearModel,
    /// Training split carrying black-box predictions, as the surrogate sees it.
    pub labeled: Corpus,
}

impl Fixture {
    pub fn new(n_docs: usize) -> Self {
        let spec = SyntheticSpec {
            n_train: n_docs,
            n_eval: n_docs,
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).expect("valid synthetic spec");
        let config = desk_cnn_config();
        let params = CnnParams::init(&config).expect("valid cnn config");
        let blackbox = train_linear(&data.train, &data.embeddings, &LinearTrainConfig::default()).expect("trainable corpus");
        let labeled = data
            .train
            .with_predictions(&predict_corpus(&blackbox, &data.train, &data.embeddings))
            .expect("predictions cover the corpus");
        Fixture { data, config, params, blackbox, labeled }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.data.embeddings
    }

    /// The longest evaluation document.
    pub fn long_doc(&self) -> &Document {
        self.data
            .eval
            .documents()
            .iter()
            .max_by_key(|d| d.tokens.len())
            .expect("non-empty corpus")
    }

    pub fn matrix(&self, doc: &Document) -> DocMatrix {
        embed_pad(doc, self.table(), self.config.pad_len)
    }
}
