//! Seeded synthetic review corpus with planted sentiment triggers, negation
//! confounders and a matching low-dimensional embedding table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Corpus, CorpusFormat, Document};
use crate::embeddings::{write_embeddings, EmbeddingTable};
use crate::error::{Error, Result};

pub const BAD_TRIGGERS: [&str; 10] = [
    "mediocre", "bland", "rude", "overpriced", "stale", "greasy", "dirty", "slow", "worst", "disappointing",
];
pub const GOOD_TRIGGERS: [&str; 10] = [
    "delicious", "friendly", "fresh", "amazing", "excellent", "tasty", "perfect", "wonderful", "attentive", "best",
];
pub const NEGATIONS: [&str; 2] = ["not", "never"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub dim: usize,
    /// Tokens that mark class 1 (bad reviews).
    pub bad_triggers: Vec<String>,
    pub good_triggers: Vec<String>,
    pub negation_words: Vec<String>,
    /// Weakly polarized pseudo-words per polarity.
    pub n_mild: usize,
    pub n_neutral: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a document carries triggers of its own class.
    pub trigger_rate: f64,
    /// Share of filler slots taken by mild words.
    pub mild_rate: f64,
    /// Probability that a mild word agrees with the document class.
    pub mild_agreement: f64,
    /// Probability of a negated opposite-class trigger ("not bland" in class 0).
    pub negation_rate: f64,
    /// Standard deviation of the per-dimension embedding noise.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_train: 10_000,
            n_eval: 20_000,
            dim: 16,
            bad_triggers: BAD_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            good_triggers: GOOD_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            negation_words: NEGATIONS.iter().map(|s| s.to_string()).collect(),
            n_mild: 400,
            n_neutral: 1200,
            min_len: 8,
            max_len: 30,
            trigger_rate: 0.7,
            mild_rate: 0.35,
            mild_agreement: 0.75,
            negation_rate: 0.1,
            noise: 0.25,
        }
    }
}

fn is_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase())
}

impl SyntheticSpec {
    /// Every problem with the spec, empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.dim == 0 {
            issues.push("synth.dim must be positive".to_string());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            issues.push(format!(
                "synth document length range {}..={} is empty or starts at 0",
                self.min_len, self.max_len
            ));
        }
        for (name, v) in [
            ("trigger_rate", self.trigger_rate),
            ("mild_rate", self.mild_rate),
            ("mild_agreement", self.mild_agreement),
            ("negation_rate", self.negation_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                issues.push(format!("synth.{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            issues.push(format!("synth.noise = {} must be a finite non-negative number", self.noise));
        }
        if self.bad_triggers.is_empty() || self.good_triggers.is_empty() {
            issues.push("synth trigger lists must not be empty".to_string());
        }
        if self.negation_rate > 0.0 && self.negation_words.is_empty() {
            issues.push("synth.negation_rate > 0 needs negation words".to_string());
        }
        let mut seen = BTreeSet::new();
        for w in self.bad_triggers.iter().chain(&self.good_triggers).chain(&self.negation_words) {
            if !is_word(w) {
                issues.push(format!("synth word {w:?} must be lowercase ASCII letters"));
            }
            if !seen.insert(w.as_str()) {
                issues.push(format!("synth word {w:?} appears in more than one list"));
            }
        }
        if self.n_neutral == 0 && self.n_mild == 0 {
            issues.push("synth needs filler words (n_mild or n_neutral)".to_string());
        }
        issues
    }
}

/// Role of each token and its sentiment value along the planted direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub bad_triggers: Vec<String>,
    pub good_triggers: Vec<String>,
    pub negation_words: Vec<String>,
    pub mild_bad: Vec<String>,
    pub mild_good: Vec<String>,
    pub neutral: Vec<String>,
    /// Positive values lean towards class 1.
    pub sentiment: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Corpus,
    pub eval: Corpus,
    pub embeddings: EmbeddingTable,
    pub lexicon: Lexicon,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kl"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=4);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn build_lexicon(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Lexicon {
    let mut taken: BTreeSet<String> = spec
        .bad_triggers
        .iter()
        .chain(&spec.good_triggers)
        .chain(&spec.negation_words)
        .cloned()
        .collect();
    let mild_bad = pseudo_words(rng, spec.n_mild, &mut taken);
    let mild_good = pseudo_words(rng, spec.n_mild, &mut taken);
    let neutral = pseudo_words(rng, spec.n_neutral, &mut taken);

    let mut sentiment = BTreeMap::new();
    for w in &spec.bad_triggers {
        sentiment.insert(w.clone(), 1.0);
    }
    for w in &spec.good_triggers {
        sentiment.insert(w.clone(), -1.0);
    }
    for w in spec.negation_words.iter().chain(&neutral) {
        sentiment.insert(w.clone(), 0.0);
    }
    for w in &mild_bad {
        sentiment.insert(w.clone(), round6(rng.random_range(0.1..0.4)));
    }
    for w in &mild_good {
        sentiment.insert(w.clone(), -round6(rng.random_range(0.1..0.4)));
    }
    Lexicon {
        bad_triggers: spec.bad_triggers.clone(),
        good_triggers: spec.good_triggers.clone(),
        negation_words: spec.negation_words.clone(),
        mild_bad,
        mild_good,
        neutral,
        sentiment,
    }
}

/// Each token's vector is its sentiment times a fixed random unit direction,
/// plus Gaussian noise.
fn build_embeddings(spec: &SyntheticSpec, lexicon: &Lexicon, rng: &mut ChaCha8Rng) -> Result<EmbeddingTable> {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut direction: Vec<f64> = (0..spec.dim).map(|_| std_normal.sample(rng)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|x| *x /= norm);

    let mut table = EmbeddingTable::new(spec.dim);
    let mut v = vec![0.0; spec.dim];
    for (token, &s) in &lexicon.sentiment {
        for (x, u) in v.iter_mut().zip(&direction) {
            *x = round6(s * u + spec.noise * std_normal.sample(rng));
        }
        table.insert(token.clone(), &v)?;
    }
    Ok(table)
}

fn generate_doc(spec: &SyntheticSpec, lexicon: &Lexicon, label: u8, rng: &mut ChaCha8Rng) -> Vec<String> {
    let (own, other) = if label == 1 {
        (&lexicon.bad_triggers, &lexicon.good_triggers)
    } else {
        (&lexicon.good_triggers, &lexicon.bad_triggers)
    };
    let (own_mild, other_mild) = if label == 1 {
        (&lexicon.mild_bad, &lexicon.mild_good)
    } else {
        (&lexicon.mild_good, &lexicon.mild_bad)
    };

    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut units: Vec<Vec<String>> = Vec::new();
    if rng.random_bool(spec.trigger_rate) {
        let k = if rng.random_bool(0.6) { 1 } else { 2 };
        for _ in 0..k {
            units.push(vec![own.choose(rng).unwrap().clone()]);
        }
    }
    if rng.random_bool(spec.negation_rate) {
        let neg = spec.negation_words.choose(rng).unwrap().clone();
        units.push(vec![neg, other.choose(rng).unwrap().clone()]);
    }
    let used: usize = units.iter().map(Vec::len).sum();
    for _ in used..len {
        let pool = if rng.random_bool(spec.mild_rate) {
            if rng.random_bool(spec.mild_agreement) {
                own_mild
            } else {
                other_mild
            }
        } else {
            &lexicon.neutral
        };
        let pool = if pool.is_empty() { &lexicon.neutral } else { pool };
        let pool = if pool.is_empty() { own_mild } else { pool };
        units.push(vec![pool.choose(rng).unwrap().clone()]);
    }
    units.shuffle(rng);
    units.into_iter().flatten().collect()
}

fn generate_split(spec: &SyntheticSpec, lexicon: &Lexicon, prefix: &str, n: usize, rng: &mut ChaCha8Rng) -> Result<Corpus> {
    let width = n.max(1).to_string().len();
    let docs = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let tokens = generate_doc(spec, lexicon, label, rng);
            Document::new(format!("{prefix}-{i:0width$}"), tokens.join(" "), Some(label))
        })
        .collect();
    Corpus::new(docs)
}

/// Balanced train and eval corpora with alternating labels, starting at class 0.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let issues = spec.validate();
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = build_lexicon(spec, &mut rng);
    let embeddings = build_embeddings(spec, &lexicon, &mut rng)?;
    let train = generate_split(spec, &lexicon, "train", spec.n_train, &mut rng)?;
    let eval = generate_split(spec, &lexicon, "eval", spec.n_eval, &mut rng)?;
    Ok(SyntheticData {
        train,
        eval,
        embeddings,
        lexicon,
    })
}

pub const TRAIN_FILE: &str = "train.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const LEXICON_FILE: &str = "lexicon.json";

/// Writes the corpora, embeddings and lexicon into `dir`.
pub fn write_synthetic(data: &SyntheticData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_corpus(&data.train, &dir.join(TRAIN_FILE), CorpusFormat::Csv)?;
    write_corpus(&data.eval, &dir.join(EVAL_FILE), CorpusFormat::Csv)?;
    write_embeddings(&data.embeddings, &dir.join(EMBEDDINGS_FILE))?;
    let path = dir.join(LEXICON_FILE);
    let json = serde_json::to_string_pretty(&data.lexicon)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_corpus, LoadOptions};
    use crate::embeddings::load_embeddings;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_train: 400,
            n_eval: 200,
            n_mild: 40,
            n_neutral: 100,
            negation_rate: 0.3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn two_docs() {
        let spec = SyntheticSpec { n_train: 2, n_eval: 0, ..small() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.train.len(), 2);
        assert_eq!(d.train.class_counts().values().copied().collect::<Vec<_>>(), [1, 1]);
        assert!(d.eval.is_empty());
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.train.documents(), b.train.documents());
        assert_eq!(a.lexicon, b.lexicon);
        let c = generate(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train.documents(), c.train.documents());
    }

    #[test]
    fn triggers_only_where_planted() {
        let spec = small();
        let d = generate(&spec).unwrap();
        let bad: BTreeSet<&str> = spec.bad_triggers.iter().map(String::as_str).collect();
        let good: BTreeSet<&str> = spec.good_triggers.iter().map(String::as_str).collect();
        let neg: BTreeSet<&str> = spec.negation_words.iter().map(String::as_str).collect();
        let mut negated = 0;
        for doc in d.train.documents().iter().chain(d.eval.documents()) {
            let foreign = if doc.label == Some(1) { &good } else { &bad };
            for (i, t) in doc.tokens.iter().enumerate() {
                if foreign.contains(t.as_str()) {
                    assert!(i > 0 && neg.contains(doc.tokens[i - 1].as_str()), "{:?}", doc.tokens);
                    negated += 1;
                }
            }
        }
        assert!(negated > 0);
    }

    #[test]
    fn lengths_and_vocabulary() {
        let spec = small();
        let d = generate(&spec).unwrap();
        for doc in d.train.documents() {
            assert!((spec.min_len..=spec.max_len + 1).contains(&doc.tokens.len()));
            for t in &doc.tokens {
                assert!(d.embeddings.contains(t), "{t}");
            }
        }
        assert_eq!(d.embeddings.len(), 20 + 2 + 80 + 100);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&small()).unwrap();
        write_synthetic(&d, dir.path()).unwrap();
        let train = load_corpus(&dir.path().join(TRAIN_FILE), CorpusFormat::Csv, LoadOptions::default()).unwrap();
        assert_eq!(train.documents(), d.train.documents());
        let table = load_embeddings(&dir.path().join(EMBEDDINGS_FILE), Some(16)).unwrap();
        for (t, v) in d.embeddings.iter() {
            assert_eq!(table.get(t).unwrap(), v);
        }
    }

    #[test]
    fn validation_lists_everything() {
        let spec = SyntheticSpec {
            dim: 0,
            negation_rate: 1.5,
            good_triggers: vec!["bland".into()],
            ..small()
        };
        let issues = spec.validate();
        assert_eq!(issues.len(), 3, "{issues:?}");
        assert!(generate(&spec).unwrap_err().is_validation());
    }
}
