//! Documents, corpora, tokenization and sampling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A black-box prediction attached to a document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    /// Probability of class 1.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub label: Option<u8>,
    pub prediction: Option<Prediction>,
}

impl Document {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, label: Option<u8>) -> Self {
        let raw_text = raw_text.into();
        Document {
            id: id.into(),
            tokens: tokenize(&raw_text),
            raw_text,
            label,
            prediction: None,
        }
    }

    /// Builds a document whose token stream is given directly.
    pub fn from_tokens(id: impl Into<String>, tokens: Vec<String>, label: Option<u8>) -> Self {
        Document {
            id: id.into(),
            raw_text: tokens.join(" "),
            tokens,
            label,
            prediction: None,
        }
    }

    pub fn predicted_label(&self) -> Option<u8> {
        self.prediction.map(|p| p.label)
    }

    pub fn predicted_score(&self) -> Option<f64> {
        self.prediction.map(|p| p.score)
    }
}

/// Lowercases and splits on every character outside `[a-z0-9']`, dropping empty pieces.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    let lowered = raw_text.to_lowercase();
    lowered
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Maps a 1–5 star rating onto the binary scheme: 1–2 bad (1), 4–5 good (0), 3 dropped.
pub fn map_star_labels(star: i64) -> Result<Option<u8>> {
    match star {
        1 | 2 => Ok(Some(1)),
        3 => Ok(None),
        4 | 5 => Ok(Some(0)),
        other => Err(Error::invalid(format!("star rating {other} outside 1..=5"))),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    class_counts: BTreeMap<u8, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        let mut class_counts = BTreeMap::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::invalid(format!("duplicate document id {:?}", doc.id)));
            }
            if let Some(label) = doc.label {
                if label > 1 {
                    return Err(Error::invalid(format!(
                        "document {:?} has label {label}, expected 0 or 1",
                        doc.id
                    )));
                }
                *class_counts.entry(label).or_insert(0) += 1;
            }
        }
        Ok(Corpus {
            documents,
            class_counts,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn class_counts(&self) -> &BTreeMap<u8, usize> {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn index_by_id(&self) -> HashMap<&str, &Document> {
        self.documents.iter().map(|d| (d.id.as_str(), d)).collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.documents.iter().all(|d| d.label.is_some())
    }

    pub fn labels(&self) -> Option<Vec<u8>> {
        self.documents.iter().map(|d| d.label).collect()
    }

    /// A new snapshot with one prediction per document, in document order.
    pub fn with_predictions(&self, predictions: &[Prediction]) -> Result<Corpus> {
        if predictions.len() != self.documents.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} documents",
                predictions.len(),
                self.documents.len()
            )));
        }
        let documents = self
            .documents
            .iter()
            .zip(predictions)
            .map(|(d, p)| Document {
                prediction: Some(*p),
                ..d.clone()
            })
            .collect();
        Ok(Corpus {
            documents,
            class_counts: self.class_counts.clone(),
        })
    }

    /// Concatenates two corpora; ids must stay unique.
    pub fn concat(&self, other: &Corpus) -> Result<Corpus> {
        let docs = self
            .documents
            .iter()
            .chain(other.documents.iter())
            .cloned()
            .collect();
        Corpus::new(docs)
    }

    pub fn filter<F: Fn(&Document) -> bool>(&self, keep: F) -> Corpus {
        let docs: Vec<Document> = self.documents.iter().filter(|d| keep(d)).cloned().collect();
        Corpus::new(docs).expect("subset of a valid corpus is valid")
    }
}

/// Token → (id, frequency), with ids assigned in order of first occurrence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<(String, usize)>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build(corpus: &Corpus) -> Self {
        let mut vocab = Vocabulary::default();
        for tok in corpus.documents.iter().flat_map(|d| d.tokens.iter()) {
            match vocab.index.get(tok) {
                Some(&id) => vocab.tokens[id].1 += 1,
                None => {
                    vocab.index.insert(tok.clone(), vocab.tokens.len());
                    vocab.tokens.push((tok.clone(), 1));
                }
            }
        }
        vocab
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn frequency(&self, token: &str) -> usize {
        self.id(token).map_or(0, |id| self.tokens[id].1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.tokens.iter().map(|(t, f)| (t.as_str(), *f))
    }

    /// Tokens seen at least `min_count` times, in id order.
    pub fn frequent(&self, min_count: usize) -> Vec<&str> {
        self.iter()
            .filter(|(_, f)| *f >= min_count)
            .map(|(t, _)| t)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(CorpusFormat::Csv),
            Some("jsonl") | Some("json") => Ok(CorpusFormat::Jsonl),
            _ => Err(Error::invalid(format!(
                "cannot infer corpus format of {}; expected .csv or .jsonl",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Read labels from a 1–5 `stars` column instead of `label`.
    pub star_labels: bool,
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    id: Option<String>,
    text: Option<String>,
    label: Option<serde_json::Value>,
    stars: Option<i64>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat, options: LoadOptions) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let docs = match format {
        CorpusFormat::Csv => read_csv(path, file, options)?,
        CorpusFormat::Jsonl => read_jsonl(path, file, options)?,
    };
    Corpus::new(docs)
}

fn parse_label(path: &Path, line: usize, raw: &str) -> Result<Option<u8>> {
    match raw.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(Error::parse(
            path,
            line,
            format!("label {other:?} is not 0 or 1"),
        )),
    }
}

fn star_label(path: &Path, line: usize, stars: i64) -> Result<Option<u8>> {
    map_star_labels(stars).map_err(|e| Error::parse(path, line, e.to_string()))
}

fn read_csv(path: &Path, file: File, options: LoadOptions) -> Result<Vec<Document>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = col("text")
        .ok_or_else(|| Error::parse(path, 1, "header has no `text` column"))?;
    let id_col = col("id");
    let label_col = col("label");
    let stars_col = col("stars");
    if options.star_labels && stars_col.is_none() {
        return Err(Error::parse(path, 1, "star labels requested but no `stars` column"));
    }

    let mut docs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // header is line 1
        let line = record
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(row + 2, |p| p.line() as usize);
        let record = record.map_err(|e| Error::parse(path, row + 2, e.to_string()))?;
        let text = record
            .get(text_col)
            .ok_or_else(|| Error::parse(path, line, "missing text field"))?;
        let label = if options.star_labels {
            let raw = record.get(stars_col.unwrap()).unwrap_or("").trim();
            let stars: i64 = raw
                .parse()
                .map_err(|_| Error::parse(path, line, format!("stars {raw:?} is not an integer")))?;
            match star_label(path, line, stars)? {
                Some(l) => Some(l),
                None => continue,
            }
        } else {
            match label_col.and_then(|c| record.get(c)) {
                Some(raw) => parse_label(path, line, raw)?,
                None => None,
            }
        };
        let id = match id_col.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            Some(id) => id.to_string(),
            None => default_id(row),
        };
        docs.push(Document::new(id, text, label));
    }
    Ok(docs)
}

fn read_jsonl(path: &Path, file: File, options: LoadOptions) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut row = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let text = rec
            .text
            .ok_or_else(|| Error::parse(path, lineno, "record has no \"text\" field"))?;
        let label = if options.star_labels {
            let stars = rec
                .stars
                .ok_or_else(|| Error::parse(path, lineno, "record has no \"stars\" field"))?;
            match star_label(path, lineno, stars)? {
                Some(l) => Some(l),
                None => {
                    row += 1;
                    continue;
                }
            }
        } else {
            match rec.label {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::Number(n)) => parse_label(path, lineno, &n.to_string())?,
                Some(serde_json::Value::String(s)) => parse_label(path, lineno, &s)?,
                Some(other) => {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("label {other} is not 0 or 1"),
                    ))
                }
            }
        };
        let id = rec.id.unwrap_or_else(|| default_id(row));
        docs.push(Document::new(id, text, label));
        row += 1;
    }
    Ok(docs)
}

fn default_id(row: usize) -> String {
    format!("doc-{row}")
}

/// Writes `id,text,label` records in the same formats `load_corpus` reads.
pub fn write_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["id", "text", "label"])?;
            for d in corpus.documents() {
                let label = d.label.map(|l| l.to_string()).unwrap_or_default();
                w.write_record([d.id.as_str(), d.raw_text.as_str(), label.as_str()])?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        CorpusFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for d in corpus.documents() {
                let rec = serde_json::json!({ "id": d.id, "text": d.raw_text, "label": d.label });
                writeln!(w, "{rec}").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Draws exactly `n / classes` documents from every label class.
pub fn stratified_sample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    if !corpus.is_fully_labeled() {
        return Err(Error::invalid("stratified sampling needs every document labeled"));
    }
    let classes = corpus.class_counts.len();
    if classes == 0 {
        return Err(Error::invalid("cannot sample from an empty corpus"));
    }
    if !n.is_multiple_of(classes) {
        return Err(Error::invalid(format!(
            "sample size {n} is not divisible by the {classes} label classes"
        )));
    }
    let per_class = n / classes;
    for (&label, &count) in &corpus.class_counts {
        if count < per_class {
            return Err(Error::invalid(format!(
                "class {label} has {count} documents, {per_class} needed"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for &label in corpus.class_counts.keys() {
        let mut idx: Vec<usize> = corpus
            .documents
            .iter()
            .enumerate()
            .filter(|(_, d)| d.label == Some(label))
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..per_class]);
    }
    chosen.sort_unstable();
    Corpus::new(chosen.into_iter().map(|i| corpus.documents[i].clone()).collect())
}
