//! Pre-trained word vectors, averaged document features and padded input matrices.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};

/// Token → D-dimensional vector. Absent tokens resolve to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    zero: Vec<f64>,
    /// Duplicate entries skipped while loading.
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            zero: vec![0.0; dim],
            duplicates: 0,
        }
    }

    /// Inserts a vector; returns false (and keeps the old one) when the token already exists.
    pub fn insert(&mut self, token: impl Into<String>, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector of length {} in a {}-dimensional table",
                vector.len(),
                self.dim
            )));
        }
        let token = token.into();
        if self.index.contains_key(&token) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// The stored vector, or the zero vector for out-of-vocabulary tokens.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.get(token).unwrap_or(&self.zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), &self.data[i * self.dim..(i + 1) * self.dim]))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let count = it.next()?.parse().ok()?;
    let dim = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((count, dim))
}

/// Reads the `token v1 ... vD` text format, with an optional `COUNT DIM` first line.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table: Option<EmbeddingTable> = None;
    let mut header_dim = None;

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if table.is_none() && header_dim.is_none() {
            if let Some((_, dim)) = parse_header(&line) {
                if dim == 0 {
                    return Err(Error::parse(path, lineno, "header declares dimension 0"));
                }
                header_dim = Some(dim);
                continue;
            }
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-blank line has a field");
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, lineno, format!("bad number: {e}")))?;

        let table = table.get_or_insert_with(|| {
            EmbeddingTable::new(header_dim.unwrap_or(values.len().max(1)))
        });
        if values.len() != table.dim() {
            return Err(Error::parse(
                path,
                lineno,
                format!(
                    "vector for {token:?} has {} values, expected {}",
                    values.len(),
                    table.dim()
                ),
            ));
        }
        table.insert(token, &values)?;
    }

    let table = table.ok_or_else(|| Error::parse(path, 1, "embedding file has no vectors"))?;
    if let Some(expected) = expected_dim {
        if expected != table.dim() {
            return Err(Error::invalid(format!(
                "{}: embedding dimension {} but {expected} expected",
                path.display(),
                table.dim()
            )));
        }
    }
    Ok(table)
}

/// Writes the table with a `COUNT DIM` header line.
pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", table.len(), table.dim()).map_err(io)?;
    for (token, v) in table.iter() {
        write!(w, "{token}").map_err(io)?;
        for x in v {
            write!(w, " {x}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Whether out-of-vocabulary tokens count in the averaging denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovMode {
    #[default]
    Include,
    Skip,
}

/// Element-wise mean of the token vectors. Empty input gives the zero vector.
pub fn featurize_tokens<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable, oov: OovMode) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in tokens {
        match table.get(t.as_ref()) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                n += 1;
            }
            None if oov == OovMode::Include => n += 1,
            None => {}
        }
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
    }
    sum
}

pub fn featurize_avg(doc: &Document, table: &EmbeddingTable, oov: OovMode) -> Vec<f64> {
    featurize_tokens(&doc.tokens, table, oov)
}

/// A fixed-length L×D input for the convolutional network.
#[derive(Debug, Clone, PartialEq)]
pub struct DocMatrix {
    len: usize,
    dim: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
    /// Tokens beyond the padding length that were cut off.
    pub truncated: usize,
}

impl DocMatrix {
    pub fn zeros(len: usize, dim: usize) -> Self {
        DocMatrix {
            len,
            dim,
            data: vec![0.0; len * dim],
            mask: vec![false; len],
            truncated: 0,
        }
    }

    /// Wraps raw row-major values; every row is marked as a real token.
    pub fn from_rows(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * dim {
            return Err(Error::Shape(format!(
                "{} values for a {len}×{dim} matrix",
                data.len()
            )));
        }
        Ok(DocMatrix {
            len,
            dim,
            data,
            mask: vec![true; len],
            truncated: 0,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len {
            return Err(Error::Shape(format!("mask of {} for {} rows", mask.len(), self.len)));
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of real (unpadded) token rows.
    pub fn real_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Token position held by row `r`, if the row is a real token.
    pub fn token_index(&self, r: usize) -> Option<usize> {
        self.mask.get(r).copied().unwrap_or(false).then_some(r)
    }

    /// Same mask, values replaced by `scale * self`.
    pub fn scaled(&self, scale: f64) -> DocMatrix {
        DocMatrix {
            data: self.data.iter().map(|x| x * scale).collect(),
            ..self.clone()
        }
    }
}

/// Embeds the first `len` tokens row-wise; remaining rows are zero padding.
pub fn embed_pad(doc: &Document, table: &EmbeddingTable, len: usize) -> DocMatrix {
    embed_tokens(&doc.tokens, table, len)
}

pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable, len: usize) -> DocMatrix {
    assert!(len >= 1, "padding length must be at least 1");
    let dim = table.dim();
    let mut m = DocMatrix::zeros(len, dim);
    for (r, tok) in tokens.iter().take(len).enumerate() {
        m.data[r * dim..(r + 1) * dim].copy_from_slice(table.lookup(tok.as_ref()));
        m.mask[r] = true;
    }
    m.truncated = tokens.len().saturating_sub(len);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocOov {
    pub doc_id: String,
    pub oov_tokens: usize,
    pub total_tokens: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OovReport {
    pub documents: Vec<DocOov>,
    /// (token, occurrences), most frequent first.
    pub oov_frequencies: Vec<(String, usize)>,
    pub corpus_rate: f64,
}

pub fn oov_report(corpus: &Corpus, table: &EmbeddingTable) -> OovReport {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    let mut documents = Vec::with_capacity(corpus.len());
    let (mut oov_all, mut total_all) = (0usize, 0usize);
    for doc in corpus.documents() {
        let mut oov = 0;
        for t in &doc.tokens {
            if !table.contains(t) {
                oov += 1;
                *freq.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let total = doc.tokens.len();
        oov_all += oov;
        total_all += total;
        documents.push(DocOov {
            doc_id: doc.id.clone(),
            oov_tokens: oov,
            total_tokens: total,
            rate: if total == 0 { 0.0 } else { oov as f64 / total as f64 },
        });
    }
    let mut oov_frequencies: Vec<(String, usize)> =
        freq.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    oov_frequencies.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    OovReport {
        documents,
        oov_frequencies,
        corpus_rate: if total_all == 0 {
            0.0
        } else {
            oov_all as f64 / total_all as f64
        },
    }
}
