//! Global explainability over a corpus: token and ngram importance,
//! token-deletion recall curves, score correlation, surrogate fidelity.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{Method, RelevanceMap};
use crate::blackbox::LinearModel;
use crate::corpus::{Corpus, Prediction};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{Confusion, ConfusionSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::invalid(format!("unknown split {other:?} (expected train or eval)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Every token occurrence counts once.
    #[default]
    PerOccurrence,
    /// Occurrences are first averaged within each document.
    PerDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub mean_relevance: f64,
    pub occurrence_count: usize,
    pub normalized_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub method: Method,
    pub target_class: u8,
    pub split: Option<Split>,
    pub min_count: usize,
    pub entries: BTreeMap<String, ImportanceEntry>,
}

impl GlobalImportance {
    pub fn label(&self) -> String {
        match self.split {
            Some(s) => format!("{}/{}", self.method, s),
            None => self.method.to_string(),
        }
    }

    /// Tokens by descending mean relevance; ties by token.
    pub fn ranked(&self) -> Vec<(&str, &ImportanceEntry)> {
        let mut v: Vec<(&str, &ImportanceEntry)> =
            self.entries.iter().map(|(t, e)| (t.as_str(), e)).collect();
        v.sort_by(|a, b| {
            b.1.mean_relevance
                .total_cmp(&a.1.mean_relevance)
                .then_with(|| a.0.cmp(b.0))
        });
        v
    }

    pub fn top(&self, n: usize) -> Vec<&str> {
        self.ranked().into_iter().take(n).map(|(t, _)| t).collect()
    }
}

fn normalize(sums: BTreeMap<String, (f64, usize)>, min_count: usize) -> BTreeMap<String, ImportanceEntry> {
    let kept: Vec<(String, f64, usize)> = sums
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_count && *n > 0)
        .map(|(t, (mean, n))| (t, mean, n))
        .collect();
    let max_abs = kept.iter().map(|(_, m, _)| m.abs()).fold(0.0, f64::max);
    kept.into_iter()
        .map(|(t, mean, n)| {
            let normalized_score = if max_abs > 0.0 { mean / max_abs } else { 0.0 };
            (
                t,
                ImportanceEntry {
                    mean_relevance: mean,
                    occurrence_count: n,
                    normalized_score,
                },
            )
        })
        .collect()
}

/// Mean relevance per token, dropping tokens seen fewer than `min_count` times,
/// normalized by the largest absolute mean.
pub fn aggregate_global(maps: &[RelevanceMap], min_count: usize, mode: AggregationMode) -> Result<GlobalImportance> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty list of relevance maps"))?;
    if let Some(m) = maps
        .iter()
        .find(|m| m.method != first.method || m.target_class != first.target_class)
    {
        return Err(Error::invalid(format!(
            "mixed relevance maps: {}/{} and {}/{}",
            first.method, first.target_class, m.method, m.target_class
        )));
    }

    // token → (sum, count)
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for map in maps {
        match mode {
            AggregationMode::PerOccurrence => {
                for s in &map.scores {
                    let e = acc.entry(s.token.clone()).or_insert((0.0, 0));
                    e.0 += s.r;
                    e.1 += 1;
                }
            }
            AggregationMode::PerDocument => {
                let mut local: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
                for s in &map.scores {
                    let e = local.entry(s.token.as_str()).or_insert((0.0, 0));
                    e.0 += s.r;
                    e.1 += 1;
                }
                for (t, (sum, n)) in local {
                    let e = acc.entry(t.to_string()).or_insert((0.0, 0));
                    e.0 += sum / n as f64;
                    e.1 += 1;
                }
            }
        }
    }
    let means = acc
        .into_iter()
        .map(|(t, (sum, n))| (t, (sum / n as f64, n)))
        .collect();
    Ok(GlobalImportance {
        method: first.method,
        target_class: first.target_class,
        split: None,
        min_count,
        entries: normalize(means, min_count),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramInstance {
    pub doc_id: String,
    pub joint_score: f64,
    pub predicted_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramEntry {
    pub mean_joint_score: f64,
    pub count: usize,
    pub instances: Vec<NgramInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramReport {
    pub n: usize,
    pub method: Method,
    pub min_count: usize,
    pub entries: BTreeMap<String, NgramEntry>,
}

impl NgramReport {
    pub fn ranked(&self) -> Vec<(&str, &NgramEntry)> {
        let mut v: Vec<(&str, &NgramEntry)> = self.entries.iter().map(|(k, e)| (k.as_str(), e)).collect();
        v.sort_by(|a, b| {
            b.1.mean_joint_score
                .total_cmp(&a.1.mean_joint_score)
                .then_with(|| a.0.cmp(b.0))
        });
        v
    }
}

/// Joint score of every contiguous ngram occurrence: the sum of its tokens' relevances.
pub fn ngram_scores(maps: &[RelevanceMap], corpus: &Corpus, n: usize, min_count: usize) -> Result<NgramReport> {
    if !(1..=3).contains(&n) {
        return Err(Error::invalid(format!("ngram length {n} outside 1..=3")));
    }
    let method = maps.first().map_or(Method::Lrp, |m| m.method);
    let index = corpus.index_by_id();
    let mut entries: BTreeMap<String, NgramEntry> = BTreeMap::new();
    for map in maps {
        let predicted_label = index.get(map.doc_id.as_str()).and_then(|d| d.predicted_label());
        for w in map.scores.windows(n) {
            if w.windows(2).any(|p| p[1].pos != p[0].pos + 1) {
                continue;
            }
            let key = w.iter().map(|s| s.token.as_str()).collect::<Vec<_>>().join(" ");
            let joint_score = w.iter().map(|s| s.r).sum();
            entries
                .entry(key)
                .or_insert_with(|| NgramEntry {
                    mean_joint_score: 0.0,
                    count: 0,
                    instances: Vec::new(),
                })
                .instances
                .push(NgramInstance {
                    doc_id: map.doc_id.clone(),
                    joint_score,
                    predicted_label,
                });
        }
    }
    entries.retain(|_, e| e.instances.len() >= min_count);
    for e in entries.values_mut() {
        e.count = e.instances.len();
        e.mean_joint_score = e.instances.iter().map(|i| i.joint_score).sum::<f64>() / e.count as f64;
    }
    Ok(NgramReport {
        n,
        method,
        min_count,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeletionPoint {
    pub n_removed: usize,
    pub recall: f64,
    pub recall_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    /// Ranking source: an explanation method name or `random`.
    pub method: String,
    pub split: Option<Split>,
    pub points: Vec<DeletionPoint>,
}

impl DeletionCurve {
    pub fn drop_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n_removed == n).map(|p| p.recall_drop)
    }
}

pub const DEFAULT_DELETION_STEPS: [usize; 7] = [0, 50, 100, 150, 200, 250, 300];

fn class1_recall(model: &LinearModel, docs: &[&[String]], table: &EmbeddingTable, removed: &std::collections::HashSet<&str>) -> f64 {
    let hits: usize = docs
        .par_iter()
        .map(|tokens| {
            let kept: Vec<&str> = tokens
                .iter()
                .map(String::as_str)
                .filter(|t| !removed.contains(t))
                .collect();
            usize::from(model.proba_tokens(&kept, table) >= 0.5)
        })
        .sum();
    hits as f64 / docs.len() as f64
}

/// Recall of the black box on class-1 documents after deleting every
/// occurrence of the first `n` ranked tokens, for each `n` in `steps`.
pub fn deletion_curve(
    model: &LinearModel,
    ranking: &[&str],
    corpus: &Corpus,
    table: &EmbeddingTable,
    steps: &[usize],
) -> Result<Vec<DeletionPoint>> {
    if let Some(&n) = steps.iter().find(|&&n| n > ranking.len()) {
        return Err(Error::invalid(format!(
            "cannot remove {n} tokens: only {} ranked tokens available",
            ranking.len()
        )));
    }
    let positives: Vec<&[String]> = corpus
        .documents()
        .iter()
        .map(|d| d.label.map(|l| (l, d.tokens.as_slice())))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::invalid("deletion evaluation needs a labeled corpus"))?
        .into_iter()
        .filter(|(l, _)| *l == 1)
        .map(|(_, t)| t)
        .collect();
    if positives.is_empty() {
        return Err(Error::invalid("deletion evaluation needs class-1 documents"));
    }
    let baseline = class1_recall(model, &positives, table, &Default::default());
    steps
        .iter()
        .map(|&n| {
            let removed = ranking[..n].iter().copied().collect();
            let recall = if n == 0 {
                baseline
            } else {
                class1_recall(model, &positives, table, &removed)
            };
            Ok(DeletionPoint {
                n_removed: n,
                recall,
                recall_drop: baseline - recall,
            })
        })
        .collect()
}

pub fn deletion_eval(
    model: &LinearModel,
    importance: &GlobalImportance,
    corpus: &Corpus,
    table: &EmbeddingTable,
    steps: &[usize],
) -> Result<DeletionCurve> {
    if importance.entries.is_empty() {
        return Err(Error::invalid("importance table is empty"));
    }
    let ranking = importance.top(importance.entries.len());
    Ok(DeletionCurve {
        method: importance.method.to_string(),
        split: importance.split,
        points: deletion_curve(model, &ranking, corpus, table, steps)?,
    })
}

/// Uniformly shuffled token list, used as the random-deletion baseline.
pub fn random_ranking<'a>(tokens: &[&'a str], seed: u64) -> Vec<&'a str> {
    let mut v = tokens.to_vec();
    v.sort_unstable();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pairwise correlation of normalized scores over shared tokens seen at least
/// `min_count` times in both tables.
pub fn score_correlation(importances: &[&GlobalImportance], min_count: usize, kind: CorrelationKind) -> Result<CorrelationMatrix> {
    if importances.is_empty() {
        return Err(Error::invalid("no importance tables to correlate"));
    }
    let k = importances.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let (a, b) = (importances[i], importances[j]);
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (token, ea) in &a.entries {
                if ea.occurrence_count < min_count {
                    continue;
                }
                if let Some(eb) = b.entries.get(token).filter(|e| e.occurrence_count >= min_count) {
                    xs.push(ea.normalized_score);
                    ys.push(eb.normalized_score);
                }
            }
            if xs.len() < 3 {
                return Err(Error::invalid(format!(
                    "{} and {} share {} tokens with at least {min_count} occurrences; 3 needed",
                    a.label(),
                    b.label(),
                    xs.len()
                )));
            }
            if kind == CorrelationKind::Spearman {
                xs = ranks(&xs);
                ys = ranks(&ys);
            }
            let r = pearson(&xs, &ys).ok_or_else(|| {
                Error::invalid(format!("{} or {} has constant scores", a.label(), b.label()))
            })?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels: importances.iter().map(|g| g.label()).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    /// Surrogate predictions scored against black-box labels.
    pub vs_blackbox: ConfusionSummary,
    /// Surrogate predictions scored against the true labels.
    pub vs_actual: ConfusionSummary,
}

pub fn surrogate_fidelity(surrogate: &[u8], blackbox: &[u8], actual: &[u8]) -> Result<Fidelity> {
    Ok(Fidelity {
        vs_blackbox: Confusion::from_labels(surrogate, blackbox)?.summary(),
        vs_actual: Confusion::from_labels(surrogate, actual)?.summary(),
    })
}

pub fn labels_of(predictions: &[Prediction]) -> Vec<u8> {
    predictions.iter().map(|p| p.label).collect()
}

/// Joins importance tables on token, for side-by-side top-token layouts.
pub fn side_by_side<'a>(primary: &'a GlobalImportance, others: &[&'a GlobalImportance], top: usize) -> Vec<(&'a str, f64, Vec<Option<f64>>)> {
    let lookup: Vec<HashMap<&str, f64>> = others
        .iter()
        .map(|g| g.entries.iter().map(|(t, e)| (t.as_str(), e.normalized_score)).collect())
        .collect();
    primary
        .ranked()
        .into_iter()
        .take(top)
        .map(|(t, e)| (t, e.normalized_score, lookup.iter().map(|m| m.get(t).copied()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::TokenScore;
    use crate::blackbox::LossKind;
    use crate::corpus::Document;

    fn map(id: &str, scores: &[(&str, f64)]) -> RelevanceMap {
        RelevanceMap {
            doc_id: id.into(),
            method: Method::Lrp,
            target_class: 1,
            model_output: 0.0,
            scores: scores
                .iter()
                .enumerate()
                .map(|(pos, (t, r))| TokenScore { token: t.to_string(), pos, r: *r })
                .collect(),
            truncated: 0,
        }
    }

    #[test]
    fn mean_and_count() {
        let maps = [map("a", &[("bad", 0.2), ("food", -0.1)]), map("b", &[("bad", 0.4)])];
        let g = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let bad = g.entries["bad"];
        assert!((bad.mean_relevance - 0.3).abs() < 1e-15);
        assert_eq!(bad.occurrence_count, 2);
        assert_eq!(bad.normalized_score, 1.0);
        assert!((g.entries["food"].normalized_score + 1.0 / 3.0).abs() < 1e-15);
        let g2 = aggregate_global(&maps, 2, AggregationMode::PerOccurrence).unwrap();
        assert_eq!(g2.entries.len(), 1);
    }

    #[test]
    fn per_document_mode() {
        let maps = [map("a", &[("x", 1.0), ("x", 3.0)]), map("b", &[("x", 0.0)])];
        let occ = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let doc = aggregate_global(&maps, 1, AggregationMode::PerDocument).unwrap();
        assert!((occ.entries["x"].mean_relevance - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(doc.entries["x"].mean_relevance, 1.0);
        assert_eq!(doc.entries["x"].occurrence_count, 2);
    }

    #[test]
    fn aggregation_errors() {
        assert!(aggregate_global(&[], 1, AggregationMode::PerOccurrence).is_err());
        let mut other = map("b", &[("x", 1.0)]);
        other.method = Method::Gbsa;
        assert!(aggregate_global(&[map("a", &[]), other], 1, AggregationMode::PerOccurrence).is_err());
    }

    #[test]
    fn ngram_bigram_joint() {
        let c = Corpus::new(vec![Document::new("a", "i was not disappointed", Some(0))]).unwrap();
        let m = map("a", &[("i", 0.0), ("was", 0.1), ("not", 0.5), ("disappointed", 0.25)]);
        let r = ngram_scores(&[m], &c, 2, 1).unwrap();
        assert_eq!(r.entries["not disappointed"].mean_joint_score, 0.75);
        assert_eq!(r.entries.len(), 3);
        let short = map("a", &[("i", 1.0)]);
        assert!(ngram_scores(&[short], &c, 3, 1).unwrap().entries.is_empty());
        assert!(ngram_scores(&[], &c, 4, 1).is_err());
    }

    #[test]
    fn unigram_report_matches_global() {
        let maps = [map("a", &[("x", 0.5), ("y", -1.0), ("x", 0.25)]), map("b", &[("y", 2.0)])];
        let c = Corpus::new(vec![Document::new("a", "", None), Document::new("b", "", None)]).unwrap();
        let g = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let r = ngram_scores(&maps, &c, 1, 1).unwrap();
        for (t, e) in &g.entries {
            assert_eq!(r.entries[t].mean_joint_score, e.mean_relevance);
            assert_eq!(r.entries[t].count, e.occurrence_count);
        }
    }

    fn deletion_fixture() -> (LinearModel, EmbeddingTable, Corpus) {
        let mut t = EmbeddingTable::new(1);
        t.insert("awful", &[3.0]).unwrap();
        t.insert("meh", &[0.5]).unwrap();
        t.insert("fine", &[-1.0]).unwrap();
        let m = LinearModel::new(vec![1.0], 0.0, LossKind::Logistic, None);
        let c = Corpus::new(vec![
            Document::new("1", "awful fine", Some(1)),
            Document::new("2", "awful meh", Some(1)),
            Document::new("3", "meh", Some(1)),
            Document::new("4", "awful", Some(1)),
            Document::new("5", "fine", Some(0)),
        ])
        .unwrap();
        (m, t, c)
    }

    #[test]
    fn deletion_points() {
        let (m, t, c) = deletion_fixture();
        let pts = deletion_curve(&m, &["awful", "meh", "fine"], &c, &t, &[0, 1, 2]).unwrap();
        assert_eq!(pts[0].recall, 1.0);
        assert_eq!(pts[0].recall_drop, 0.0);
        // without "awful": "fine" → −1, "meh" → +0.5, "meh" → +0.5, empty → 0 (p = 0.5 → class 1)
        assert_eq!(pts[1].recall, 0.75);
        // without "meh" too: emptied documents sit at p = 0.5, "fine" stays negative
        assert_eq!(pts[2].recall, 0.75);
        assert_eq!(pts[2].recall_drop, 0.25);
        assert!(deletion_curve(&m, &["awful"], &c, &t, &[2]).is_err());
    }

    #[test]
    fn correlation_identity_and_disjoint() {
        let maps = [map("a", &[("a", 1.0), ("b", 2.0), ("c", -1.0), ("d", 0.5)])];
        let g = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let m = score_correlation(&[&g, &g], 1, CorrelationKind::Pearson).unwrap();
        assert_eq!(m.values[0][0], 1.0);
        assert!((m.values[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(m.values[0][1], m.values[1][0]);
        let one = score_correlation(&[&g], 1, CorrelationKind::Pearson).unwrap();
        assert_eq!(one.values, vec![vec![1.0]]);
        let other = aggregate_global(&[map("b", &[("x", 1.0), ("y", 2.0), ("z", 3.0)])], 1, AggregationMode::PerOccurrence).unwrap();
        assert!(score_correlation(&[&g, &other], 1, CorrelationKind::Pearson).is_err());
    }

    #[test]
    fn spearman_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), [4.0, 1.5, 3.0, 1.5]);
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 4.0, 9.0, 16.0];
        assert!((pearson(&ranks(&x), &ranks(&y)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_identical() {
        let f = surrogate_fidelity(&[1, 0, 1], &[1, 0, 1], &[1, 1, 1]).unwrap();
        assert_eq!(f.vs_blackbox.f1, 1.0);
        assert!(surrogate_fidelity(&[1], &[1, 0], &[1, 0]).is_err());
    }

    #[test]
    fn fidelity_random_half() {
        // simulation oracle: coin-flip predictions against balanced labels
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let preds: Vec<u8> = (0..10_000).map(|_| rand::Rng::random_range(&mut rng, 0..2u8)).collect();
        let labels: Vec<u8> = (0..10_000).map(|i| (i % 2) as u8).collect();
        let f = surrogate_fidelity(&preds, &labels, &labels).unwrap();
        assert!((f.vs_blackbox.f1 - 0.5).abs() < 0.05, "{}", f.vs_blackbox.f1);
    }
}
