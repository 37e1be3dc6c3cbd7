//! Highlighted-text HTML, false-positive/false-negative case sheets and
//! tidy CSV exports of the analysis artifacts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{CorrelationMatrix, DeletionCurve, DeletionPoint, GlobalImportance, ImportanceEntry, NgramReport, Split};
use crate::attribution::RelevanceMap;
use crate::corpus::{Corpus, Document, Prediction};
use crate::error::{Error, Result};

pub const DEFAULT_DISPLAY_FLOOR: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    PositiveClass,
    NegativeClass,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub token: String,
    pub intensity: u8,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightHeader {
    pub actual_label: Option<u8>,
    pub blackbox: Option<Prediction>,
    pub surrogate: Option<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightDoc {
    pub doc_id: String,
    pub header: HighlightHeader,
    pub spans: Vec<Span>,
}

/// Maps relevances to display intensities, scaled so the strongest token in
/// the document reaches 100.
pub fn intensities(relevances: &[f64], floor: u8) -> Vec<(u8, Polarity)> {
    let max = relevances.iter().map(|r| r.abs()).fold(0.0, f64::max);
    relevances
        .iter()
        .map(|&r| {
            if max == 0.0 {
                return (0, Polarity::Neutral);
            }
            let i = (100.0 * r.abs() / max).round().min(100.0) as u8;
            let p = if i < floor || r == 0.0 {
                Polarity::Neutral
            } else if r > 0.0 {
                Polarity::PositiveClass
            } else {
                Polarity::NegativeClass
            };
            (i, p)
        })
        .collect()
}

/// Every token of the document in order; tokens without a score are neutral.
pub fn highlight_doc(map: &RelevanceMap, doc: &Document, surrogate: Option<Prediction>, floor: u8) -> HighlightDoc {
    let mut r = vec![0.0; doc.tokens.len()];
    for s in &map.scores {
        if let Some(slot) = r.get_mut(s.pos) {
            *slot = s.r;
        }
    }
    let spans = doc
        .tokens
        .iter()
        .zip(intensities(&r, floor))
        .map(|(t, (intensity, polarity))| Span {
            token: t.clone(),
            intensity,
            polarity,
        })
        .collect();
    HighlightDoc {
        doc_id: doc.id.clone(),
        header: HighlightHeader {
            actual_label: doc.label,
            blackbox: doc.prediction,
            surrogate,
        },
        spans,
    }
}

pub fn highlight_docs(
    maps: &[RelevanceMap],
    corpus: &Corpus,
    surrogate: &HashMap<String, Prediction>,
    floor: u8,
) -> Result<Vec<HighlightDoc>> {
    let index = corpus.index_by_id();
    maps.iter()
        .map(|m| {
            let doc = index
                .get(m.doc_id.as_str())
                .ok_or_else(|| Error::invalid(format!("relevance map for unknown document {:?}", m.doc_id)))?;
            Ok(highlight_doc(m, doc, surrogate.get(&m.doc_id).copied(), floor))
        })
        .collect()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn fmt_label(l: Option<u8>) -> String {
    l.map_or_else(|| "-".to_string(), |l| l.to_string())
}

fn fmt_prediction(p: Option<Prediction>) -> String {
    p.map_or_else(|| "-".to_string(), |p| format!("{} ({:.3})", p.label, p.score))
}

fn span_html(s: &Span) -> String {
    let token = escape(&s.token);
    let alpha = f64::from(s.intensity) / 100.0;
    match s.polarity {
        Polarity::Neutral => format!("<span class=\"t\">{token}</span>"),
        Polarity::PositiveClass => format!("<span class=\"t\" style=\"background:rgba(255,0,0,{alpha:.2})\">{token}</span>"),
        Polarity::NegativeClass => format!("<span class=\"t\" style=\"background:rgba(0,0,255,{alpha:.2})\">{token}</span>"),
    }
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em}\
table{border-collapse:collapse}\
th,td{border:1px solid #bbb;padding:4px 6px;vertical-align:top;text-align:left}\
span.t{padding:1px 2px;line-height:1.8}";

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{t}</h1>\n{body}</body>\n</html>\n",
        t = escape(title)
    )
}

/// Table body for a list of highlighted documents.
pub fn highlight_table(rows: &[HighlightDoc]) -> String {
    let mut out = String::from(
        "<table>\n<tr><th>document</th><th>label</th><th>black box</th><th>surrogate</th><th>text</th></tr>\n",
    );
    for row in rows {
        let text: Vec<String> = row.spans.iter().map(span_html).collect();
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
            escape(&row.doc_id),
            fmt_label(row.header.actual_label),
            fmt_prediction(row.header.blackbox),
            fmt_prediction(row.header.surrogate),
            text.join(" ")
        );
    }
    out.push_str("</table>\n");
    out
}

pub fn highlights_html(title: &str, rows: &[HighlightDoc]) -> String {
    page(title, &highlight_table(rows))
}

/// Renders every map as a highlighted row of a standalone HTML page.
pub fn render_highlights(
    maps: &[RelevanceMap],
    corpus: &Corpus,
    surrogate: &HashMap<String, Prediction>,
    floor: u8,
    out_path: &Path,
) -> Result<()> {
    let rows = highlight_docs(maps, corpus, surrogate, floor)?;
    let title = maps
        .first()
        .map_or_else(|| "Relevance highlights".to_string(), |m| format!("{} relevance highlights", m.method));
    write_text(out_path, &highlights_html(&title, &rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    FalsePositive,
    FalseNegative,
    TruePositive,
}

impl CaseKind {
    pub fn matches(&self, actual: u8, predicted: u8) -> bool {
        match self {
            CaseKind::FalsePositive => actual == 0 && predicted == 1,
            CaseKind::FalseNegative => actual == 1 && predicted == 0,
            CaseKind::TruePositive => actual == 1 && predicted == 1,
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            CaseKind::FalsePositive => "False positive instances",
            CaseKind::FalseNegative => "False negative instances",
            CaseKind::TruePositive => "True positive instances",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSheet {
    pub kind: CaseKind,
    pub rows: Vec<HighlightDoc>,
}

impl CaseSheet {
    pub fn to_html(&self) -> String {
        page(self.kind.title(), &highlight_table(&self.rows))
    }
}

/// Documents of one outcome kind that have a relevance map, most confident
/// mistakes first: descending black-box score for positives, ascending for
/// false negatives.
pub fn case_sheets(
    maps: &[RelevanceMap],
    corpus: &Corpus,
    surrogate: &HashMap<String, Prediction>,
    kind: CaseKind,
    limit: usize,
    floor: u8,
) -> CaseSheet {
    let by_id: HashMap<&str, &RelevanceMap> = maps.iter().map(|m| (m.doc_id.as_str(), m)).collect();
    let mut picked: Vec<(&Document, &RelevanceMap, f64)> = corpus
        .documents()
        .iter()
        .filter_map(|d| {
            let (actual, pred) = (d.label?, d.prediction?);
            if !kind.matches(actual, pred.label) {
                return None;
            }
            by_id.get(d.id.as_str()).map(|m| (d, *m, pred.score))
        })
        .collect();
    picked.sort_by(|a, b| {
        let ord = match kind {
            CaseKind::FalseNegative => a.2.total_cmp(&b.2),
            _ => b.2.total_cmp(&a.2),
        };
        ord.then_with(|| a.0.id.cmp(&b.0.id))
    });
    CaseSheet {
        kind,
        rows: picked
            .into_iter()
            .take(limit)
            .map(|(d, m, _)| highlight_doc(m, d, surrogate.get(&d.id).copied(), floor))
            .collect(),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

/// Writer with an explicit header row, so empty exports still carry their schema.
fn csv_writer_with_header(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub rank: usize,
    pub token: String,
    pub mean_relevance: f64,
    pub occurrence_count: usize,
    pub normalized_score: f64,
}

/// Columns: rank, token, mean_relevance, occurrence_count, normalized_score.
pub fn write_importance_csv(importance: &GlobalImportance, path: &Path) -> Result<()> {
    let mut w = csv_writer_with_header(
        path,
        &["rank", "token", "mean_relevance", "occurrence_count", "normalized_score"],
    )?;
    for (i, (token, e)) in importance.ranked().into_iter().enumerate() {
        w.serialize(ImportanceRow {
            rank: i + 1,
            token: token.to_string(),
            mean_relevance: e.mean_relevance,
            occurrence_count: e.occurrence_count,
            normalized_score: e.normalized_score,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_importance_entries(path: &Path) -> Result<BTreeMap<String, ImportanceEntry>> {
    Ok(read_rows::<ImportanceRow>(path)?
        .into_iter()
        .map(|r| {
            (
                r.token,
                ImportanceEntry {
                    mean_relevance: r.mean_relevance,
                    occurrence_count: r.occurrence_count,
                    normalized_score: r.normalized_score,
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionRow {
    pub method: String,
    pub split: Option<Split>,
    pub n_removed: usize,
    pub recall: f64,
    pub recall_drop: f64,
}

/// Columns: method, split, n_removed, recall, recall_drop. One row per point.
pub fn write_deletion_csv(curves: &[DeletionCurve], path: &Path) -> Result<()> {
    let mut w = csv_writer_with_header(path, &["method", "split", "n_removed", "recall", "recall_drop"])?;
    for c in curves {
        for p in &c.points {
            w.serialize(DeletionRow {
                method: c.method.clone(),
                split: c.split,
                n_removed: p.n_removed,
                recall: p.recall,
                recall_drop: p.recall_drop,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Regroups consecutive rows of the same series into curves.
pub fn read_deletion_csv(path: &Path) -> Result<Vec<DeletionCurve>> {
    let mut curves: Vec<DeletionCurve> = Vec::new();
    for r in read_rows::<DeletionRow>(path)? {
        let point = DeletionPoint {
            n_removed: r.n_removed,
            recall: r.recall,
            recall_drop: r.recall_drop,
        };
        match curves.last_mut() {
            Some(c) if c.method == r.method && c.split == r.split => c.points.push(point),
            _ => curves.push(DeletionCurve {
                method: r.method,
                split: r.split,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramSummaryRow {
    pub ngram: String,
    pub mean_joint_score: f64,
    pub count: usize,
}

/// Columns: ngram, mean_joint_score, count; ranked by mean.
pub fn write_ngram_summary_csv(report: &NgramReport, path: &Path) -> Result<()> {
    let mut w = csv_writer_with_header(path, &["ngram", "mean_joint_score", "count"])?;
    for (ngram, e) in report.ranked() {
        w.serialize(NgramSummaryRow {
            ngram: ngram.to_string(),
            mean_joint_score: e.mean_joint_score,
            count: e.count,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramInstanceRow {
    pub ngram: String,
    pub doc_id: String,
    pub joint_score: f64,
    pub predicted_label: Option<u8>,
}

/// Columns: ngram, doc_id, joint_score, predicted_label. One row per occurrence.
pub fn write_ngram_scatter_csv(report: &NgramReport, path: &Path) -> Result<()> {
    let mut w = csv_writer_with_header(path, &["ngram", "doc_id", "joint_score", "predicted_label"])?;
    for (ngram, e) in &report.entries {
        for i in &e.instances {
            w.serialize(NgramInstanceRow {
                ngram: ngram.clone(),
                doc_id: i.doc_id.clone(),
                joint_score: i.joint_score,
                predicted_label: i.predicted_label,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ngram_scatter_csv(path: &Path) -> Result<Vec<NgramInstanceRow>> {
    read_rows(path)
}

/// Document × ngram grid of joint scores for the given ngrams. A document
/// lacking an ngram gets that ngram's mean over the documents that have it;
/// multiple occurrences in one document are summed.
/// Columns: doc_id, predicted_label, then one column per ngram.
pub fn write_ngram_matrix_csv(report: &NgramReport, ngrams: &[&str], path: &Path) -> Result<()> {
    let mut docs: BTreeMap<&str, (Option<u8>, HashMap<&str, f64>)> = BTreeMap::new();
    let mut means = Vec::with_capacity(ngrams.len());
    for &g in ngrams {
        let entry = report
            .entries
            .get(g)
            .ok_or_else(|| Error::invalid(format!("ngram {g:?} not in report")))?;
        let mut per_doc: BTreeMap<&str, f64> = BTreeMap::new();
        for i in &entry.instances {
            *per_doc.entry(i.doc_id.as_str()).or_insert(0.0) += i.joint_score;
            docs.entry(i.doc_id.as_str()).or_insert((i.predicted_label, HashMap::new()));
        }
        means.push(per_doc.values().sum::<f64>() / per_doc.len() as f64);
        for (d, s) in per_doc {
            docs.get_mut(d).expect("inserted above").1.insert(g, s);
        }
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["doc_id".to_string(), "predicted_label".to_string()];
    header.extend(ngrams.iter().map(|g| g.to_string()));
    w.write_record(&header)?;
    for (doc, (label, scores)) in docs {
        let mut rec = vec![doc.to_string(), label.map(|l| l.to_string()).unwrap_or_default()];
        for (g, mean) in ngrams.iter().zip(&means) {
            rec.push(scores.get(g).copied().unwrap_or(*mean).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: label, then one column per label, in matrix order.
pub fn write_correlation_csv(matrix: &CorrelationMatrix, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(matrix.labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in matrix.labels.iter().zip(&matrix.values) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_correlation_csv(path: &Path) -> Result<CorrelationMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::parse(path, i + 2, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok(CorrelationMatrix { labels, values })
}

/// Plot-ready artifact handled by [`export_plot_data`].
pub enum PlotData<'a> {
    Deletion(&'a [DeletionCurve]),
    Ngram(&'a NgramReport),
    Importance(&'a GlobalImportance),
}

/// Writes one tidy CSV per artifact into `dir` and returns the file names.
pub fn export_plot_data(items: &[PlotData<'_>], dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for item in items {
        let name = match item {
            PlotData::Deletion(curves) => {
                let name = "deletion_curves.csv".to_string();
                write_deletion_csv(curves, &dir.join(&name))?;
                name
            }
            PlotData::Ngram(report) => {
                let name = format!("ngram{}_{}_scatter.csv", report.n, report.method);
                write_ngram_scatter_csv(report, &dir.join(&name))?;
                name
            }
            PlotData::Importance(g) => {
                let name = format!("importance_{}.csv", g.label().replace('/', "_"));
                write_importance_csv(g, &dir.join(&name))?;
                name
            }
        };
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{aggregate_global, ngram_scores, AggregationMode};
    use crate::attribution::{Method, TokenScore};

    fn map(id: &str, rs: &[f64], tokens: &[&str]) -> RelevanceMap {
        RelevanceMap {
            doc_id: id.into(),
            method: Method::Lrp,
            target_class: 1,
            model_output: rs.iter().sum(),
            scores: rs
                .iter()
                .zip(tokens)
                .enumerate()
                .map(|(pos, (r, t))| TokenScore { token: t.to_string(), pos, r: *r })
                .collect(),
            truncated: 0,
        }
    }

    fn corpus() -> Corpus {
        let docs = vec![
            Document::new("a", "the food was worse than ever", Some(1)),
            Document::new("b", "never had a bad meal", Some(0)),
            Document::new("c", "great <b>", Some(0)),
        ];
        Corpus::new(docs)
            .unwrap()
            .with_predictions(&[
                Prediction { label: 1, score: 0.9 },
                Prediction { label: 1, score: 0.7 },
                Prediction { label: 0, score: 0.1 },
            ])
            .unwrap()
    }

    #[test]
    fn intensity_rule() {
        assert_eq!(intensities(&[0.0, 0.0], 10), [(0, Polarity::Neutral); 2]);
        assert_eq!(
            intensities(&[1.0, -1.0], 10),
            [(100, Polarity::PositiveClass), (100, Polarity::NegativeClass)]
        );
        let v = intensities(&[0.5, 0.05, -0.2, 0.094], 10);
        assert_eq!(v[0], (100, Polarity::PositiveClass));
        assert_eq!(v[1], (10, Polarity::PositiveClass));
        assert_eq!(v[2], (40, Polarity::NegativeClass));
        assert_eq!(v[3], (19, Polarity::PositiveClass));
        assert_eq!(intensities(&[1.0, 0.09], 10)[1], (9, Polarity::Neutral));
    }

    #[test]
    fn max_token_full_red() {
        let c = corpus();
        let m = map("a", &[0.0, 0.1, 0.0, 0.8, 0.0, 0.05], &["the", "food", "was", "worse", "than", "ever"]);
        let html = highlights_html("t", &highlight_docs(&[m], &c, &HashMap::new(), 10).unwrap());
        assert!(html.contains("<span class=\"t\" style=\"background:rgba(255,0,0,1.00)\">worse</span>"));
        assert!(html.contains("rgba(255,0,0,0.13)\">food"));
        assert!(html.contains("<span class=\"t\">ever</span>"));
        assert!(!html.contains("0.8"));
    }

    #[test]
    fn tokens_in_order_and_escaped() {
        let c = corpus();
        let m = map("c", &[1.0], &["great"]);
        let docs = highlight_docs(&[m], &c, &HashMap::new(), 10).unwrap();
        let tokens: Vec<&str> = docs[0].spans.iter().map(|s| s.token.as_str()).collect();
        assert_eq!(tokens, ["great", "b"]);
        let d = Document::from_tokens("x", vec!["<i>&".into()], None);
        let h = highlight_doc(&map("x", &[1.0], &["<i>&"]), &d, None, 10);
        assert!(highlights_html("t", &[h]).contains("&lt;i&gt;&amp;</span>"));
    }

    #[test]
    fn unknown_doc_errors() {
        let m = map("zzz", &[1.0], &["x"]);
        assert!(highlight_docs(&[m], &corpus(), &HashMap::new(), 10).is_err());
    }

    #[test]
    fn header_columns() {
        let c = corpus();
        let sur = HashMap::from([("a".to_string(), Prediction { label: 1, score: 0.95 })]);
        let m = map("a", &[1.0], &["the"]);
        let html = highlights_html("t", &highlight_docs(&[m], &c, &sur, 10).unwrap());
        assert!(html.contains("<tr><td>a</td><td>1</td><td>1 (0.900)</td><td>1 (0.950)</td>"));
    }

    #[test]
    fn sheets_select_by_kind() {
        let c = corpus();
        let maps = vec![
            map("a", &[1.0], &["the"]),
            map("b", &[0.2, 0.1, 0.0, 0.9], &["never", "had", "a", "bad"]),
            map("c", &[0.3], &["great"]),
        ];
        let fp = case_sheets(&maps, &c, &HashMap::new(), CaseKind::FalsePositive, 10, 10);
        assert_eq!(fp.rows.len(), 1);
        assert_eq!(fp.rows[0].doc_id, "b");
        let tp = case_sheets(&maps, &c, &HashMap::new(), CaseKind::TruePositive, 10, 10);
        assert_eq!(tp.rows[0].doc_id, "a");
        assert!(case_sheets(&maps, &c, &HashMap::new(), CaseKind::FalseNegative, 10, 10).rows.is_empty());
        assert!(case_sheets(&maps, &c, &HashMap::new(), CaseKind::FalsePositive, 0, 10).rows.is_empty());
        assert!(fp.to_html().contains("False positive instances"));
    }

    #[test]
    fn deletion_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let curve = |m: &str, s| DeletionCurve {
            method: m.into(),
            split: s,
            points: (0..7)
                .map(|i| DeletionPoint { n_removed: 50 * i, recall: 1.0 - 0.1 * i as f64, recall_drop: 0.1 * i as f64 })
                .collect(),
        };
        let curves = vec![curve("lrp", Some(Split::Eval)), curve("random", None)];
        write_deletion_csv(&curves, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 15);
        assert!(text.starts_with("method,split,n_removed,recall,recall_drop\n"));
        assert_eq!(read_deletion_csv(&path).unwrap(), curves);
    }

    #[test]
    fn importance_and_ngram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus();
        let maps = vec![
            map("a", &[0.1, -0.3, 1.0 / 3.0], &["the", "food", "was"]),
            map("b", &[0.25, 0.5], &["never", "had"]),
        ];
        let g = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let p = dir.path().join("g.csv");
        write_importance_csv(&g, &p).unwrap();
        assert_eq!(read_importance_entries(&p).unwrap(), g.entries);

        let r = ngram_scores(&maps, &c, 2, 1).unwrap();
        let p = dir.path().join("n.csv");
        write_ngram_scatter_csv(&r, &p).unwrap();
        let rows = read_ngram_scatter_csv(&p).unwrap();
        assert_eq!(rows.len(), 3);
        let back: Vec<(String, String, f64, Option<u8>)> =
            rows.into_iter().map(|r| (r.ngram, r.doc_id, r.joint_score, r.predicted_label)).collect();
        let source: Vec<(String, String, f64, Option<u8>)> = r
            .entries
            .iter()
            .flat_map(|(k, e)| e.instances.iter().map(move |i| (k.clone(), i.doc_id.clone(), i.joint_score, i.predicted_label)))
            .collect();
        assert_eq!(back, source);
    }

    #[test]
    fn ngram_matrix_fills_missing_with_mean() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus();
        let maps = vec![
            map("a", &[1.0, 2.0], &["the", "food"]),
            map("b", &[4.0, 0.5], &["never", "had"]),
            map("c", &[3.0], &["the"]),
        ];
        let r = ngram_scores(&maps, &c, 1, 1).unwrap();
        let p = dir.path().join("m.csv");
        write_ngram_matrix_csv(&r, &["the", "had"], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "doc_id,predicted_label,the,had\na,1,1,0.5\nb,1,2,0.5\nc,0,3,0.5\n");
    }

    #[test]
    fn correlation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CorrelationMatrix {
            labels: vec!["lrp/train".into(), "lrp/eval".into()],
            values: vec![vec![1.0, 0.123456789], vec![0.123456789, 1.0]],
        };
        let p = dir.path().join("c.csv");
        write_correlation_csv(&m, &p).unwrap();
        assert_eq!(read_correlation_csv(&p).unwrap(), m);
    }

    #[test]
    fn export_names() {
        let dir = tempfile::tempdir().unwrap();
        let maps = vec![map("a", &[1.0, 2.0], &["the", "food"])];
        let g = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let r = ngram_scores(&maps, &corpus(), 2, 1).unwrap();
        let names = export_plot_data(&[PlotData::Importance(&g), PlotData::Ngram(&r), PlotData::Deletion(&[])], dir.path()).unwrap();
        assert_eq!(names, ["importance_lrp.csv", "ngram2_lrp_scatter.csv", "deletion_curves.csv"]);
    }
}
