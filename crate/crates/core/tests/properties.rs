use proptest::prelude::*;

use lrptext::analysis::{aggregate_global, score_correlation, AggregationMode, CorrelationKind};
use lrptext::attribution::{Method, RelevanceMap, TokenScore};
use lrptext::corpus::{load_corpus, tokenize, write_corpus, Corpus, CorpusFormat, Document, LoadOptions};
use lrptext::reports::intensities;

const WORDS: [&str; 6] = ["good", "bad", "food", "not", "slow", "it's"];

fn maps_strategy() -> impl Strategy<Value = Vec<RelevanceMap>> {
    let doc = prop::collection::vec((0..WORDS.len(), -5.0f64..5.0), 1..12);
    prop::collection::vec(doc, 1..8).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, toks)| RelevanceMap {
                doc_id: format!("d{i}"),
                method: Method::Lrp,
                target_class: 1,
                model_output: 0.0,
                scores: toks
                    .into_iter()
                    .enumerate()
                    .map(|(pos, (w, r))| TokenScore { token: WORDS[w].to_string(), pos, r })
                    .collect(),
                truncated: 0,
            })
            .collect()
    })
}

fn scaled(maps: &[RelevanceMap], k: f64) -> Vec<RelevanceMap> {
    maps.iter()
        .map(|m| RelevanceMap {
            scores: m.scores.iter().map(|s| TokenScore { r: s.r * k, ..s.clone() }).collect(),
            ..m.clone()
        })
        .collect()
}

proptest! {
    #[test]
    fn tokenize_is_idempotent(text in ".{0,80}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn csv_corpus_round_trips(rows in prop::collection::vec(("[a-zA-Z ,.\"']{1,40}", 0u8..2), 1..10)) {
        let docs: Vec<Document> = rows
            .iter()
            .enumerate()
            .map(|(i, (text, label))| Document::new(format!("doc-{i}"), text.clone(), Some(*label)))
            .collect();
        let corpus = Corpus::new(docs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_corpus(&corpus, &path, CorpusFormat::Csv).unwrap();
        let back = load_corpus(&path, CorpusFormat::Csv, LoadOptions::default()).unwrap();
        prop_assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.documents().iter().zip(back.documents()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(&a.tokens, &b.tokens);
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn aggregation_is_linear_in_relevance(maps in maps_strategy(), k in -3.0f64..3.0) {
        let base = aggregate_global(&maps, 1, AggregationMode::PerOccurrence).unwrap();
        let scaled = aggregate_global(&scaled(&maps, k), 1, AggregationMode::PerOccurrence).unwrap();
        prop_assert_eq!(base.entries.len(), scaled.entries.len());
        for (token, e) in &base.entries {
            let s = &scaled.entries[token];
            prop_assert_eq!(e.occurrence_count, s.occurrence_count);
            prop_assert!((s.mean_relevance - k * e.mean_relevance).abs() <= 1e-9 * (1.0 + e.mean_relevance.abs()));
        }
    }

    #[test]
    fn highlight_intensity_ignores_positive_scale(r in prop::collection::vec(-10.0f64..10.0, 1..20), k in 0.01f64..100.0) {
        let scaled: Vec<f64> = r.iter().map(|x| x * k).collect();
        let (a, b) = (intensities(&r, 10), intensities(&scaled, 10));
        for ((ia, pa), (ib, pb)) in a.iter().zip(&b) {
            // rounding at a .5 boundary may differ by one step
            prop_assert!((*ia as i32 - *ib as i32).abs() <= 1);
            if *ia == *ib {
                prop_assert_eq!(pa, pb);
            }
        }
    }

    #[test]
    fn correlation_matrix_is_symmetric(a in maps_strategy(), b in maps_strategy()) {
        let ga = aggregate_global(&a, 1, AggregationMode::PerOccurrence).unwrap();
        let gb = aggregate_global(&b, 1, AggregationMode::PerOccurrence).unwrap();
        if let Ok(m) = score_correlation(&[&ga, &gb], 1, CorrelationKind::Pearson) {
            for i in 0..2 {
                prop_assert_eq!(m.values[i][i], 1.0);
                for j in 0..2 {
                    prop_assert_eq!(m.values[i][j], m.values[j][i]);
                    prop_assert!(m.values[i][j].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
