//! End-to-end orchestration over a flat working directory: synthetic data,
//! black-box and surrogate training, explanation and the report bundle.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    aggregate_global, deletion_curve, deletion_eval, ngram_scores, random_ranking, score_correlation,
    surrogate_fidelity, AggregationMode, CorrelationKind, CorrelationMatrix, DeletionCurve, Fidelity, GlobalImportance,
    Split, DEFAULT_DELETION_STEPS,
};
use crate::attribution::{
    explain_corpus, explain_document, read_relevance_jsonl, write_relevance_jsonl, ExplainConfig, LrpConfig, Method,
    ModelBundle, RelevanceMap,
};
use crate::blackbox::{predict_corpus, train_linear, LinearModel, LinearTrainConfig};
use crate::cnn::{cnn_predict_corpus, cnn_train_with_report, CnnConfig, CnnParams, Optimizer};
use crate::corpus::{load_corpus, stratified_sample, Corpus, CorpusFormat, LoadOptions, Prediction, Vocabulary};
use crate::embeddings::{load_embeddings, oov_report, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{Confusion, ConfusionSummary};
use crate::reports::{
    case_sheets, highlights_html, highlight_docs, write_correlation_csv, write_deletion_csv, write_importance_csv,
    write_ngram_matrix_csv, write_ngram_scatter_csv, write_ngram_summary_csv, write_text, CaseKind,
    DEFAULT_DISPLAY_FLOOR,
};
use crate::synth::{generate, write_synthetic, SyntheticSpec, EMBEDDINGS_FILE, EVAL_FILE, TRAIN_FILE};

pub const TOOL_NAME: &str = "lrptext";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLACKBOX_FILE: &str = "blackbox.json";
pub const BLACKBOX_METRICS_FILE: &str = "blackbox_metrics.json";
pub const SURROGATE_FILE: &str = "surrogate.json";
pub const FIDELITY_FILE: &str = "fidelity.json";
pub const INDEX_FILE: &str = "index.html";

/// Corpus and embedding locations. Unset entries fall back to the files the
/// `synth` command writes into the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Labels come from a 1–5 `stars` column.
    pub star_labels: bool,
    /// Optional stratified subsample sizes.
    pub sample_train: Option<usize>,
    pub sample_eval: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSettings {
    pub methods: Vec<Method>,
    pub target_class: u8,
    pub lrp: LrpConfig,
    pub ig_steps: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            methods: vec![Method::Lrp, Method::Gbsa, Method::Permutation],
            target_class: 1,
            lrp: LrpConfig::default(),
            ig_steps: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub min_count: usize,
    pub aggregation: AggregationMode,
    pub deletion_steps: Vec<usize>,
    pub correlation: CorrelationKind,
    pub top_tokens: usize,
    pub ngram_sizes: Vec<usize>,
    pub ngram_methods: Vec<Method>,
    pub ngram_min_count: usize,
    /// Ngrams kept in the scatter and matrix exports.
    pub ngram_top: usize,
    pub case_method: Method,
    pub case_limit: usize,
    pub display_floor: u8,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            min_count: 20,
            aggregation: AggregationMode::PerOccurrence,
            deletion_steps: DEFAULT_DELETION_STEPS.to_vec(),
            correlation: CorrelationKind::Pearson,
            top_tokens: 20,
            ngram_sizes: vec![2, 3],
            ngram_methods: vec![Method::Lrp],
            ngram_min_count: 5,
            ngram_top: 20,
            case_method: Method::Lrp,
            case_limit: 20,
            display_floor: DEFAULT_DISPLAY_FLOOR,
        }
    }
}

/// Surrogate settings sized for the 16-dimensional synthetic embeddings.
pub fn desk_cnn_config() -> CnnConfig {
    CnnConfig {
        dim: 16,
        pad_len: 32,
        filter_sizes: vec![1, 2, 3],
        filters_per_size: 16,
        dropout_rate: 0.2,
        seed: 0,
        epochs: 5,
        batch_size: 32,
        learning_rate: 0.005,
        optimizer: Optimizer::Adam,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides the per-stage seeds.
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub synth: SyntheticSpec,
    pub blackbox: LinearTrainConfig,
    pub cnn: CnnConfig,
    pub explain: ExplainSettings,
    pub report: ReportSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig {
                workdir: PathBuf::from("work"),
                ..PathsConfig::default()
            },
            corpus: CorpusConfig::default(),
            synth: SyntheticSpec::default(),
            blackbox: LinearTrainConfig::default(),
            cnn: desk_cnn_config(),
            explain: ExplainSettings::default(),
            report: ReportSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(vec![format!("{}: {e}", path.display())]))
    }

    /// Copies the global seed into every stochastic stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.blackbox.seed = seed;
        self.cnn.seed = seed;
        self
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }

    pub fn train_path(&self) -> PathBuf {
        self.paths.train.clone().unwrap_or_else(|| self.workdir().join(TRAIN_FILE))
    }

    pub fn eval_path(&self) -> PathBuf {
        self.paths.eval.clone().unwrap_or_else(|| self.workdir().join(EVAL_FILE))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.paths
            .embeddings
            .clone()
            .unwrap_or_else(|| self.workdir().join(EMBEDDINGS_FILE))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.workdir().join(name)
    }

    /// Problems with the settings themselves, independent of the filesystem.
    pub fn validate_settings(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.paths.workdir.as_os_str().is_empty() {
            issues.push("paths.workdir must be set".to_string());
        }
        issues.extend(self.synth.validate());
        issues.extend(self.blackbox.validate());
        issues.extend(self.cnn.validate());
        issues.extend(self.explain.lrp.validate());
        if self.explain.methods.is_empty() {
            issues.push("explain.methods must name at least one method".to_string());
        }
        if self.explain.target_class > 1 {
            issues.push(format!("explain.target_class {} is not 0 or 1", self.explain.target_class));
        }
        if self.explain.ig_steps == 0 {
            issues.push("explain.ig_steps must be positive".to_string());
        }
        let r = &self.report;
        if r.min_count == 0 {
            issues.push("report.min_count must be at least 1".to_string());
        }
        if r.deletion_steps.is_empty() {
            issues.push("report.deletion_steps must not be empty".to_string());
        }
        if r.ngram_sizes.iter().any(|n| !(1..=3).contains(n)) {
            issues.push(format!("report.ngram_sizes {:?} must lie in 1..=3", r.ngram_sizes));
        }
        if r.ngram_min_count == 0 {
            issues.push("report.ngram_min_count must be at least 1".to_string());
        }
        if r.display_floor > 100 {
            issues.push(format!("report.display_floor {} exceeds 100", r.display_floor));
        }
        if self.corpus.sample_train == Some(0) {
            issues.push("corpus.sample_train must be positive".to_string());
        }
        if self.corpus.sample_eval == Some(0) {
            issues.push("corpus.sample_eval must be positive".to_string());
        }
        issues
    }

    /// Settings problems plus every required input file that is missing.
    pub fn validate_for(&self, files: &[PathBuf]) -> Result<()> {
        let mut issues = self.validate_settings();
        for f in files {
            if !f.is_file() {
                issues.push(format!("missing input file {}", f.display()));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// SHA-256 of the canonical JSON config with the working directory blanked,
    /// so identical runs in different directories hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.workdir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Artifact file name → SHA-256, per pipeline stage.
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
}

impl Manifest {
    pub fn load_or_new(path: &Path, config: &PipelineConfig) -> Result<Self> {
        let mut m = if path.is_file() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        } else {
            Manifest::default()
        };
        m.tool = TOOL_NAME.to_string();
        m.version = TOOL_VERSION.to_string();
        m.config_sha256 = config.hash();
        m.seed = config.seed;
        Ok(m)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    write_text(path, &(json + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackboxMetrics {
    pub train: ConfusionSummary,
    pub eval: ConfusionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub documents: usize,
    pub fidelity: Fidelity,
    pub epoch_losses: Vec<f64>,
}

pub fn explanation_file(method: Method, split: Split) -> String {
    format!("explain_{method}_{split}.jsonl")
}

/// Loaded corpora, embeddings and models shared by the later stages.
pub struct Workspace {
    pub train: Corpus,
    pub eval: Corpus,
    pub table: EmbeddingTable,
    pub blackbox: Option<LinearModel>,
    pub surrogate: Option<CnnParams>,
}

impl Workspace {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }

    pub fn models(&self) -> ModelBundle<'_> {
        ModelBundle {
            blackbox: self.blackbox.as_ref(),
            surrogate: self.surrogate.as_ref(),
        }
    }
}

/// Commands of the pipeline, each validating before touching the workdir.
pub struct Pipeline {
    config: PipelineConfig,
}

impl Pipeline {
    /// Propagates the global seed before anything runs.
    pub fn new(config: PipelineConfig) -> Self {
        let seed = config.seed;
        Pipeline {
            config: config.with_seed(seed),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.config.train_path(), self.config.eval_path(), self.config.embeddings_path()]
    }

    fn ensure_workdir(&self) -> Result<()> {
        let dir = self.config.workdir();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    fn record(&self, stage: &str, files: &[String]) -> Result<()> {
        let path = self.config.artifact(MANIFEST_FILE);
        let mut m = Manifest::load_or_new(&path, &self.config)?;
        let entry = m.stages.entry(stage.to_string()).or_default();
        entry.clear();
        for f in files {
            entry.insert(f.clone(), sha256_file(&self.config.artifact(f))?);
        }
        write_json(&path, &m)
    }

    fn load_corpus_split(&self, path: &Path, sample: Option<usize>, salt: u64) -> Result<Corpus> {
        let opts = LoadOptions {
            star_labels: self.config.corpus.star_labels,
        };
        let corpus = load_corpus(path, CorpusFormat::from_path(path)?, opts)?;
        match sample {
            Some(n) => stratified_sample(&corpus, n, self.config.seed ^ salt),
            None => Ok(corpus),
        }
    }

    /// Loads corpora and embeddings, plus whichever models are requested.
    pub fn workspace(&self, blackbox: bool, surrogate: bool) -> Result<Workspace> {
        let c = &self.config;
        let table = load_embeddings(&c.embeddings_path(), None)?;
        let mut train = self.load_corpus_split(&c.train_path(), c.corpus.sample_train, 0x7241)?;
        let mut eval = self.load_corpus_split(&c.eval_path(), c.corpus.sample_eval, 0xE7A1)?;
        let blackbox = if blackbox {
            let model = LinearModel::load(&c.artifact(BLACKBOX_FILE))?;
            train = train.with_predictions(&predict_corpus(&model, &train, &table))?;
            eval = eval.with_predictions(&predict_corpus(&model, &eval, &table))?;
            Some(model)
        } else {
            None
        };
        let surrogate = if surrogate {
            Some(CnnParams::load(&c.artifact(SURROGATE_FILE))?)
        } else {
            None
        };
        Ok(Workspace {
            train,
            eval,
            table,
            blackbox,
            surrogate,
        })
    }

    pub fn synth(&self) -> Result<String> {
        let issues = self.config.validate_settings();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        self.ensure_workdir()?;
        let data = generate(&self.config.synth)?;
        write_synthetic(&data, self.config.workdir())?;
        self.record(
            "synth",
            &[TRAIN_FILE, EVAL_FILE, EMBEDDINGS_FILE, crate::synth::LEXICON_FILE].map(String::from),
        )?;
        Ok(format!(
            "wrote {} train and {} eval documents, {} embeddings (dim {}) to {}\n",
            data.train.len(),
            data.eval.len(),
            data.embeddings.len(),
            data.embeddings.dim(),
            self.config.workdir().display()
        ))
    }

    pub fn train_blackbox(&self) -> Result<String> {
        self.config.validate_for(&self.inputs())?;
        self.ensure_workdir()?;
        let ws = self.workspace(false, false)?;
        let model = train_linear(&ws.train, &ws.table, &self.config.blackbox)?;
        model.save(&self.config.artifact(BLACKBOX_FILE))?;
        let confusion = |corpus: &Corpus| -> Result<ConfusionSummary> {
            let actual = corpus
                .labels()
                .ok_or_else(|| Error::invalid("black-box metrics need labeled corpora"))?;
            let predicted: Vec<u8> = predict_corpus(&model, corpus, &ws.table).iter().map(|p| p.label).collect();
            Ok(Confusion::from_labels(&predicted, &actual)?.summary())
        };
        let metrics = BlackboxMetrics {
            train: confusion(&ws.train)?,
            eval: confusion(&ws.eval)?,
        };
        write_json(&self.config.artifact(BLACKBOX_METRICS_FILE), &metrics)?;
        self.record("train-blackbox", &[BLACKBOX_FILE, BLACKBOX_METRICS_FILE].map(String::from))?;
        Ok(format!(
            "black box vs. actual labels, train split\n{}\n\nblack box vs. actual labels, eval split\n{}\n",
            metrics.train.confusion, metrics.eval.confusion
        ))
    }

    pub fn train_surrogate(&self) -> Result<String> {
        let mut files = self.inputs();
        files.push(self.config.artifact(BLACKBOX_FILE));
        self.config.validate_for(&files)?;
        let ws = self.workspace(true, false)?;
        let union = ws.train.concat(&ws.eval)?;
        let (params, report) = cnn_train_with_report(&self.config.cnn, &union, &ws.table)?;
        params.save(&self.config.artifact(SURROGATE_FILE))?;

        let surrogate: Vec<u8> = cnn_predict_corpus(&params, &union, &ws.table)?.iter().map(|p| p.label).collect();
        let blackbox: Vec<u8> = union.documents().iter().filter_map(|d| d.predicted_label()).collect();
        let actual = union
            .labels()
            .ok_or_else(|| Error::invalid("fidelity report needs labeled corpora"))?;
        let fidelity = surrogate_fidelity(&surrogate, &blackbox, &actual)?;
        write_json(
            &self.config.artifact(FIDELITY_FILE),
            &FidelityReport {
                documents: union.len(),
                fidelity,
                epoch_losses: report.epoch_losses,
            },
        )?;
        self.record("train-surrogate", &[SURROGATE_FILE, FIDELITY_FILE].map(String::from))?;
        Ok(format!(
            "surrogate vs. black-box labels ({} documents)\n{}\n\nsurrogate vs. actual labels\n{}\n",
            union.len(),
            fidelity.vs_blackbox.confusion,
            fidelity.vs_actual.confusion
        ))
    }

    fn explain_config(&self, positive_only: bool) -> ExplainConfig {
        let e = &self.config.explain;
        ExplainConfig {
            target_class: e.target_class,
            positive_only,
            lrp: e.lrp,
            ig_steps: e.ig_steps,
        }
    }

    fn model_files(&self, method: Method) -> Vec<PathBuf> {
        let mut files = self.inputs();
        files.push(self.config.artifact(BLACKBOX_FILE));
        if method != Method::Permutation {
            files.push(self.config.artifact(SURROGATE_FILE));
        }
        files
    }

    /// Explains the black box's predicted-positive documents of a split, or
    /// one document when `doc_id` is given.
    pub fn explain(&self, method: Method, split: Split, doc_id: Option<&str>, html: bool) -> Result<String> {
        self.config.validate_for(&self.model_files(method))?;
        let ws = self.workspace(true, method != Method::Permutation)?;
        let corpus = ws.split(split);
        let maps = match doc_id {
            Some(id) => {
                let doc = corpus
                    .get(id)
                    .ok_or_else(|| Error::Validation(vec![format!("document {id:?} not in the {split} split")]))?;
                vec![explain_document(method, ws.models(), doc, &ws.table, &self.explain_config(false))?]
            }
            None => explain_corpus(method, ws.models(), corpus, &ws.table, &self.explain_config(true))?,
        };
        let stem = match doc_id {
            Some(id) => format!("explain_{method}_{split}_{}", sanitize(id)),
            None => format!("explain_{method}_{split}"),
        };
        let mut files = vec![format!("{stem}.jsonl")];
        write_relevance_jsonl(&self.config.artifact(&files[0]), &maps)?;
        if html {
            let surrogate = self.surrogate_predictions(&ws, corpus)?;
            let rows = highlight_docs(&maps, corpus, &surrogate, self.config.report.display_floor)?;
            let name = format!("{stem}.html");
            let title = format!("{method} relevance, {split} split");
            write_text(&self.config.artifact(&name), &highlights_html(&title, &rows))?;
            files.push(name);
        }
        self.record(&format!("explain:{stem}"), &files)?;
        Ok(format!("explained {} documents with {method} → {}\n", maps.len(), files.join(", ")))
    }

    fn surrogate_predictions(&self, ws: &Workspace, corpus: &Corpus) -> Result<HashMap<String, Prediction>> {
        let Some(params) = ws.surrogate.as_ref() else {
            return Ok(HashMap::new());
        };
        let preds = cnn_predict_corpus(params, corpus, &ws.table)?;
        Ok(corpus.documents().iter().map(|d| d.id.clone()).zip(preds).collect())
    }

    /// Global importance tables, ngram reports, deletion curves, correlation
    /// matrix, case sheets and the index page.
    pub fn report(&self) -> Result<String> {
        let c = &self.config;
        let r = &c.report;
        let mut expected = Vec::new();
        for &m in &c.explain.methods {
            for s in [Split::Train, Split::Eval] {
                expected.push((m, s, c.artifact(&explanation_file(m, s))));
            }
        }
        let available: Vec<&(Method, Split, PathBuf)> = expected.iter().filter(|(_, _, p)| p.is_file()).collect();
        let mut files = self.inputs();
        files.push(c.artifact(BLACKBOX_FILE));
        if r.case_method != Method::Permutation {
            files.push(c.artifact(SURROGATE_FILE));
        }
        let mut issues = match c.validate_for(&files) {
            Err(Error::Validation(v)) => v,
            Err(e) => return Err(e),
            Ok(()) => Vec::new(),
        };
        if available.is_empty() {
            issues.extend(expected.iter().map(|(_, _, p)| format!("missing explanation file {}", p.display())));
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }

        let ws = self.workspace(true, r.case_method != Method::Permutation)?;
        let mut out = Vec::<String>::new();
        let mut notes = Vec::<String>::new();

        let mut tables: Vec<GlobalImportance> = Vec::new();
        let mut maps_by: BTreeMap<(Split, Method), Vec<RelevanceMap>> = BTreeMap::new();
        for (m, s, path) in available.iter().map(|x| (x.0, x.1, &x.2)) {
            let maps = read_relevance_jsonl(path)?;
            if maps.is_empty() {
                notes.push(format!("{} is empty; skipped", path.display()));
                continue;
            }
            let mut g = aggregate_global(&maps, r.min_count, r.aggregation)?;
            g.split = Some(s);
            let name = format!("importance_{m}_{s}.csv");
            write_importance_csv(&g, &c.artifact(&name))?;
            out.push(name);
            tables.push(g);
            maps_by.insert((s, m), maps);
        }

        // ngram joint effects
        for ((s, m), maps) in &maps_by {
            if !r.ngram_methods.contains(m) {
                continue;
            }
            for &n in &r.ngram_sizes {
                let report = ngram_scores(maps, ws.split(*s), n, r.ngram_min_count)?;
                let stem = format!("ngram{n}_{m}_{s}");
                write_ngram_summary_csv(&report, &c.artifact(&format!("{stem}.csv")))?;
                let top: Vec<&str> = report.ranked().into_iter().take(r.ngram_top).map(|(k, _)| k).collect();
                let mut kept = report.clone();
                kept.entries.retain(|k, _| top.contains(&k.as_str()));
                write_ngram_scatter_csv(&kept, &c.artifact(&format!("{stem}_scatter.csv")))?;
                write_ngram_matrix_csv(&report, &top, &c.artifact(&format!("{stem}_matrix.csv")))?;
                out.extend([format!("{stem}.csv"), format!("{stem}_scatter.csv"), format!("{stem}_matrix.csv")]);
            }
        }

        // side-by-side top tokens per split
        for s in [Split::Train, Split::Eval] {
            let split_tables: Vec<&GlobalImportance> = tables.iter().filter(|g| g.split == Some(s)).collect();
            if split_tables.is_empty() {
                continue;
            }
            let name = format!("top_tokens_{s}.csv");
            write_top_tokens_csv(&split_tables, r.top_tokens, &c.artifact(&name))?;
            out.push(name);
        }

        // deletion on the eval split, every ranking plus a random baseline
        let mut curves = Vec::new();
        for g in &tables {
            let steps: Vec<usize> = r.deletion_steps.iter().copied().filter(|&n| n <= g.entries.len()).collect();
            if steps.len() < r.deletion_steps.len() {
                notes.push(format!(
                    "{}: {} ranked tokens, deletion steps above that were skipped",
                    g.label(),
                    g.entries.len()
                ));
            }
            curves.push(deletion_eval(ws.blackbox.as_ref().unwrap(), g, &ws.eval, &ws.table, &steps)?);
        }
        let vocab = Vocabulary::build(&ws.eval);
        let tokens: Vec<&str> = vocab.iter().map(|(t, _)| t).collect();
        let ranking = random_ranking(&tokens, c.seed);
        let steps: Vec<usize> = r.deletion_steps.iter().copied().filter(|&n| n <= ranking.len()).collect();
        curves.push(DeletionCurve {
            method: "random".to_string(),
            split: None,
            points: deletion_curve(ws.blackbox.as_ref().unwrap(), &ranking, &ws.eval, &ws.table, &steps)?,
        });
        write_deletion_csv(&curves, &c.artifact("deletion_curves.csv"))?;
        out.push("deletion_curves.csv".to_string());

        let refs: Vec<&GlobalImportance> = tables.iter().collect();
        let correlation = match score_correlation(&refs, r.min_count, r.correlation) {
            Ok(m) => {
                write_correlation_csv(&m, &c.artifact("correlation.csv"))?;
                out.push("correlation.csv".to_string());
                Some(m)
            }
            Err(e) => {
                notes.push(format!("correlation matrix not computed: {e}"));
                None
            }
        };

        // case sheets on the eval split
        let surrogate = self.surrogate_predictions(&ws, &ws.eval)?;
        let case_cfg = self.explain_config(false);
        for (kind, name) in [
            (CaseKind::FalsePositive, "cases_false_positive.html"),
            (CaseKind::FalseNegative, "cases_false_negative.html"),
        ] {
            let docs = ws.eval.filter(|d| matches!((d.label, d.predicted_label()), (Some(a), Some(p)) if kind.matches(a, p)));
            let maps = explain_corpus(r.case_method, ws.models(), &docs, &ws.table, &case_cfg)?;
            let sheet = case_sheets(&maps, &docs, &surrogate, kind, r.case_limit, r.display_floor);
            write_text(&c.artifact(name), &sheet.to_html())?;
            out.push(name.to_string());
        }

        let fidelity: Option<FidelityReport> = read_json(&c.artifact(FIDELITY_FILE)).ok();
        let index = index_html(&tables, &curves, correlation.as_ref(), fidelity.as_ref(), &out, &notes, r.top_tokens);
        write_text(&c.artifact(INDEX_FILE), &index)?;
        out.push(INDEX_FILE.to_string());
        self.record("report", &out)?;

        let mut summary = format!("report bundle: {} files in {}\n", out.len(), c.workdir().display());
        for n in &notes {
            let _ = writeln!(summary, "note: {n}");
        }
        Ok(summary)
    }

    pub fn oov_report(&self) -> Result<String> {
        self.config.validate_for(&self.inputs())?;
        self.ensure_workdir()?;
        let ws = self.workspace(false, false)?;
        let mut summary = String::new();
        let mut files = Vec::new();
        for s in [Split::Train, Split::Eval] {
            let report = oov_report(ws.split(s), &ws.table);
            let name = format!("oov_{s}.json");
            write_json(&self.config.artifact(&name), &report)?;
            let _ = writeln!(
                summary,
                "{s}: OOV rate {:.4} over {} documents, {} distinct OOV tokens",
                report.corpus_rate,
                report.documents.len(),
                report.oov_frequencies.len()
            );
            files.push(name);
        }
        self.record("oov-report", &files)?;
        Ok(summary)
    }

    /// Every stage in order: synthetic data, both models, all configured
    /// explanations on both splits, then the report.
    pub fn run_all(&self) -> Result<String> {
        let mut log = self.synth()?;
        log += &self.train_blackbox()?;
        log += &self.train_surrogate()?;
        for &m in &self.config.explain.methods {
            for s in [Split::Train, Split::Eval] {
                log += &self.explain(m, s, None, false)?;
            }
        }
        log += &self.report()?;
        Ok(log)
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Columns: rank, then `<method>_token` and `<method>_score` per table, each
/// listing that table's own top tokens.
pub fn write_top_tokens_csv(tables: &[&GlobalImportance], top: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["rank".to_string()];
    for g in tables {
        header.push(format!("{}_token", g.method));
        header.push(format!("{}_score", g.method));
    }
    w.write_record(&header)?;
    let ranked: Vec<Vec<(&str, f64)>> = tables
        .iter()
        .map(|g| g.ranked().into_iter().take(top).map(|(t, e)| (t, e.normalized_score)).collect())
        .collect();
    let rows = ranked.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..rows {
        let mut rec = vec![(i + 1).to_string()];
        for col in &ranked {
            match col.get(i) {
                Some((t, s)) => {
                    rec.push(t.to_string());
                    rec.push(format!("{s:.2}"));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn index_html(
    tables: &[GlobalImportance],
    curves: &[DeletionCurve],
    correlation: Option<&CorrelationMatrix>,
    fidelity: Option<&FidelityReport>,
    files: &[String],
    notes: &[String],
    top: usize,
) -> String {
    let mut h = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Explanation report</title>\n\
<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin-bottom:1.5em}\
th,td{border:1px solid #bbb;padding:3px 6px;text-align:right}th:first-child,td:first-child{text-align:left}</style>\n\
</head>\n<body>\n<h1>Explanation report</h1>\n",
    );
    if let Some(f) = fidelity {
        let _ = writeln!(
            h,
            "<h2>Surrogate fidelity</h2>\n<p>{} documents. F1 against black-box labels {:.3}; F1 against actual labels {:.3}.</p>",
            f.documents, f.fidelity.vs_blackbox.f1, f.fidelity.vs_actual.f1
        );
    }
    if !tables.is_empty() {
        h.push_str("<h2>Top tokens</h2>\n");
        for g in tables {
            let _ = writeln!(h, "<h3>{}</h3>\n<table>\n<tr><th>token</th><th>normalized score</th><th>count</th></tr>", esc(&g.label()));
            for (t, e) in g.ranked().into_iter().take(top) {
                let _ = writeln!(
                    h,
                    "<tr><td>{}</td><td>{:.2}</td><td>{}</td></tr>",
                    esc(t),
                    e.normalized_score,
                    e.occurrence_count
                );
            }
            h.push_str("</table>\n");
        }
    }
    if !curves.is_empty() {
        h.push_str("<h2>Recall drop after token deletion (eval split)</h2>\n<table>\n<tr><th>ranking</th>");
        let steps: Vec<usize> = curves
            .iter()
            .max_by_key(|c| c.points.len())
            .map(|c| c.points.iter().map(|p| p.n_removed).collect())
            .unwrap_or_default();
        for n in &steps {
            let _ = write!(h, "<th>{n}</th>");
        }
        h.push_str("</tr>\n");
        for c in curves {
            let label = match c.split {
                Some(s) => format!("{}/{}", c.method, s),
                None => c.method.clone(),
            };
            let _ = write!(h, "<tr><td>{}</td>", esc(&label));
            for n in &steps {
                match c.drop_at(*n) {
                    Some(d) => {
                        let _ = write!(h, "<td>{d:.3}</td>");
                    }
                    None => h.push_str("<td></td>"),
                }
            }
            h.push_str("</tr>\n");
        }
        h.push_str("</table>\n");
    }
    if let Some(m) = correlation {
        h.push_str("<h2>Score correlation</h2>\n<table>\n<tr><th></th>");
        for l in &m.labels {
            let _ = write!(h, "<th>{}</th>", esc(l));
        }
        h.push_str("</tr>\n");
        for (l, row) in m.labels.iter().zip(&m.values) {
            let _ = write!(h, "<tr><td>{}</td>", esc(l));
            for v in row {
                let _ = write!(h, "<td>{v:.2}</td>");
            }
            h.push_str("</tr>\n");
        }
        h.push_str("</table>\n");
    }
    if !notes.is_empty() {
        h.push_str("<h2>Notes</h2>\n<ul>\n");
        for n in notes {
            let _ = writeln!(h, "<li>{}</li>", esc(n));
        }
        h.push_str("</ul>\n");
    }
    h.push_str("<h2>Files</h2>\n<ul>\n");
    for f in files {
        let _ = writeln!(h, "<li><a href=\"{0}\">{0}</a></li>", esc(f));
    }
    h.push_str("</ul>\n</body>\n</html>\n");
    h
}
