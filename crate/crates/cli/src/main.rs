use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrptext::analysis::Split;
use lrptext::attribution::Method;
use lrptext::embeddings::OovMode;
use lrptext::{Error, Pipeline, PipelineConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Explain a black-box text classifier through a convolutional surrogate.
#[derive(Debug, Parser)]
#[command(name = "lrptext", version)]
struct Cli {
    /// Pipeline configuration (JSON). Defaults describe the synthetic desk corpus.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stochastic stage; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-document parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Working directory for all artifacts; overrides the config.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    /// Read labels from a 1–5 `stars` column (1–2 → 1, 4–5 → 0, 3 dropped).
    #[arg(long, global = true)]
    star_labels: bool,

    /// Leave out-of-vocabulary tokens out of the black box's averaging denominator.
    #[arg(long, global = true)]
    oov_skip: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its embedding table.
    Synth {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_eval: Option<usize>,
    },
    /// Train the averaged-embedding linear black box.
    TrainBlackbox,
    /// Train the CNN surrogate on black-box labels and report fidelity.
    TrainSurrogate,
    /// Explain predicted-positive documents of a split, or a single document.
    Explain {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, value_parser = parse_split, default_value = "eval")]
        split: Split,
        #[arg(long)]
        doc_id: Option<String>,
        /// Also render highlighted HTML.
        #[arg(long)]
        html: bool,
    },
    /// Build the report bundle from existing explanations.
    Report,
    /// Out-of-vocabulary diagnostics for both splits.
    OovReport,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(cli: &Cli) -> lrptext::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.workdir {
        config.paths.workdir = dir.clone();
    }
    if cli.star_labels {
        config.corpus.star_labels = true;
    }
    if cli.oov_skip {
        config.blackbox.oov_mode = OovMode::Skip;
    }
    if let Command::Synth { n_train, n_eval } = &cli.command {
        if let Some(n) = n_train {
            config.synth.n_train = *n;
        }
        if let Some(n) = n_eval {
            config.synth.n_eval = *n;
        }
    }
    Ok(config)
}

fn run(cli: &Cli) -> lrptext::Result<String> {
    let pipeline = Pipeline::new(load_config(cli)?);
    match &cli.command {
        Command::Synth { .. } => pipeline.synth(),
        Command::TrainBlackbox => pipeline.train_blackbox(),
        Command::TrainSurrogate => pipeline.train_surrogate(),
        Command::Explain { method, split, doc_id, html } => pipeline.explain(*method, *split, doc_id.as_deref(), *html),
        Command::Report => pipeline.report(),
        Command::OovReport => pipeline.oov_report(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
