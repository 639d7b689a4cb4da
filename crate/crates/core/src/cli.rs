//! Command-line interface: `sample`, `classify`, `score` and `cache`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::client::{CompletionService, DiskCache, Generator, RemoteClient, ScriptedClient};
use crate::config::RunConfig;
use crate::corpus::{sample_split, select_shots, Corpus, Provenance, SplitManifest};
use crate::domain::DefinitionCatalog;
use crate::error::{ConfigError, Error, Result};
use crate::pipeline::{
    run_task, score_predictions, Classifier, FoundationSource, ItemFailure, Predictions, Report,
    RunSettings, Task,
};
use crate::prompts::{Renderer, TemplateSet};

#[derive(Debug, Parser)]
#[command(name = "moralframes", version, about = "Few-shot morality-frame identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a class-balanced train/test split and write its manifest.
    Sample(SampleArgs),
    /// Run one task over the test split and write reports and traces.
    Classify(Box<ClassifyArgs>),
    /// Rescore a predictions file against a gold corpus.
    Score(ScoreArgs),
    /// Inspect or clear the completion cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct ClassifyArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long, short = 'k')]
    pub shots: Option<usize>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Serve completions from a transcript file instead of the endpoint.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub definitions: Option<PathBuf>,
    /// Predictions of a foundation run to use instead of gold foundations.
    #[arg(long)]
    pub predicted_foundations: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub shot_seed: Option<u64>,
    #[arg(long)]
    pub tie_seed: Option<u64>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub token_budget: Option<usize>,
    #[arg(long)]
    pub top_k: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub num_seeds: Option<u32>,
    #[arg(long)]
    pub samples_per_seed: Option<u32>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    Inspect {
        #[arg(long)]
        dir: PathBuf,
    },
    Clear {
        #[arg(long)]
        dir: PathBuf,
    },
}

impl ClassifyArgs {
    /// The config file (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let mut c = RunConfig::default();
                c.apply_env();
                c
            }
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone(); })*
            };
        }
        macro_rules! set_some {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = Some(v.clone()); })*
            };
        }
        set!(task => task, shots => shots, split_seed => split_seed, shot_seed => shot_seed,
             tie_seed => tie_seed, train_per_class => train_per_class,
             test_per_class => test_per_class, threshold => threshold,
             concurrency => concurrency, token_budget => token_budget,
             top_k => generation.top_k, temperature => generation.temperature,
             num_seeds => generation.num_seeds, samples_per_seed => generation.samples_per_seed,
             max_new_tokens => generation.max_new_tokens, endpoint => endpoint.url);
        set_some!(corpus => paths.corpus, split => paths.split, out => paths.out,
                  cache => paths.cache, transcript => paths.transcript, model => endpoint.model,
                  templates => paths.templates, definitions => paths.definitions,
                  predicted_foundations => paths.predicted_foundations);
        c.validate()?;
        Ok(c)
    }
}

/// Self-describing record of a run, enough to replay it.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub task: Task,
    pub shots: usize,
    pub config_hash: String,
    pub corpus: Provenance,
    pub template_hash: String,
    pub definitions_sha256: String,
    pub service: String,
    pub split: SplitManifest,
    pub config: RunConfig,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug)]
pub struct ClassifyOutcome {
    pub report: Report,
    pub out_dir: PathBuf,
    pub service_calls: usize,
    pub failures: Vec<ItemFailure>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializes");
    out.push(b'\n');
    out
}

fn jsonl<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("serializes");
        out.push(b'\n');
    }
    out
}

fn load_predictions(path: &Path) -> Result<Predictions> {
    let raw = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&raw).map_err(|e| Error::Predictions(format!("{}: {e}", path.display())))
}

fn write_report(dir: &Path, report: &Report) -> Result<()> {
    write_file(&dir.join("report.json"), &pretty(report))?;
    write_file(&dir.join("report.csv"), report.to_csv().as_bytes())
}

/// Run a classification task end to end. With `service` given it replaces
/// the configured backend.
pub fn classify(
    config: &RunConfig,
    service: Option<Arc<dyn CompletionService>>,
) -> Result<ClassifyOutcome> {
    config.validate()?;
    config.task.validate_shots(config.shots)?;
    let corpus_path = config
        .paths
        .corpus
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("no corpus given (paths.corpus or --corpus)".into()))?;
    let corpus = Corpus::load(corpus_path)?;
    let (train, test, test_per_class) = match &config.paths.split {
        Some(p) => {
            let raw = fs::read(p).map_err(io_err(p))?;
            let manifest: SplitManifest = serde_json::from_slice(&raw)
                .map_err(|e| ConfigError::Invalid(format!("split manifest {}: {e}", p.display())))?;
            if manifest.corpus_sha256 != corpus.provenance().sha256 {
                return Err(ConfigError::Invalid(format!(
                    "split manifest {} was drawn from a different corpus",
                    p.display()
                ))
                .into());
            }
            let (train, test) = manifest.resolve(&corpus)?;
            (train, test, manifest.test_per_class)
        }
        None => {
            let (train, test) = sample_split(
                &corpus,
                config.train_per_class,
                config.test_per_class,
                config.split_seed,
            )?;
            (train, test, config.test_per_class)
        }
    };
    let split = SplitManifest::new(&corpus, &train, &test, test_per_class);
    let shots = select_shots(&train, config.shots, config.shot_seed)?;

    let catalog = match &config.paths.definitions {
        Some(p) => DefinitionCatalog::load(p)?,
        None => DefinitionCatalog::bundled(),
    };
    let templates = match &config.paths.templates {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::bundled(),
    };
    let definitions_sha256 = hex::encode(Sha256::digest(catalog.to_jsonl().as_bytes()));
    let template_hash = templates.hash();
    let renderer = Renderer::new(catalog, templates, config.token_budget);

    let service: Arc<dyn CompletionService> = match (service, &config.paths.transcript) {
        (Some(s), _) => s,
        (None, Some(t)) => Arc::new(ScriptedClient::from_transcript(t)?),
        (None, None) => Arc::new(RemoteClient::new(config.endpoint.clone())?),
    };
    let mut generator = Generator::new(service);
    if let Some(dir) = &config.paths.cache {
        generator = generator.with_cache(DiskCache::open(dir)?);
    }
    let foundations = match &config.paths.predicted_foundations {
        Some(p) => FoundationSource::from_predictions(&load_predictions(p)?)?,
        None => FoundationSource::Gold,
    };

    let classifier = Classifier {
        renderer: &renderer,
        generator: &generator,
        config: &config.generation,
        tie_seed: config.tie_seed,
        threshold: config.threshold,
    };
    let settings = RunSettings {
        shots: config.shots,
        split_seed: config.split_seed,
        shot_seed: config.shot_seed,
    };
    let output = run_task(
        &classifier,
        config.task,
        &shots,
        &test,
        &foundations,
        settings,
        config.concurrency,
    )?;
    let report = score_predictions(&output.predictions, &corpus)?;

    let out_dir = config
        .paths
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-k{}", config.task, config.shots)));
    let mut replay = config.clone();
    replay.paths.out = None;
    replay.paths.cache = None;
    let manifest = RunManifest {
        tool: "moralframes",
        version: env!("CARGO_PKG_VERSION"),
        task: config.task,
        shots: config.shots,
        config_hash: config.hash(),
        corpus: corpus.provenance().clone(),
        template_hash,
        definitions_sha256,
        service: generator.namespace(),
        split,
        config: replay,
        failures: output.failures.clone(),
    };
    write_file(&out_dir.join("manifest.json"), &pretty(&manifest))?;
    write_file(&out_dir.join("predictions.json"), &pretty(&output.predictions))?;
    write_report(&out_dir, &report)?;
    write_file(&out_dir.join("trace.jsonl"), &jsonl(&output.traces))?;
    let mut gz = GzEncoder::new(Vec::new(), Compression::default());
    gz.write_all(&jsonl(&output.generations))
        .and_then(|_| gz.finish())
        .map_err(io_err(&out_dir))
        .and_then(|bytes| write_file(&out_dir.join("generations.jsonl.gz"), &bytes))?;

    Ok(ClassifyOutcome {
        report,
        out_dir,
        service_calls: generator.service_calls(),
        failures: output.failures,
    })
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let out_err = |e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    };
    match cli.command {
        Command::Sample(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let (train, test) = sample_split(&corpus, a.train_per_class, a.test_per_class, a.seed)?;
            let manifest = SplitManifest::new(&corpus, &train, &test, a.test_per_class);
            write_file(&a.out, &pretty(&manifest))?;
            writeln!(
                stdout,
                "train: {} items, {} entity pairs\ntest: {} items, {} entity pairs\nwrote {}",
                train.len(),
                train.entity_pair_count(),
                test.len(),
                test.entity_pair_count(),
                a.out.display()
            )
            .map_err(out_err)?;
        }
        Command::Classify(a) => {
            let config = a.resolve()?;
            let outcome = classify(&config, None)?;
            write!(stdout, "{}", outcome.report.to_table()).map_err(out_err)?;
            writeln!(stdout, "wrote {}", outcome.out_dir.display()).map_err(out_err)?;
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("item {}: {}", f.id, f.message);
                }
                return Err(Error::EndpointFailures(outcome.failures.len()));
            }
        }
        Command::Score(a) => {
            let predictions = load_predictions(&a.predictions)?;
            let gold = Corpus::load(&a.gold)?;
            let report = score_predictions(&predictions, &gold)?;
            write!(stdout, "{}", report.to_table()).map_err(out_err)?;
            if let Some(dir) = &a.out {
                write_report(dir, &report)?;
            }
        }
        Command::Cache { action } => match action {
            CacheAction::Inspect { dir } => {
                let stats = DiskCache::open(&dir)?.stats()?;
                writeln!(stdout, "{}: {} entries, {} bytes", dir.display(), stats.entries, stats.bytes)
                    .map_err(out_err)?;
            }
            CacheAction::Clear { dir } => {
                let n = DiskCache::open(&dir)?.clear()?;
                writeln!(stdout, "removed {n} entries from {}", dir.display()).map_err(out_err)?;
            }
        },
    }
    Ok(())
}

/// Parse arguments, run, and map failures onto exit codes.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}
