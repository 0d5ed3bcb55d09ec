//! Command-line pipeline: sampling, MBR and beam decoding, evaluation,
//! sweeps, analyses and significance testing.
//!
//! Every command is a pure function of its inputs, flags and `--seed`. Each
//! run writes a manifest recording its arguments, so `mbr rerun <manifest>`
//! reproduces the outputs. Only the manifest's `created_at` field varies
//! between runs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, DEFAULT_FLAG_THRESHOLD, DEFAULT_PERMUTATION_ITERATIONS, DEFAULT_SWEEP_REPEATS,
};
use crate::beam::{beam_search, BeamConfig};
use crate::error::{Error, Result};
use crate::mbr::{mbr_decode, utility_matrix_cached, Detokenizer, MatrixCache};
use crate::metrics::{parse_metric, UtilityMetric};
use crate::model::{TokenSequence, ToyModel, DEFAULT_MAX_LEN};
use crate::pool::{PoolFile, PoolHeader};
use crate::rng;
use crate::sampling::{
    sample_pool, SamplingPolicy, Strategy, DEFAULT_EPSILON, DEFAULT_NUM_SAMPLES,
};

pub const MANIFEST_NAME: &str = "manifest.json";
const POOL_SUFFIX: &str = ".pool.jsonl";

#[derive(Debug, Parser)]
#[command(name = "mbr", version, about = "Sampling-based MBR decoding toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a candidate pool for every corpus record.
    Sample(SampleArgs),
    /// Pick the minimum Bayes risk candidate of every pool.
    DecodeMbr(DecodeMbrArgs),
    /// Beam-search baseline.
    DecodeBeam(DecodeBeamArgs),
    /// Score hypotheses against corpus references.
    Evaluate(EvaluateArgs),
    /// Mean utility of MBR as a function of candidate-list size.
    Sweep(SweepArgs),
    /// Distribution dumps, mass curves and token annotation.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Paired permutation test between two per-segment score files.
    PermTest(PermTestArgs),
    /// Re-run the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Ancestral,
    Topk,
    Nucleus,
    Epsilon,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value = "epsilon")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

impl PolicyArgs {
    pub fn policy(&self) -> Result<SamplingPolicy> {
        let strategy = match self.strategy {
            StrategyArg::Ancestral => Strategy::Ancestral,
            StrategyArg::Topk => Strategy::TopK { k: self.k },
            StrategyArg::Nucleus => Strategy::Nucleus { p: self.p },
            StrategyArg::Epsilon => Strategy::Epsilon {
                epsilon: self.epsilon,
            },
        };
        SamplingPolicy::new(strategy, self.temperature)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for pool files and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = DEFAULT_NUM_SAMPLES)]
    pub num_samples: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DecodeMbrArgs {
    /// Directory of pool files written by `sample`.
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long, default_value = "chrf")]
    pub metric: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Utility-matrix cache (default: <pools>/matrix-cache).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeBeamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub beam_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON lines with `key` and `chosen`.
    #[arg(long)]
    pub hyps: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "metric", default_values_t = ["chrf".to_string(), "bleu".to_string()])]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Utility used inside MBR.
    #[arg(long, default_value = "chrf")]
    pub metric: String,
    /// Metric scoring the chosen hypothesis against the reference.
    #[arg(long, default_value = "chrf")]
    pub eval_metric: String,
    /// Comma-separated candidate sizes (default: 1,2,4,...,n).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_SWEEP_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Sorted next-token probabilities after a prefix.
    Dump {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        source: String,
        /// Whitespace-separated prefix tokens.
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long, default_value_t = 30)]
        top_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cumulative sentence mass covered by the first m draws of each pool.
    MassCurve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pools: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-token model probabilities of decoded hypotheses.
    Annotate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FLAG_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct PermTestArgs {
    /// Per-segment scores of system A (CSV from `evaluate`).
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "chrf")]
    pub metric: String,
    #[arg(long, default_value_t = DEFAULT_PERMUTATION_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// corpus, hypotheses, manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub key: String,
    pub src: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

/// Loads a JSON-lines corpus; keys must be unique and sources non-empty.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let records: Vec<CorpusRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.key.as_str()) {
            return Err(record_error(&r.key, "duplicate corpus key"));
        }
        if r.src.trim().is_empty() {
            return Err(record_error(&r.key, "empty source"));
        }
        check_key(&r.key)?;
    }
    Ok(records)
}

/// One decoded hypothesis, as written by `decode-mbr` and `decode-beam`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub key: String,
    pub chosen: String,
    #[serde(default = "yes")]
    pub terminated: bool,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name; `rerun` replays them.
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<SamplingPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metric_ids: Vec<String>,
    /// Unix seconds; the only field that differs between identical runs.
    pub created_at: u64,
}

impl RunManifest {
    fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            seed: None,
            model_path: None,
            model_hash: None,
            policy: None,
            n: None,
            max_len: None,
            metric_ids: Vec::new(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    fn with_model(mut self, path: &Path, model: &ToyModel) -> Self {
        self.model_path = Some(path.display().to_string());
        self.model_hash = Some(model.content_hash());
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(path, &text)
    }
}

fn record_error(key: &str, message: impl Into<String>) -> Error {
    Error::Record {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Attaches a record key to validation failures; I/O and scorer failures keep
/// their own kind so the exit code stays meaningful.
fn for_record(key: &str, e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Scorer(_) | Error::MetricPair { .. } | Error::Record { .. } => e,
        other => record_error(key, other.to_string()),
    }
}

fn check_key(key: &str) -> Result<()> {
    if key.is_empty() || key.contains(['/', '\\']) || key == "." || key == ".." {
        return Err(record_error(key, "key cannot be used as a file name"));
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect()
}

/// Manifest path for a command writing a single file.
fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Pool files in a directory, sorted by file name.
pub fn pool_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(POOL_SUFFIX))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn references(corpus: &[CorpusRecord]) -> BTreeMap<&str, &str> {
    corpus
        .iter()
        .filter_map(|r| r.reference.as_deref().map(|t| (r.key.as_str(), t)))
        .collect()
}

// ---------------------------------------------------------------------------
// commands

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<S: AsRef<str>>(args: &[S]) -> Result<()> {
    let argv: Vec<String> = args.iter().map(|a| a.as_ref().to_string()).collect();
    let cli = Cli::try_parse_from(std::iter::once("mbr".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    run(cli, &argv)
}

/// Runs a parsed command; `argv` is recorded in the manifest.
pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Sample(a) => cmd_sample(&a, argv),
        Command::DecodeMbr(a) => cmd_decode_mbr(&a, argv),
        Command::DecodeBeam(a) => cmd_decode_beam(&a, argv),
        Command::Evaluate(a) => cmd_evaluate(&a, argv),
        Command::Sweep(a) => cmd_sweep(&a, argv),
        Command::Analyze(a) => cmd_analyze(&a, argv),
        Command::PermTest(a) => cmd_perm_test(&a, argv),
        Command::Rerun { manifest } => {
            let m = RunManifest::load(&manifest)?;
            if m.args.first().map(String::as_str) == Some("rerun") {
                return Err(Error::InvalidArgument("manifest records a rerun".into()));
            }
            run_args(&m.args)
        }
    }
}

pub fn cmd_sample(a: &SampleArgs, argv: &[String]) -> Result<()> {
    let model = ToyModel::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let policy = a.policy.policy()?;
    if a.num_samples == 0 || a.max_len == 0 {
        return Err(Error::InvalidArgument(
            "--num-samples and --max-len must be >= 1".into(),
        ));
    }
    for r in &corpus {
        match model.sources().get(&r.key) {
            None => return Err(record_error(&r.key, "source key not present in the model")),
            Some(text) if text.trim() != r.src.trim() => {
                return Err(record_error(&r.key, "source text differs from the model's"))
            }
            Some(_) => {}
        }
    }
    create_dir(&a.out)?;
    corpus.par_iter().try_for_each(|r| {
        let pool = sample_pool(&model, &r.key, &policy, a.seed, a.num_samples, a.max_len)
            .map_err(|e| for_record(&r.key, e))?;
        let file = PoolFile {
            header: PoolHeader {
                source_key: r.key.clone(),
                policy,
                seed: a.seed,
                n: a.num_samples,
                max_len: a.max_len,
                vocab: model.vocab().tokens().to_vec(),
            },
            pool,
        };
        file.write(a.out.join(format!("{}{POOL_SUFFIX}", r.key)), model.vocab())
    })?;
    let mut manifest = RunManifest::new("sample", argv).with_model(&a.model, &model);
    manifest.seed = Some(a.seed);
    manifest.policy = Some(policy);
    manifest.n = Some(a.num_samples);
    manifest.max_len = Some(a.max_len);
    manifest.write(&a.out.join(MANIFEST_NAME))
}

#[derive(Debug, Serialize)]
struct MbrRow {
    key: String,
    chosen: String,
    terminated: bool,
    expected_utility: f64,
    ranking_size: usize,
}

/// Decodes every pool in `pools_dir` with `metric`; rows sorted by key.
pub fn decode_pools(
    pools_dir: &Path,
    metric: &dyn UtilityMetric,
    cache: Option<&MatrixCache>,
) -> Result<Vec<(String, crate::MbrResult, String)>> {
    let detok = Detokenizer::default();
    let paths = pool_paths(pools_dir)?;
    let mut rows = paths
        .par_iter()
        .map(|path| {
            let (file, vocab) = PoolFile::read(path)?;
            let key = file.header.source_key.clone();
            let matrix = utility_matrix_cached(cache, &file.pool, &vocab, metric, &detok)
                .map_err(|e| for_record(&key, e))?;
            let result = mbr_decode(&file.pool, &matrix).map_err(|e| for_record(&key, e))?;
            let text = detok.text(&result.chosen_seq, &vocab);
            Ok((key, result, text))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(rows)
}

pub fn cmd_decode_mbr(a: &DecodeMbrArgs, argv: &[String]) -> Result<()> {
    let metric = parse_metric(&a.metric)?;
    let cache_dir = a
        .cache_dir
        .clone()
        .unwrap_or_else(|| a.pools.join("matrix-cache"));
    let cache = MatrixCache::new(cache_dir)?;
    let rows: Vec<MbrRow> = decode_pools(&a.pools, metric.as_ref(), Some(&cache))?
        .into_iter()
        .map(|(key, r, chosen)| MbrRow {
            key,
            chosen,
            terminated: r.chosen_seq.is_terminated(),
            expected_utility: r.expected_utility(),
            ranking_size: r.ranking.len(),
        })
        .collect();
    write_file(&a.out, &jsonl(&rows))?;
    let mut manifest = RunManifest::new("decode-mbr", argv);
    manifest.metric_ids = vec![metric.id()];
    manifest.write(&manifest_beside(&a.out))
}

#[derive(Debug, Serialize)]
struct BeamRow {
    key: String,
    chosen: String,
    terminated: bool,
    #[serde(with = "crate::util::logprob_serde")]
    logprob: f64,
    #[serde(with = "crate::util::logprob_serde")]
    penalized_score: f64,
}

pub fn cmd_decode_beam(a: &DecodeBeamArgs, argv: &[String]) -> Result<()> {
    let model = ToyModel::load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let cfg = BeamConfig {
        beam_size: a.beam_size,
        alpha: a.alpha,
        max_len: a.max_len,
    };
    cfg.validate()?;
    let mut rows = corpus
        .par_iter()
        .map(|r| {
            let h = beam_search(&model, &r.key, &cfg).map_err(|e| for_record(&r.key, e))?;
            Ok(BeamRow {
                key: r.key.clone(),
                chosen: h.seq.text(model.vocab()),
                terminated: h.seq.is_terminated(),
                logprob: h.logprob,
                penalized_score: h.penalized_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.key.cmp(&b.key));
    write_file(&a.out, &jsonl(&rows))?;
    let mut manifest = RunManifest::new("decode-beam", argv).with_model(&a.model, &model);
    manifest.max_len = Some(a.max_len);
    manifest.write(&manifest_beside(&a.out))
}

/// Per-segment scores plus one `__mean__` row per metric, as CSV
/// `key,metric,score`.
pub fn evaluate_table(
    hyps: &[Hypothesis],
    corpus: &[CorpusRecord],
    metrics: &[Box<dyn UtilityMetric>],
) -> Result<String> {
    let refs = references(corpus);
    let mut hyps: Vec<&Hypothesis> = hyps.iter().collect();
    hyps.sort_by(|a, b| a.key.cmp(&b.key));
    let pairs = hyps
        .iter()
        .map(|h| {
            refs.get(h.key.as_str())
                .map(|r| (h.chosen.as_str(), *r))
                .ok_or_else(|| record_error(&h.key, "no reference for hypothesis"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("key,metric,score\n");
    let mut summary = String::new();
    let mut per_metric = Vec::new();
    for m in metrics {
        per_metric.push(m.score_pairs(&pairs)?);
    }
    for (i, h) in hyps.iter().enumerate() {
        for (m, scores) in metrics.iter().zip(&per_metric) {
            out.push_str(&format!("{},{},{}\n", h.key, m.id(), scores[i]));
        }
    }
    if !hyps.is_empty() {
        for (m, scores) in metrics.iter().zip(&per_metric) {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            summary.push_str(&format!("__mean__,{},{}\n", m.id(), mean));
        }
    }
    out.push_str(&summary);
    Ok(out)
}

pub fn cmd_evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let hyps: Vec<Hypothesis> = read_jsonl(&a.hyps)?;
    let corpus = load_corpus(&a.corpus)?;
    let metrics = a
        .metrics
        .iter()
        .map(|m| parse_metric(m))
        .collect::<Result<Vec<_>>>()?;
    if hyps.is_empty() {
        eprintln!("warning: {} contains no hypotheses", a.hyps.display());
    }
    write_file(&a.out, &evaluate_table(&hyps, &corpus, &metrics)?)?;
    let mut manifest = RunManifest::new("evaluate", argv);
    manifest.metric_ids = metrics.iter().map(|m| m.id()).collect();
    manifest.write(&manifest_beside(&a.out))
}

pub fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> Result<()> {
    let metric = parse_metric(&a.metric)?;
    let eval_metric = parse_metric(&a.eval_metric)?;
    let corpus = load_corpus(&a.corpus)?;
    let refs = references(&corpus);
    let cache_dir = a
        .cache_dir
        .clone()
        .unwrap_or_else(|| a.pools.join("matrix-cache"));
    let cache = MatrixCache::new(cache_dir)?;
    let detok = Detokenizer::default();
    create_dir(&a.out)?;
    for path in pool_paths(&a.pools)? {
        let (file, vocab) = PoolFile::read(&path)?;
        let key = file.header.source_key.as_str();
        let reference = *refs
            .get(key)
            .ok_or_else(|| record_error(key, "no reference for pool"))?;
        let matrix =
            utility_matrix_cached(Some(&cache), &file.pool, &vocab, metric.as_ref(), &detok)
                .map_err(|e| for_record(key, e))?;
        let texts: Vec<String> = file
            .pool
            .entries()
            .iter()
            .map(|e| detok.text(&e.seq, &vocab))
            .collect();
        let pairs: Vec<(&str, &str)> = texts.iter().map(|t| (t.as_str(), reference)).collect();
        let eval = eval_metric.score_pairs(&pairs)?;
        let sizes = if a.sizes.is_empty() {
            analysis::doubling_sizes(file.pool.n())
        } else {
            a.sizes.clone()
        };
        let curve =
            analysis::candidate_size_sweep(&file.pool, &matrix, &eval, &sizes, a.repeats, a.seed)
                .map_err(|e| for_record(key, e))?;
        let mut csv = String::from("size,mean,stderr\n");
        for p in &curve.points {
            csv.push_str(&format!("{},{},{}\n", p.size, p.mean, p.stderr));
        }
        write_file(&a.out.join(format!("{key}.sweep.csv")), &csv)?;
    }
    let mut manifest = RunManifest::new("sweep", argv);
    manifest.seed = Some(a.seed);
    manifest.metric_ids = vec![metric.id(), eval_metric.id()];
    manifest.write(&a.out.join(MANIFEST_NAME))
}

pub fn cmd_analyze(cmd: &AnalyzeCommand, argv: &[String]) -> Result<()> {
    match cmd {
        AnalyzeCommand::Dump {
            model: model_path,
            source,
            prefix,
            top_n,
            out,
        } => {
            let model = ToyModel::load(model_path)?;
            let prefix = model.vocab().encode(prefix, false)?;
            let dump = analysis::dump_next_token_dist(&model, source, &prefix, *top_n)?;
            let mut csv = String::from("token,prob\n");
            for (id, p) in &dump.top {
                csv.push_str(&format!("{},{}\n", model.vocab().token(*id), p));
            }
            csv.push_str(&format!("<tail>,{}\n", dump.tail_mass));
            write_file(out, &csv)?;
            RunManifest::new("analyze-dump", argv)
                .with_model(model_path, &model)
                .write(&manifest_beside(out))
        }
        AnalyzeCommand::MassCurve {
            model: model_path,
            pools,
            out,
        } => {
            let model = ToyModel::load(model_path)?;
            create_dir(out)?;
            for path in pool_paths(pools)? {
                let (file, vocab) = PoolFile::read(&path)?;
                let key = file.header.source_key.as_str();
                if vocab != *model.vocab() {
                    return Err(record_error(
                        key,
                        "pool vocabulary differs from the model's",
                    ));
                }
                let curve = analysis::cumulative_mass_curve(&file.pool, &model, key)
                    .map_err(|e| for_record(key, e))?;
                let mut csv = String::from("m,cumulative_mass\n");
                for (m, mass) in &curve.points {
                    csv.push_str(&format!("{m},{mass}\n"));
                }
                write_file(&out.join(format!("{key}.mass.csv")), &csv)?;
            }
            RunManifest::new("analyze-mass-curve", argv)
                .with_model(model_path, &model)
                .write(&out.join(MANIFEST_NAME))
        }
        AnalyzeCommand::Annotate {
            model: model_path,
            hyps,
            threshold,
            out,
        } => {
            let model = ToyModel::load(model_path)?;
            let hyps: Vec<Hypothesis> = read_jsonl(hyps)?;
            create_dir(out)?;
            for h in &hyps {
                check_key(&h.key)?;
                let seq: TokenSequence = model
                    .vocab()
                    .encode(&h.chosen, h.terminated)
                    .map_err(|e| for_record(&h.key, e))?;
                let ann = analysis::annotate_token_probs(&model, &h.key, &seq, *threshold)
                    .map_err(|e| for_record(&h.key, e))?;
                let mut csv = String::from("position,token,prob,flagged\n");
                for t in &ann.tokens {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        t.position,
                        model.vocab().token(t.token),
                        t.prob,
                        t.flagged
                    ));
                }
                write_file(&out.join(format!("{}.annotation.csv", h.key)), &csv)?;
            }
            RunManifest::new("analyze-annotate", argv)
                .with_model(model_path, &model)
                .write(&out.join(MANIFEST_NAME))
        }
    }
}

/// Reads `key,metric,score` rows for one metric, skipping summary rows.
pub fn read_scores(path: &Path, metric: &str) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.rsplitn(3, ',').collect();
        let [score, m, key] = cols[..] else {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected key,metric,score",
                path.display(),
                i + 1
            )));
        };
        if m != metric || key == "__mean__" {
            continue;
        }
        let score: f64 = score.parse().map_err(|_| {
            Error::InvalidArgument(format!("{}:{}: bad score {score:?}", path.display(), i + 1))
        })?;
        out.insert(key.to_string(), score);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PermTestReport {
    metric: String,
    segments: usize,
    mean_a: f64,
    mean_b: f64,
    iterations: usize,
    p_value: f64,
}

pub fn cmd_perm_test(a: &PermTestArgs, argv: &[String]) -> Result<()> {
    let sa = read_scores(&a.a, &a.metric)?;
    let sb = read_scores(&a.b, &a.metric)?;
    if sa.keys().ne(sb.keys()) {
        return Err(Error::InvalidArgument(
            "score files cover different segment keys".into(),
        ));
    }
    let xs: Vec<f64> = sa.values().copied().collect();
    let ys: Vec<f64> = sb.values().copied().collect();
    let mut r = rng::substream(a.seed, "perm-test", 0);
    let p_value = analysis::permutation_test(&xs, &ys, a.iterations, &mut r)?;
    let report = PermTestReport {
        metric: a.metric.clone(),
        segments: xs.len(),
        mean_a: xs.iter().sum::<f64>() / xs.len() as f64,
        mean_b: ys.iter().sum::<f64>() / ys.len() as f64,
        iterations: a.iterations,
        p_value,
    };
    let line = serde_json::to_string(&report).expect("report serializes");
    println!("{line}");
    write_file(&a.out, &(line + "\n"))?;
    let mut manifest = RunManifest::new("perm-test", argv);
    manifest.seed = Some(a.seed);
    manifest.write(&manifest_beside(&a.out))
}
