//! Utility metrics u(h, r): character n-gram F-score, smoothed sentence BLEU,
//! exact match, and an adapter for external learned scorers.

use std::collections::HashMap;
use std::fs;
use std::hash::Hash;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScorerError};

/// A utility function over detokenized strings.
pub trait UtilityMetric: Send + Sync {
    fn id(&self) -> String;

    /// Inclusive range every score lies in.
    fn range(&self) -> (f64, f64);

    /// Whether u(h, r) may differ from u(r, h).
    fn directional(&self) -> bool {
        true
    }

    /// Scores `(hypothesis, reference)` pairs, results in input order.
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;
}

// ---------------------------------------------------------------------------
// chrF

pub const CHRF_MAX_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

fn ngram_counts<T: Eq + Hash>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if items.len() >= n {
        for gram in items.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_matches<T: Eq + Hash>(
    hyp: &HashMap<&[T], usize>,
    reference: &HashMap<&[T], usize>,
) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Character n-gram F-score in [0, 1].
///
/// Whitespace is removed before extracting n-grams. Per order `n`, precision
/// and recall are clipped-match ratios (0 when a side has no n-grams); orders
/// where neither side has n-grams are skipped. Precision and recall are
/// averaged over the remaining orders and combined as
/// `(1 + β²)·P·R / (β²·P + R)`. Two strings without any characters score 1.
pub fn chrf(h: &str, r: &str, max_order: usize, beta: f64) -> f64 {
    assert!(max_order >= 1, "chrF needs max_order >= 1");
    let hc: Vec<char> = h.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = r.chars().filter(|c| !c.is_whitespace()).collect();
    let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=max_order {
        let hn = hc.len().saturating_sub(n - 1);
        let rn = rc.len().saturating_sub(n - 1);
        if hn == 0 && rn == 0 {
            continue;
        }
        orders += 1;
        if hn == 0 || rn == 0 {
            continue;
        }
        let matches = clipped_matches(&ngram_counts(&hc, n), &ngram_counts(&rc, n)) as f64;
        p_sum += matches / hn as f64;
        r_sum += matches / rn as f64;
    }
    if orders == 0 {
        return 1.0;
    }
    let p = p_sum / orders as f64;
    let rec = r_sum / orders as f64;
    let b2 = beta * beta;
    let denom = b2 * p + rec;
    if denom == 0.0 {
        0.0
    } else {
        ((1.0 + b2) * p * rec / denom).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chrf {
    pub max_order: usize,
    pub beta: f64,
}

impl Default for Chrf {
    fn default() -> Self {
        Chrf {
            max_order: CHRF_MAX_ORDER,
            beta: CHRF_BETA,
        }
    }
}

impl UtilityMetric for Chrf {
    fn id(&self) -> String {
        if *self == Chrf::default() {
            "chrf".into()
        } else {
            format!("chrf(order={},beta={})", self.max_order, self.beta)
        }
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn directional(&self) -> bool {
        self.beta != 1.0
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs
            .par_iter()
            .map(|(h, r)| chrf(h, r, self.max_order, self.beta))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// sentence BLEU

pub const BLEU_MAX_ORDER: usize = 4;

/// Sentence BLEU over whitespace tokens, in [0, 1].
///
/// Order-1 precision is unsmoothed; orders >= 2 use add-one smoothing on
/// both numerator and denominator. Brevity penalty `exp(1 - r/c)` applies when
/// the hypothesis is shorter than the reference. Two empty strings score 1.
pub fn sentence_bleu(h: &str, r: &str, max_order: usize) -> f64 {
    assert!(max_order >= 1, "BLEU needs max_order >= 1");
    let ht: Vec<&str> = h.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    if ht.is_empty() {
        return if rt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let total = ht.len().saturating_sub(n - 1) as f64;
        let matches = clipped_matches(&ngram_counts(&ht, n), &ngram_counts(&rt, n)) as f64;
        let precision = if n == 1 {
            matches / total
        } else {
            (matches + 1.0) / (total + 1.0)
        };
        if precision == 0.0 {
            return 0.0;
        }
        log_sum += precision.ln();
    }
    let (c, rl) = (ht.len() as f64, rt.len() as f64);
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    (bp * (log_sum / max_order as f64).exp()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceBleu {
    pub max_order: usize,
}

impl Default for SentenceBleu {
    fn default() -> Self {
        SentenceBleu {
            max_order: BLEU_MAX_ORDER,
        }
    }
}

impl UtilityMetric for SentenceBleu {
    fn id(&self) -> String {
        if self.max_order == BLEU_MAX_ORDER {
            "bleu".into()
        } else {
            format!("bleu(order={})", self.max_order)
        }
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs
            .par_iter()
            .map(|(h, r)| sentence_bleu(h, r, self.max_order))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// exact match

pub fn exact_match(h: &str, r: &str) -> f64 {
    if h.as_bytes() == r.as_bytes() {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExactMatch;

impl UtilityMetric for ExactMatch {
    fn id(&self) -> String {
        "exact".into()
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn directional(&self) -> bool {
        false
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs.iter().map(|(h, r)| exact_match(h, r)).collect())
    }
}

// ---------------------------------------------------------------------------
// external scorer

/// Configuration of a subprocess scorer speaking the line protocol:
/// requests `{"id":..,"hyp":..,"ref":..}` on its stdin, responses
/// `{"id":..,"score":..}` on its stdout, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScorerConfig {
    pub id: String,
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_range")]
    pub range: (f64, f64),
}

fn default_batch_size() -> usize {
    64
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_range() -> (f64, f64) {
    (0.0, 1.0)
}

impl ExternalScorerConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExternalScorerConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "scorer batch_size must be >= 1".into(),
            ));
        }
        if self.command.is_empty() {
            return Err(Error::InvalidArgument("scorer command is empty".into()));
        }
        if self.range.0.is_nan() || self.range.1.is_nan() || self.range.0 > self.range.1 {
            return Err(Error::InvalidArgument("scorer range is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    id: u64,
    hyp: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    id: u64,
    score: f64,
}

/// Sequential access to a scorer subprocess. Each batch is one invocation:
/// the requests are written to its stdin, stdin is closed, and the responses
/// are read until the process closes its stdout.
pub struct ExternalScorer {
    cfg: ExternalScorerConfig,
    channel: Mutex<()>,
    pairs_scored: AtomicUsize,
    batches_sent: AtomicUsize,
}

impl ExternalScorer {
    pub fn new(cfg: ExternalScorerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ExternalScorer {
            cfg,
            channel: Mutex::new(()),
            pairs_scored: AtomicUsize::new(0),
            batches_sent: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ExternalScorerConfig {
        &self.cfg
    }

    /// Number of pairs successfully scored so far.
    pub fn pairs_scored(&self) -> usize {
        self.pairs_scored.load(Ordering::Relaxed)
    }

    pub fn batches_sent(&self) -> usize {
        self.batches_sent.load(Ordering::Relaxed)
    }

    /// Scores `(id, hyp, ref)` triples in batches of `batch_size`. Responses
    /// are matched by id, so the scorer may answer in any order. Results come
    /// back in input order.
    pub fn score_batch(&self, pairs: &[(u64, &str, &str)]) -> Result<Vec<(u64, f64)>, ScorerError> {
        let _guard = self.channel.lock().expect("scorer lock");
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.cfg.batch_size) {
            out.extend(self.run_batch(chunk)?);
            self.pairs_scored.fetch_add(chunk.len(), Ordering::Relaxed);
        }
        Ok(out)
    }

    fn run_batch(&self, chunk: &[(u64, &str, &str)]) -> Result<Vec<(u64, f64)>, ScorerError> {
        let mut payload = String::new();
        for &(id, hyp, reference) in chunk {
            let req = ScoreRequest { id, hyp, reference };
            payload.push_str(&serde_json::to_string(&req).expect("request serializes"));
            payload.push('\n');
        }

        let mut child = Command::new(&self.cfg.command[0])
            .args(&self.cfg.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ScorerError::Spawn {
                command: self.cfg.command.clone(),
                source,
            })?;
        self.batches_sent.fetch_add(1, Ordering::Relaxed);
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        // Writer and reader run on their own threads so a scorer that answers
        // while still reading cannot deadlock on full pipes.
        let writer = thread::spawn(move || -> std::io::Result<()> {
            stdin.write_all(payload.as_bytes())?;
            stdin.flush()
        });
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let lines: std::io::Result<Vec<String>> = BufReader::new(stdout).lines().collect();
            let _ = tx.send(lines);
        });

        let lines = match rx.recv_timeout(self.cfg.timeout()) {
            Ok(lines) => lines,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ScorerError::Timeout(self.cfg.timeout()));
            }
        };
        let _ = child.wait();
        // A scorer that exits without reading everything breaks the pipe; that
        // surfaces below as missing ids rather than as a write error.
        let _ = writer.join();
        let lines = lines?;
        self.collect_scores(chunk, &lines)
    }

    fn collect_scores(
        &self,
        chunk: &[(u64, &str, &str)],
        lines: &[String],
    ) -> Result<Vec<(u64, f64)>, ScorerError> {
        let mut scores: HashMap<u64, Option<f64>> =
            chunk.iter().map(|&(id, _, _)| (id, None)).collect();
        let (lo, hi) = self.cfg.range;
        for line in lines.iter().filter(|l| !l.trim().is_empty()) {
            let resp: ScoreResponse =
                serde_json::from_str(line).map_err(|e| ScorerError::Malformed {
                    line: line.clone(),
                    reason: e.to_string(),
                })?;
            let slot = scores
                .get_mut(&resp.id)
                .ok_or_else(|| ScorerError::Malformed {
                    line: line.clone(),
                    reason: format!("unexpected id {}", resp.id),
                })?;
            if slot.is_some() {
                return Err(ScorerError::Malformed {
                    line: line.clone(),
                    reason: format!("duplicate id {}", resp.id),
                });
            }
            if !(resp.score >= lo && resp.score <= hi) {
                return Err(ScorerError::OutOfRange {
                    id: resp.id,
                    score: resp.score,
                    lo,
                    hi,
                });
            }
            *slot = Some(resp.score);
        }
        chunk
            .iter()
            .map(|&(id, _, _)| {
                scores[&id]
                    .map(|s| (id, s))
                    .ok_or(ScorerError::MissingId(id))
            })
            .collect()
    }
}

impl UtilityMetric for ExternalScorer {
    fn id(&self) -> String {
        format!("external:{}", self.cfg.id)
    }

    fn range(&self) -> (f64, f64) {
        self.cfg.range
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        let triples: Vec<(u64, &str, &str)> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(h, r))| (i as u64, h, r))
            .collect();
        Ok(self
            .score_batch(&triples)?
            .into_iter()
            .map(|(_, s)| s)
            .collect())
    }
}

/// Free-function form of [`ExternalScorer::score_batch`] with a fresh channel.
pub fn external_score_batch(
    cfg: &ExternalScorerConfig,
    pairs: &[(u64, &str, &str)],
) -> Result<Vec<(u64, f64)>> {
    let scorer = ExternalScorer::new(cfg.clone())?;
    Ok(scorer.score_batch(pairs)?)
}

/// Resolves a `--metric` name: `chrf`, `bleu`, `exact` or `external:<config-path>`.
pub fn parse_metric(name: &str) -> Result<Box<dyn UtilityMetric>> {
    match name {
        "chrf" => Ok(Box::new(Chrf::default())),
        "bleu" => Ok(Box::new(SentenceBleu::default())),
        "exact" => Ok(Box::new(ExactMatch)),
        other => match other.strip_prefix("external:") {
            Some(path) => Ok(Box::new(ExternalScorer::new(ExternalScorerConfig::load(
                path,
            )?)?)),
            None => Err(Error::InvalidArgument(format!(
                "unknown metric {other:?} (expected chrf, bleu, exact or external:<config>)"
            ))),
        },
    }
}
