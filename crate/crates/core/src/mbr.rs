//! Sampling-based minimum Bayes risk decoding.
//!
//! The candidate pool doubles as the pseudo-reference set. Because samples are
//! drawn independently and kept with their multiplicities, the expected utility
//! of candidate `i` is the count-weighted mean
//! `EU(i) = (1/n) Σ_j count_j · u(i, j)`; the model probabilities never enter
//! the decision rule a second time. Utilities are computed once per distinct
//! pair, including `i == j`.
//!
//! The exact oracle replaces the Monte-Carlo average with a full sum over the
//! model's sequence space, `Σ_y u(h, y) P(y | x)`, which is only feasible for
//! tiny models.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ScorerError};
use crate::metrics::UtilityMetric;
use crate::model::{TokenSequence, ToyModel, Vocabulary, DEFAULT_ENUMERATION_BUDGET};
use crate::pool::CandidatePool;
use crate::util::sha256_hex;

/// Expected utilities closer than this (relative to the largest absolute
/// matrix entry) are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Turns token sequences into the strings utility metrics see.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detokenizer {
    pub separator: String,
}

impl Default for Detokenizer {
    fn default() -> Self {
        Detokenizer {
            separator: " ".into(),
        }
    }
}

impl Detokenizer {
    pub fn text(&self, seq: &TokenSequence, vocab: &Vocabulary) -> String {
        seq.join(vocab, &self.separator)
    }

    fn id(&self) -> String {
        format!("join({:?})", self.separator)
    }
}

/// `values[i * dim + j] = u(entry_i, entry_j)`, hypothesis first.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    dim: usize,
    values: Vec<f64>,
    metric_id: String,
}

impl UtilityMatrix {
    pub fn new(dim: usize, values: Vec<f64>, metric_id: impl Into<String>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "matrix of dimension {dim} needs {} values, got {}",
                dim * dim,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUtility {
                row: k / dim,
                col: k % dim,
                value: values[k],
            });
        }
        Ok(UtilityMatrix {
            dim,
            values,
            metric_id: metric_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric_id(&self) -> &str {
        &self.metric_id
    }

    pub fn get(&self, hyp: usize, pseudo_ref: usize) -> f64 {
        self.values[hyp * self.dim + pseudo_ref]
    }

    pub fn row(&self, hyp: usize) -> &[f64] {
        &self.values[hyp * self.dim..(hyp + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Restriction to the given rows/columns, in the given order.
    pub fn select(&self, keep: &[usize]) -> UtilityMatrix {
        let values = keep
            .iter()
            .flat_map(|&i| keep.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        UtilityMatrix {
            dim: keep.len(),
            values,
            metric_id: self.metric_id.clone(),
        }
    }

    /// `a · u + b`, elementwise.
    pub fn affine(&self, a: f64, b: f64) -> UtilityMatrix {
        UtilityMatrix {
            dim: self.dim,
            values: self.values.iter().map(|v| a * v + b).collect(),
            metric_id: format!("{}*{a}+{b}", self.metric_id),
        }
    }
}

/// Scores every ordered pair of distinct pool entries (diagonal included).
pub fn compute_utility_matrix(
    pool: &CandidatePool,
    vocab: &Vocabulary,
    metric: &dyn UtilityMetric,
    detok: &Detokenizer,
) -> Result<UtilityMatrix> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty candidate pool".into()));
    }
    let texts: Vec<String> = pool
        .entries()
        .iter()
        .map(|e| detok.text(&e.seq, vocab))
        .collect();
    score_square(&texts, metric)
}

fn score_square(texts: &[String], metric: &dyn UtilityMetric) -> Result<UtilityMatrix> {
    let dim = texts.len();
    let pairs: Vec<(&str, &str)> = texts
        .iter()
        .flat_map(|h| texts.iter().map(move |r| (h.as_str(), r.as_str())))
        .collect();
    let values = metric.score_pairs(&pairs).map_err(|e| match e {
        ScorerError::MissingId(id) | ScorerError::OutOfRange { id, .. } => Error::MetricPair {
            metric: metric.id(),
            row: id as usize / dim,
            col: id as usize % dim,
            source: e,
        },
        other => Error::Scorer(other),
    })?;
    UtilityMatrix::new(dim, values, metric.id())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbrResult {
    /// Index of the chosen pool entry.
    pub chosen: usize,
    pub chosen_seq: TokenSequence,
    /// Expected utility per distinct pool entry.
    pub expected_utilities: Vec<f64>,
    /// Entry indices by decreasing expected utility; `ranking[0] == chosen`.
    pub ranking: Vec<usize>,
    /// Whether the choice needed a tie-break.
    pub tied: bool,
}

impl MbrResult {
    pub fn expected_utility(&self) -> f64 {
        self.expected_utilities[self.chosen]
    }
}

fn tie_scale(matrix: &UtilityMatrix) -> f64 {
    TIE_TOLERANCE
        * matrix
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE)
}

/// Picks the entry maximizing the count-weighted expected utility. Ties are
/// broken toward the higher sequence log-probability, then the lower index.
pub fn mbr_decode(pool: &CandidatePool, matrix: &UtilityMatrix) -> Result<MbrResult> {
    if matrix.dim() != pool.len() {
        return Err(Error::DimensionMismatch {
            matrix: matrix.dim(),
            pool: pool.len(),
        });
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty candidate pool".into()));
    }
    let n = pool.n() as f64;
    let counts: Vec<f64> = pool.entries().iter().map(|e| e.count as f64).collect();
    let eu: Vec<f64> = (0..pool.len())
        .map(|i| {
            matrix
                .row(i)
                .iter()
                .zip(&counts)
                .map(|(u, c)| c * u)
                .sum::<f64>()
                / n
        })
        .collect();

    let tol = tie_scale(matrix);
    let best = eu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let contenders: Vec<usize> = (0..eu.len()).filter(|&i| best - eu[i] <= tol).collect();
    let entries = pool.entries();
    let chosen = *contenders
        .iter()
        .min_by(|&&a, &&b| {
            entries[b]
                .logprob
                .partial_cmp(&entries[a].logprob)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("non-empty pool");

    let mut ranking: Vec<usize> = (0..eu.len()).collect();
    ranking.sort_by(|&a, &b| {
        eu[b]
            .partial_cmp(&eu[a])
            .unwrap_or(Ordering::Equal)
            .then(
                entries[b]
                    .logprob
                    .partial_cmp(&entries[a].logprob)
                    .unwrap_or(Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    if let Some(pos) = ranking.iter().position(|&i| i == chosen) {
        ranking[..=pos].rotate_right(1);
    }
    Ok(MbrResult {
        chosen,
        chosen_seq: entries[chosen].seq.clone(),
        expected_utilities: eu,
        ranking,
        tied: contenders.len() > 1,
    })
}

// ---------------------------------------------------------------------------
// matrix cache

const CACHE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CacheHeader {
    version: u32,
    pool_hash: String,
    metric_id: String,
    dim: usize,
}

/// On-disk cache of utility matrices keyed by `(pool hash, metric id)`.
///
/// File layout: one JSON header line `{"version","pool_hash","metric_id","dim"}`
/// followed by `dim * dim` little-endian `f64` values in row-major order.
#[derive(Debug, Clone)]
pub struct MatrixCache {
    dir: PathBuf,
}

impl MatrixCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(MatrixCache { dir })
    }

    fn path(&self, pool_hash: &str, metric_id: &str) -> PathBuf {
        let key = sha256_hex(format!("{pool_hash}\n{metric_id}").as_bytes());
        self.dir.join(format!("{key}.umx"))
    }

    pub fn load(&self, pool_hash: &str, metric_id: &str) -> Result<Option<UtilityMatrix>> {
        let path = self.path(pool_hash, metric_id);
        let f = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut reader = BufReader::new(f);
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(&path, e))?;
        let header: CacheHeader = match serde_json::from_str(line.trim_end()) {
            Ok(h) => h,
            Err(_) => return Ok(None),
        };
        if header.version != CACHE_VERSION
            || header.pool_hash != pool_hash
            || header.metric_id != metric_id
        {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&path, e))?;
        if bytes.len() != header.dim * header.dim * 8 {
            return Ok(None);
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        UtilityMatrix::new(header.dim, values, metric_id).map(Some)
    }

    pub fn store(&self, pool_hash: &str, matrix: &UtilityMatrix) -> Result<()> {
        let path = self.path(pool_hash, &matrix.metric_id);
        let header = CacheHeader {
            version: CACHE_VERSION,
            pool_hash: pool_hash.to_string(),
            metric_id: matrix.metric_id.clone(),
            dim: matrix.dim,
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        for v in &matrix.values {
            buf.extend(v.to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Computes the utility matrix, reusing a cached copy when one exists.
pub fn utility_matrix_cached(
    cache: Option<&MatrixCache>,
    pool: &CandidatePool,
    vocab: &Vocabulary,
    metric: &dyn UtilityMetric,
    detok: &Detokenizer,
) -> Result<UtilityMatrix> {
    let Some(cache) = cache else {
        return compute_utility_matrix(pool, vocab, metric, detok);
    };
    let pool_hash = sha256_hex(format!("{}\n{}", pool.content_hash(), detok.id()).as_bytes());
    let metric_id = metric.id();
    if let Some(m) = cache.load(&pool_hash, &metric_id)? {
        if m.dim() == pool.len() {
            return Ok(m);
        }
    }
    let m = compute_utility_matrix(pool, vocab, metric, detok)?;
    cache.store(&pool_hash, &m)?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// exact oracle

#[derive(Debug, Clone, PartialEq)]
pub struct ExactUtility {
    /// `Σ_y u(h, y) P(y)` over terminated sequences within the length cap.
    pub value: f64,
    pub terminated_mass: f64,
    /// Mass left on sequences that do not terminate within the cap.
    pub unterminated_mass: f64,
}

/// Exact model-expected utility of `h` by enumerating the sequence space.
pub fn exact_expected_utility(
    model: &ToyModel,
    source: &str,
    h: &TokenSequence,
    metric: &dyn UtilityMetric,
    detok: &Detokenizer,
    max_len: usize,
) -> Result<ExactUtility> {
    let space = model.enumerate(source, max_len, DEFAULT_ENUMERATION_BUDGET)?;
    let vocab = model.vocab();
    let hyp = detok.text(h, vocab);
    let refs: Vec<String> = space
        .sequences
        .iter()
        .map(|s| detok.text(&s.seq, vocab))
        .collect();
    let pairs: Vec<(&str, &str)> = refs.iter().map(|r| (hyp.as_str(), r.as_str())).collect();
    let scores = metric.score_pairs(&pairs)?;
    let mut value = 0.0;
    let mut terminated_mass = 0.0;
    for (s, u) in space.sequences.iter().zip(scores) {
        let p = s.logprob.exp();
        value += u * p;
        terminated_mass += p;
    }
    Ok(ExactUtility {
        value,
        terminated_mass,
        unterminated_mass: space.unterminated_mass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleChoice {
    pub seq: TokenSequence,
    pub expected_utility: f64,
    /// Another candidate reached the same expected utility; the lowest-id
    /// sequence was returned.
    pub tied: bool,
    /// Gap between the best and the runner-up expected utility.
    pub margin: f64,
    /// Every candidate with its exact expected utility, sorted by token ids.
    pub candidates: Vec<(TokenSequence, f64)>,
}

/// Exact argmax of the model-expected utility over every positive-probability
/// terminated sequence within `max_len`.
pub fn exact_mbr_oracle(
    model: &ToyModel,
    source: &str,
    metric: &dyn UtilityMetric,
    detok: &Detokenizer,
    max_len: usize,
) -> Result<OracleChoice> {
    let space = model.enumerate(source, max_len, DEFAULT_ENUMERATION_BUDGET)?;
    if space.sequences.is_empty() {
        return Err(Error::InvalidArgument(
            "model has no terminated sequence within max_len".into(),
        ));
    }
    let vocab = model.vocab();
    let texts: Vec<String> = space
        .sequences
        .iter()
        .map(|s| detok.text(&s.seq, vocab))
        .collect();
    let matrix = score_square(&texts, metric)?;
    let probs: Vec<f64> = space.sequences.iter().map(|s| s.logprob.exp()).collect();
    let eu: Vec<f64> = (0..texts.len())
        .map(|i| matrix.row(i).iter().zip(&probs).map(|(u, p)| u * p).sum())
        .collect();

    let tol = tie_scale(&matrix);
    let best = eu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..eu.len()).filter(|&i| best - eu[i] <= tol).collect();
    let chosen = winners[0];
    let runner_up = (0..eu.len())
        .filter(|&i| i != chosen)
        .map(|i| eu[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(OracleChoice {
        seq: space.sequences[chosen].seq.clone(),
        expected_utility: eu[chosen],
        tied: winners.len() > 1,
        margin: eu[chosen] - runner_up,
        candidates: space
            .sequences
            .into_iter()
            .zip(eu)
            .map(|(s, u)| (s.seq, u))
            .collect(),
    })
}
