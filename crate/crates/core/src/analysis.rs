//! Diagnostics: next-token distribution dumps, cumulative sentence mass,
//! candidate-size sweeps, token-probability annotation and the paired
//! permutation test.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mbr::{mbr_decode, UtilityMatrix};
use crate::model::{TokenId, TokenSequence, ToyModel};
use crate::pool::CandidatePool;
use crate::rng;

/// Default flagging threshold for token annotation.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.02;
pub const DEFAULT_SWEEP_REPEATS: usize = 10;
pub const DEFAULT_PERMUTATION_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenDump {
    /// `(token, probability)` by decreasing probability, ties by token id.
    pub top: Vec<(TokenId, f64)>,
    /// Aggregate probability of everything not listed.
    pub tail_mass: f64,
}

pub fn dump_next_token_dist(
    model: &ToyModel,
    source: &str,
    prefix: &TokenSequence,
    top_n: usize,
) -> Result<TokenDump> {
    let dist = model.next_token_dist(source, prefix)?;
    let mut ranked: Vec<(TokenId, f64)> = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as TokenId, p))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let tail_mass = ranked.iter().skip(top_n).map(|(_, p)| p).sum();
    ranked.truncate(top_n);
    Ok(TokenDump {
        top: ranked,
        tail_mass,
    })
}

/// `1, 2, 4, ...` up to and including `n`.
pub fn doubling_sizes(n: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut m = 1;
    while m < n {
        sizes.push(m);
        m *= 2;
    }
    if n > 0 {
        sizes.push(n);
    }
    sizes
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassCurve {
    /// `(number of draws, cumulative mass)`.
    pub points: Vec<(usize, f64)>,
}

/// Total model probability of the distinct terminated sequences seen in the
/// first `m` draws, for `m` in `1, 2, 4, ..., n`. Unterminated samples carry
/// no sentence mass.
pub fn cumulative_mass_curve(
    pool: &CandidatePool,
    model: &ToyModel,
    source: &str,
) -> Result<MassCurve> {
    let probs = pool
        .entries()
        .iter()
        .map(|e| {
            if e.seq.is_terminated() {
                Ok(model.sequence_logprob(source, &e.seq)?.exp())
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let sizes = doubling_sizes(pool.n());
    let mut points = Vec::with_capacity(sizes.len());
    let mut seen = HashSet::new();
    let mut mass = 0.0;
    let mut drawn = 0;
    for m in sizes {
        for &e in &pool.draws()[drawn..m] {
            if seen.insert(e) {
                mass += probs[e];
            }
        }
        drawn = m;
        points.push((m, mass));
    }
    Ok(MassCurve { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub size: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

/// MBR restricted to the raw draws at `draw_indices`; returns the chosen entry
/// index in the full pool.
pub fn mbr_on_subset(
    pool: &CandidatePool,
    matrix: &UtilityMatrix,
    draw_indices: &[usize],
) -> Result<usize> {
    let (sub, kept) = pool.restrict(draw_indices);
    let result = mbr_decode(&sub, &matrix.select(&kept))?;
    Ok(kept[result.chosen])
}

/// For each size `s`, runs MBR on `repeats` random sub-multisets of `s` raw
/// draws (without replacement) and averages `eval_scores[chosen]`, the
/// evaluation utility of each pool entry against the reference. Repeat `r`
/// of size `s` uses substream `(seed, "sweep/<s>", r)`.
pub fn candidate_size_sweep(
    pool: &CandidatePool,
    matrix: &UtilityMatrix,
    eval_scores: &[f64],
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<SweepCurve> {
    if eval_scores.len() != pool.len() {
        return Err(Error::DimensionMismatch {
            matrix: eval_scores.len(),
            pool: pool.len(),
        });
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let n = pool.n();
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 || size > n {
            return Err(Error::InvalidArgument(format!(
                "candidate size {size} outside 1..={n}"
            )));
        }
        let stream = format!("sweep/{size}");
        let scores = (0..repeats as u64)
            .into_par_iter()
            .map(|r| {
                let draws: Vec<usize> = if size == n {
                    (0..n).collect()
                } else {
                    let mut rng = rng::substream(seed, &stream, r);
                    index::sample(&mut rng, n, size).into_vec()
                };
                Ok(eval_scores[mbr_on_subset(pool, matrix, &draws)?])
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, stderr) = mean_stderr(&scores);
        points.push(SweepPoint { size, mean, stderr });
    }
    Ok(SweepCurve { points })
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFlag {
    pub position: usize,
    pub token: TokenId,
    pub prob: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenAnnotation {
    pub tokens: Vec<TokenFlag>,
}

impl TokenAnnotation {
    pub fn flagged_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.flagged).count()
    }
}

/// Raw step probability of every token of `seq`, flagged when below `threshold`.
pub fn annotate_token_probs(
    model: &ToyModel,
    source: &str,
    seq: &TokenSequence,
    threshold: f64,
) -> Result<TokenAnnotation> {
    let probs = model.step_probs(source, seq)?;
    Ok(TokenAnnotation {
        tokens: seq
            .ids()
            .iter()
            .zip(probs)
            .enumerate()
            .map(|(position, (&token, prob))| TokenFlag {
                position,
                token,
                prob,
                flagged: prob < threshold,
            })
            .collect(),
    })
}

/// Paired two-sided permutation test on per-segment scores.
///
/// Each iteration flips the sign of every paired difference with probability
/// 1/2 and compares the absolute mean difference with the observed one. The
/// p-value is `(hits + 1) / (iterations + 1)`, so it is never zero.
pub fn permutation_test<R: Rng + ?Sized>(
    scores_a: &[f64],
    scores_b: &[f64],
    iterations: usize,
    rng: &mut R,
) -> Result<f64> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::InvalidArgument(format!(
            "score lists differ in length: {} vs {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    if scores_a.is_empty() {
        return Err(Error::InvalidArgument("no segments to compare".into()));
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    // Permuted statistics equal to the observed one up to rounding count as hits.
    let slack = 1e-12 * observed.max(f64::MIN_POSITIVE);
    let mut hits = 0usize;
    for _ in 0..iterations {
        let sum: f64 = diffs
            .iter()
            .map(|&d| if rng.gen::<bool>() { d } else { -d })
            .sum();
        if (sum / n).abs() >= observed - slack {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}
