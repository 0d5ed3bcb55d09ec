//! Truncation sampling (ancestral, top-k, nucleus, epsilon) with temperature,
//! plus sequence and pool generation.
//!
//! Truncation criteria are always evaluated on the raw model probabilities.
//! Only the surviving tokens are tempered: each survivor gets weight
//! `p^(1/tau)` and the weights are renormalized over the support.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NextTokenDistribution, TokenId, TokenSequence, ToyModel};
use crate::pool::CandidatePool;
use crate::rng;

/// Default number of samples per source sentence.
pub const DEFAULT_NUM_SAMPLES: usize = 1024;

/// Default epsilon threshold.
pub const DEFAULT_EPSILON: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Ancestral,
    TopK { k: usize },
    Nucleus { p: f64 },
    Epsilon { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    #[serde(flatten)]
    strategy: Strategy,
    tau: f64,
}

impl SamplingPolicy {
    pub fn new(strategy: Strategy, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidPolicy(format!(
                "temperature must be > 0, got {tau}"
            )));
        }
        match strategy {
            Strategy::Ancestral => {}
            Strategy::TopK { k } if k >= 1 => {}
            Strategy::TopK { k } => {
                return Err(Error::InvalidPolicy(format!("k must be >= 1, got {k}")))
            }
            Strategy::Nucleus { p } if p > 0.0 && p <= 1.0 => {}
            Strategy::Nucleus { p } => {
                return Err(Error::InvalidPolicy(format!(
                    "p must lie in (0, 1], got {p}"
                )))
            }
            Strategy::Epsilon { epsilon } if (0.0..1.0).contains(&epsilon) => {}
            Strategy::Epsilon { epsilon } => {
                return Err(Error::InvalidPolicy(format!(
                    "epsilon must lie in [0, 1), got {epsilon}"
                )))
            }
        }
        Ok(SamplingPolicy { strategy, tau })
    }

    pub fn ancestral(tau: f64) -> Result<Self> {
        Self::new(Strategy::Ancestral, tau)
    }

    pub fn top_k(k: usize, tau: f64) -> Result<Self> {
        Self::new(Strategy::TopK { k }, tau)
    }

    pub fn nucleus(p: f64, tau: f64) -> Result<Self> {
        Self::new(Strategy::Nucleus { p }, tau)
    }

    pub fn epsilon(epsilon: f64, tau: f64) -> Result<Self> {
        Self::new(Strategy::Epsilon { epsilon }, tau)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Re-checks the invariants, e.g. after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.strategy, self.tau)
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Strategy::Ancestral => write!(f, "ancestral(tau={})", self.tau),
            Strategy::TopK { k } => write!(f, "top_k(k={k}, tau={})", self.tau),
            Strategy::Nucleus { p } => write!(f, "nucleus(p={p}, tau={})", self.tau),
            Strategy::Epsilon { epsilon } => {
                write!(f, "epsilon(epsilon={epsilon}, tau={})", self.tau)
            }
        }
    }
}

/// Pruned, tempered and renormalized next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDistribution {
    support: Vec<TokenId>,
    probs: Vec<f64>,
    raw_support_mass: f64,
}

impl TruncatedDistribution {
    /// Support token ids in ascending order.
    pub fn support(&self) -> &[TokenId] {
        &self.support
    }

    /// Sampling probabilities aligned with [`support`](Self::support).
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Sum of the raw (untempered) probabilities over the support.
    pub fn raw_support_mass(&self) -> f64 {
        self.raw_support_mass
    }

    pub fn prob_of(&self, id: TokenId) -> f64 {
        match self.support.binary_search(&id) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }
}

/// Descending probability, ties toward the lower token id.
fn by_prob_desc(probs: &[f64]) -> impl Fn(&TokenId, &TokenId) -> Ordering + '_ {
    move |&a, &b| {
        probs[b as usize]
            .partial_cmp(&probs[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

pub fn truncate(dist: &NextTokenDistribution, policy: &SamplingPolicy) -> TruncatedDistribution {
    let raw = dist.probs();
    let positive = || (0..raw.len() as TokenId).filter(|&i| raw[i as usize] > 0.0);

    let mut support: Vec<TokenId> = match policy.strategy {
        Strategy::Ancestral => positive().collect(),
        Strategy::TopK { k } => {
            let mut ranked: Vec<TokenId> = positive().collect();
            ranked.sort_by(by_prob_desc(raw));
            ranked.truncate(k);
            ranked
        }
        Strategy::Nucleus { p } if p >= 1.0 => positive().collect(),
        Strategy::Nucleus { p } => {
            let mut ranked: Vec<TokenId> = positive().collect();
            ranked.sort_by(by_prob_desc(raw));
            let mut mass = 0.0;
            let mut keep = ranked.len();
            for (i, &id) in ranked.iter().enumerate() {
                mass += raw[id as usize];
                if mass >= p {
                    keep = i + 1;
                    break;
                }
            }
            ranked.truncate(keep);
            ranked
        }
        Strategy::Epsilon { epsilon } => {
            let kept: Vec<TokenId> = positive().filter(|&i| raw[i as usize] >= epsilon).collect();
            if kept.is_empty() {
                let best = (0..raw.len() as TokenId)
                    .min_by(by_prob_desc(raw))
                    .expect("non-empty distribution");
                vec![best]
            } else {
                kept
            }
        }
    };
    if support.is_empty() {
        // Only reachable when every raw probability is zero, which a valid
        // distribution rules out; keep the argmax so sampling always progresses.
        support.push(0);
    }
    support.sort_unstable();

    let raw_support_mass: f64 = support.iter().map(|&i| raw[i as usize]).sum();
    let probs = temper(
        &support.iter().map(|&i| raw[i as usize]).collect::<Vec<_>>(),
        policy.tau,
    );
    TruncatedDistribution {
        support,
        probs,
        raw_support_mass,
    }
}

/// `w_i ∝ p_i^(1/tau)`, computed relative to the largest survivor so small
/// temperatures do not underflow.
fn temper(raw: &[f64], tau: f64) -> Vec<f64> {
    let weights: Vec<f64> = if tau == 1.0 {
        raw.to_vec()
    } else {
        let max = raw.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            raw.iter().map(|&p| (p / max).powf(1.0 / tau)).collect()
        } else {
            vec![1.0; raw.len()]
        }
    };
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

pub fn sample_token<R: Rng + ?Sized>(tdist: &TruncatedDistribution, rng: &mut R) -> TokenId {
    if tdist.support.len() == 1 {
        return tdist.support[0];
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (&id, &p) in tdist.support.iter().zip(&tdist.probs) {
        acc += p;
        if u < acc {
            return id;
        }
    }
    // Rounding left `acc` slightly below one; the last positive entry absorbs it.
    tdist
        .support
        .iter()
        .zip(&tdist.probs)
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(&id, _)| id)
        .unwrap_or(tdist.support[tdist.support.len() - 1])
}

/// One sampled sequence with its raw model log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seq: TokenSequence,
    pub logprob: f64,
}

pub fn sample_sequence<R: Rng + ?Sized>(
    model: &ToyModel,
    source: &str,
    policy: &SamplingPolicy,
    rng: &mut R,
    max_len: usize,
) -> Result<Sample> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let eos = model.vocab().eos();
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    while ids.len() < max_len {
        let dist = model.next_token_dist_ids(source, &ids)?;
        let tdist = truncate(dist, policy);
        let next = sample_token(&tdist, rng);
        let p = dist.prob(next);
        logprob += if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        ids.push(next);
        if next == eos {
            break;
        }
    }
    Ok(Sample {
        seq: TokenSequence::with_eos(ids, eos)?,
        logprob,
    })
}

/// Draws `n` independent samples. Sample `i` uses substream
/// `(seed, "sample/<source>", i)`, so the pool does not depend on threading.
pub fn sample_pool(
    model: &ToyModel,
    source: &str,
    policy: &SamplingPolicy,
    seed: u64,
    n: usize,
    max_len: usize,
) -> Result<CandidatePool> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "number of samples must be >= 1".into(),
        ));
    }
    if !model.has_source(source) {
        return Err(Error::UnknownSource(source.to_string()));
    }
    let stream = format!("sample/{source}");
    let draws = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, &stream, i);
            sample_sequence(model, source, policy, &mut r, max_len)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidatePool::from_draws(
        draws.into_iter().map(|s| (s.seq, s.logprob)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dist(p: &[f64]) -> NextTokenDistribution {
        NextTokenDistribution::new(p.to_vec()).unwrap()
    }

    fn assert_probs(actual: &[f64], expected: &[f64]) {
        assert_eq!(actual.len(), expected.len(), "{actual:?} vs {expected:?}");
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{actual:?} vs {expected:?}");
        }
    }

    const D4: [f64; 4] = [0.5, 0.3, 0.15, 0.05];

    #[test]
    fn epsilon_prunes_below_threshold() {
        let t = truncate(&dist(&D4), &SamplingPolicy::epsilon(0.1, 1.0).unwrap());
        assert_eq!(t.support(), &[0, 1, 2]);
        assert_probs(t.probs(), &[0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95]);
        assert!((t.probs()[0] - 0.52632).abs() < 1e-5);
        assert!((t.raw_support_mass() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn nucleus_p_one_is_identity() {
        let t = truncate(&dist(&D4), &SamplingPolicy::nucleus(1.0, 1.0).unwrap());
        assert_eq!(t.support(), &[0, 1, 2, 3]);
        assert_probs(t.probs(), &D4);
    }

    #[test]
    fn top_k_keeps_highest() {
        let t = truncate(&dist(&D4), &SamplingPolicy::top_k(2, 1.0).unwrap());
        assert_eq!(t.support(), &[0, 1]);
        assert_probs(t.probs(), &[0.625, 0.375]);
    }

    #[test]
    fn top_k_tie_goes_to_lower_id() {
        let t = truncate(
            &dist(&[0.4, 0.3, 0.3]),
            &SamplingPolicy::top_k(2, 1.0).unwrap(),
        );
        assert_eq!(t.support(), &[0, 1]);
    }

    #[test]
    fn temperature_sharpens() {
        let t = truncate(&dist(&[0.8, 0.2]), &SamplingPolicy::ancestral(0.5).unwrap());
        assert_probs(t.probs(), &[0.64 / 0.68, 0.04 / 0.68]);
        assert!((t.probs()[1] - 0.05882).abs() < 1e-5);
    }

    #[test]
    fn epsilon_above_max_keeps_argmax() {
        let t = truncate(&dist(&D4), &SamplingPolicy::epsilon(0.6, 1.0).unwrap());
        assert_eq!(t.support(), &[0]);
        assert_probs(t.probs(), &[1.0]);
        let t = truncate(
            &dist(&[0.25; 4]),
            &SamplingPolicy::epsilon(0.5, 2.0).unwrap(),
        );
        assert_eq!(t.support(), &[0]);
    }

    #[test]
    fn boundaries_are_inclusive() {
        // epsilon keeps p == epsilon; nucleus keeps the crossing token
        let t = truncate(&dist(&D4), &SamplingPolicy::epsilon(0.15, 1.0).unwrap());
        assert_eq!(t.support(), &[0, 1, 2]);
        let t = truncate(&dist(&D4), &SamplingPolicy::nucleus(0.5, 1.0).unwrap());
        assert_eq!(t.support(), &[0]);
        let t = truncate(&dist(&D4), &SamplingPolicy::nucleus(0.51, 1.0).unwrap());
        assert_eq!(t.support(), &[0, 1]);
    }

    #[test]
    fn zero_probability_tokens_never_survive() {
        let d = dist(&[0.0, 0.7, 0.0, 0.3]);
        for policy in [
            SamplingPolicy::ancestral(1.5).unwrap(),
            SamplingPolicy::top_k(4, 1.0).unwrap(),
            SamplingPolicy::nucleus(1.0, 1.0).unwrap(),
            SamplingPolicy::epsilon(0.0, 1.0).unwrap(),
        ] {
            assert_eq!(truncate(&d, &policy).support(), &[1, 3], "{policy}");
        }
    }

    #[test]
    fn policy_validation() {
        assert!(SamplingPolicy::ancestral(0.0).is_err());
        assert!(SamplingPolicy::top_k(0, 1.0).is_err());
        assert!(SamplingPolicy::nucleus(0.0, 1.0).is_err());
        assert!(SamplingPolicy::nucleus(1.01, 1.0).is_err());
        assert!(SamplingPolicy::epsilon(1.0, 1.0).is_err());
        assert!(SamplingPolicy::epsilon(-0.1, 1.0).is_err());
    }

    #[test]
    fn policy_json_shape() {
        let p = SamplingPolicy::epsilon(0.02, 1.0).unwrap();
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"strategy": "epsilon", "epsilon": 0.02, "tau": 1.0})
        );
        let back: SamplingPolicy = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let v = serde_json::to_value(SamplingPolicy::top_k(3, 0.7).unwrap()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"strategy": "top_k", "k": 3, "tau": 0.7})
        );
    }

    #[test]
    fn singleton_support_always_returns_it() {
        let t = TruncatedDistribution {
            support: vec![5],
            probs: vec![1.0],
            raw_support_mass: 0.4,
        };
        let mut r = ChaCha20Rng::seed_from_u64(1);
        assert!((0..100).all(|_| sample_token(&t, &mut r) == 5));
    }

    #[test]
    fn uniform_pair_frequencies() {
        let t = truncate(&dist(&[0.5, 0.5]), &SamplingPolicy::ancestral(1.0).unwrap());
        let mut r = ChaCha20Rng::seed_from_u64(42);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_token(&t, &mut r) == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let t = truncate(&dist(&D4), &SamplingPolicy::ancestral(1.0).unwrap());
        let run = || {
            let mut r = ChaCha20Rng::seed_from_u64(9);
            (0..50)
                .map(|_| sample_token(&t, &mut r))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    fn certain_eos_model() -> ToyModel {
        let vocab = Vocabulary::new(["a", "b", "</s>"]).unwrap();
        let mut m = ToyModel::new(vocab, 0);
        m.add_source("s", "src");
        m.insert("s", vec![], dist(&[0.0, 0.0, 1.0])).unwrap();
        m
    }

    fn never_eos_model() -> ToyModel {
        let vocab = Vocabulary::new(["a", "b", "</s>"]).unwrap();
        let mut m = ToyModel::new(vocab, 0);
        m.add_source("s", "src");
        m.insert("s", vec![], dist(&[0.5, 0.5, 0.0])).unwrap();
        m
    }

    #[test]
    fn sequence_stops_at_eos() {
        let m = certain_eos_model();
        let mut r = ChaCha20Rng::seed_from_u64(0);
        let policy = SamplingPolicy::ancestral(1.0).unwrap();
        let s = sample_sequence(&m, "s", &policy, &mut r, 10).unwrap();
        assert_eq!(s.seq.ids(), &[2]);
        assert!(s.seq.is_terminated());
        assert_eq!(s.logprob, 0.0);
    }

    #[test]
    fn sequence_hits_max_len() {
        let m = never_eos_model();
        let mut r = ChaCha20Rng::seed_from_u64(0);
        let policy = SamplingPolicy::ancestral(1.0).unwrap();
        let s = sample_sequence(&m, "s", &policy, &mut r, 3).unwrap();
        assert_eq!(s.seq.len(), 3);
        assert!(!s.seq.is_terminated());
        assert!((s.logprob - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(sample_sequence(&m, "s", &policy, &mut r, 0).is_err());
    }

    #[test]
    fn logprob_is_raw_not_truncated() {
        let m = never_eos_model();
        let mut r = ChaCha20Rng::seed_from_u64(3);
        let policy = SamplingPolicy::top_k(1, 1.0).unwrap();
        let s = sample_sequence(&m, "s", &policy, &mut r, 2).unwrap();
        assert_eq!(s.seq.ids(), &[0, 0]);
        assert!((s.logprob - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pool_accounting() {
        let m = never_eos_model();
        let policy = SamplingPolicy::ancestral(1.0).unwrap();
        let pool = sample_pool(&m, "s", &policy, 11, 1, 2).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries()[0].count, 1);

        let pool = sample_pool(&m, "s", &policy, 11, 300, 2).unwrap();
        assert_eq!(pool.n(), 300);
        assert!(pool.len() <= 4);

        let det = certain_eos_model();
        let pool = sample_pool(&det, "s", &policy, 5, 100, 4).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries()[0].count, 100);
    }

    #[test]
    fn pool_is_seed_deterministic() {
        let m = never_eos_model();
        let policy = SamplingPolicy::ancestral(1.3).unwrap();
        let a = sample_pool(&m, "s", &policy, 77, 200, 3).unwrap();
        let b = sample_pool(&m, "s", &policy, 77, 200, 3).unwrap();
        assert_eq!(a, b);
        let serial: Vec<TokenSequence> = (0..200)
            .map(|i| {
                let mut r = rng::substream(77, "sample/s", i);
                sample_sequence(&m, "s", &policy, &mut r, 3).unwrap().seq
            })
            .collect();
        let from_pool: Vec<TokenSequence> = a
            .draws()
            .iter()
            .map(|&e| a.entries()[e].seq.clone())
            .collect();
        assert_eq!(serial, from_pool);
    }
}
