#![allow(dead_code)]

use rand::Rng;
use sampling_mbr::model::{NextTokenDistribution, TokenId, ToyModel, Vocabulary, EOS_TOKEN};

pub const LETTERS: &str = "abcdefghijklmnopqrstuvwxyz";

/// Content tokens `a, b, c, ...` (then `t26, t27, ...`) followed by EOS.
pub fn vocab(content: usize) -> Vocabulary {
    let mut tokens: Vec<String> = (0..content)
        .map(|i| match LETTERS.chars().nth(i) {
            Some(c) => c.to_string(),
            None => format!("t{i}"),
        })
        .collect();
    tokens.push(EOS_TOKEN.to_string());
    Vocabulary::new(tokens).unwrap()
}

/// Normalized weights; `zero_prob` of the entries are zeroed (never all).
/// Quantized weights produce exact probability ties.
pub fn random_probs<R: Rng>(rng: &mut R, len: usize, zero_prob: f64, quantized: bool) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..len)
            .map(|_| {
                if rng.gen_bool(zero_prob) {
                    0.0
                } else if quantized {
                    rng.gen_range(1..=6) as f64
                } else {
                    rng.gen_range(0.01..1.0f64)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}

pub fn dist(probs: Vec<f64>) -> NextTokenDistribution {
    NextTokenDistribution::new(probs).unwrap()
}

/// Every context of content tokens with length `<= order`.
pub fn contexts(content: usize, order: usize) -> Vec<Vec<TokenId>> {
    let mut all = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..order {
        let mut next = Vec::new();
        for ctx in &frontier {
            for t in 0..content as TokenId {
                let mut c: Vec<TokenId> = ctx.clone();
                c.push(t);
                next.push(c);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

pub struct ModelSpec {
    pub content: usize,
    pub order: usize,
    pub zero_prob: f64,
    pub quantized: bool,
    /// Extra weight added to EOS before normalizing.
    pub eos_boost: f64,
    /// Contexts of exactly this length put all mass on EOS.
    pub force_eos_at: Option<usize>,
    /// Exponent applied to the raw weights; larger values skew the tables.
    pub skew: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            content: 3,
            order: 1,
            zero_prob: 0.2,
            quantized: false,
            eos_boost: 0.0,
            force_eos_at: None,
            skew: 1.0,
        }
    }
}

/// A toy model with a fully populated table for each source in `sources`.
pub fn random_model<R: Rng>(rng: &mut R, spec: &ModelSpec, sources: &[&str]) -> ToyModel {
    let v = vocab(spec.content);
    let size = v.len();
    let eos = v.eos() as usize;
    let mut m = ToyModel::new(v, spec.order);
    for key in sources {
        m.add_source(*key, format!("source {key}"));
        for ctx in contexts(spec.content, spec.order) {
            let probs = if spec.force_eos_at == Some(ctx.len()) {
                let mut p = vec![0.0; size];
                p[eos] = 1.0;
                p
            } else {
                let mut p = random_probs(rng, size, spec.zero_prob, spec.quantized);
                for x in &mut p {
                    *x = x.powf(spec.skew);
                }
                p[eos] += spec.eos_boost;
                let total: f64 = p.iter().sum();
                p.iter().map(|x| x / total).collect()
            };
            m.insert(key, ctx, dist(probs)).unwrap();
        }
    }
    m
}
