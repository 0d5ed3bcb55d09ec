//! Beam search over raw model log-probabilities with the length penalty
//! `lp(y) = ((5 + |y|) / 6)^alpha` and no coverage penalty.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{TokenId, TokenSequence, ToyModel, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub alpha: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 4,
            alpha: 0.5,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidArgument("beam size must be >= 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Unterminated only when nothing finished before `max_len`.
    pub seq: TokenSequence,
    pub logprob: f64,
    pub penalized_score: f64,
}

pub fn length_penalty(length: usize, alpha: f64) -> f64 {
    ((5.0 + length as f64) / 6.0).powf(alpha)
}

pub fn penalized(logprob: f64, length: usize, alpha: f64) -> f64 {
    logprob / length_penalty(length, alpha)
}

/// Finished-hypothesis order: higher penalized score, then lower-id sequence.
fn finished_order(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.penalized_score
        .partial_cmp(&a.penalized_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.seq.cmp(&b.seq))
}

struct Candidate {
    parent: usize,
    token: TokenId,
    logprob: f64,
}

pub fn beam_search(model: &ToyModel, source: &str, cfg: &BeamConfig) -> Result<BeamHypothesis> {
    cfg.validate()?;
    if !model.has_source(source) {
        return Err(Error::UnknownSource(source.to_string()));
    }
    let eos = model.vocab().eos();
    let width = cfg.beam_size;
    let mut active: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    for step in 0..cfg.max_len {
        let mut candidates = Vec::new();
        for (parent, (prefix, lp)) in active.iter().enumerate() {
            let dist = model.next_token_dist_ids(source, prefix)?;
            for (id, &p) in dist.probs().iter().enumerate() {
                if p > 0.0 {
                    candidates.push(Candidate {
                        parent,
                        token: id as TokenId,
                        logprob: lp + p.ln(),
                    });
                }
            }
        }
        // Pruning order: higher logprob, then lower last token, then parent rank.
        candidates.sort_by(|a, b| {
            b.logprob
                .partial_cmp(&a.logprob)
                .unwrap_or(Ordering::Equal)
                .then(a.token.cmp(&b.token))
                .then(a.parent.cmp(&b.parent))
        });

        let mut next = Vec::with_capacity(width);
        for (rank, c) in candidates.iter().enumerate() {
            let mut ids = active[c.parent].0.clone();
            ids.push(c.token);
            if c.token == eos {
                // An EOS candidate only finishes if it ranks within the beam.
                if rank < width {
                    let len = ids.len();
                    finished.push(BeamHypothesis {
                        seq: TokenSequence::with_eos(ids, eos)?,
                        logprob: c.logprob,
                        penalized_score: penalized(c.logprob, len, cfg.alpha),
                    });
                }
            } else if next.len() < width {
                next.push((ids, c.logprob));
            }
            if next.len() == width && rank + 1 >= width {
                break;
            }
        }
        finished.sort_by(finished_order);
        finished.truncate(width);
        active = next;

        if active.is_empty() {
            break;
        }
        if finished.len() == width {
            // Log-probabilities only decrease and the penalty only grows, so
            // an active hypothesis can at best reach logprob / lp(max_len).
            let best_active = active.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
            let bound = penalized(best_active, cfg.max_len, cfg.alpha).max(penalized(
                best_active,
                step + 2,
                cfg.alpha,
            ));
            let worst = finished[width - 1].penalized_score;
            if bound < worst {
                break;
            }
        }
    }

    if let Some(best) = finished.into_iter().next() {
        return Ok(best);
    }
    // Nothing terminated: fall back to the best unterminated hypothesis.
    let mut open: Vec<BeamHypothesis> = active
        .into_iter()
        .map(|(ids, lp)| {
            let len = ids.len();
            Ok(BeamHypothesis {
                seq: TokenSequence::with_eos(ids, eos)?,
                logprob: lp,
                penalized_score: penalized(lp, len, cfg.alpha),
            })
        })
        .collect::<Result<_>>()?;
    open.sort_by(finished_order);
    open.into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("beam search found no hypothesis".into()))
}
