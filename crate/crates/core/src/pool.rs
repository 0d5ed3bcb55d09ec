//! Candidate pools: the multiset of independent samples that serves both as
//! hypothesis set and as pseudo-references.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenSequence, Vocabulary};
use crate::sampling::SamplingPolicy;
use crate::util::{logprob_serde, sha256_hex};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub seq: TokenSequence,
    pub count: usize,
    pub logprob: f64,
}

/// Distinct sequences in order of first appearance, with multiplicities.
///
/// `draws[i]` is the entry index of the i-th raw sample, which keeps the draw
/// order available for prefix statistics and sub-sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    entries: Vec<PoolEntry>,
    draws: Vec<usize>,
}

impl CandidatePool {
    pub fn from_draws(draws: impl IntoIterator<Item = (TokenSequence, f64)>) -> Self {
        let mut index: HashMap<TokenSequence, usize> = HashMap::new();
        let mut entries: Vec<PoolEntry> = Vec::new();
        let mut order = Vec::new();
        for (seq, logprob) in draws {
            let i = *index.entry(seq.clone()).or_insert_with(|| {
                entries.push(PoolEntry {
                    seq,
                    count: 0,
                    logprob,
                });
                entries.len() - 1
            });
            entries[i].count += 1;
            order.push(i);
        }
        CandidatePool {
            entries,
            draws: order,
        }
    }

    /// Builds a pool from distinct entries; validates distinctness and that the
    /// draw order matches the counts.
    pub fn from_parts(entries: Vec<PoolEntry>, draws: Vec<usize>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "pool entry {i} has count 0"
                )));
            }
            if seen.insert(&e.seq, i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "pool entry {i} is a duplicate"
                )));
            }
        }
        let mut counts = vec![0usize; entries.len()];
        for &d in &draws {
            *counts
                .get_mut(d)
                .ok_or_else(|| Error::InvalidArgument(format!("draw refers to entry {d}")))? += 1;
        }
        if counts.iter().zip(&entries).any(|(c, e)| *c != e.count) {
            return Err(Error::InvalidArgument(
                "draw order disagrees with counts".into(),
            ));
        }
        Ok(CandidatePool { entries, draws })
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn draws(&self) -> &[usize] {
        &self.draws
    }

    /// Number of distinct sequences.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of raw samples.
    pub fn n(&self) -> usize {
        self.draws.len()
    }

    /// Sub-pool made of the raw draws at `draw_indices`, with entries in the
    /// original entry order. Returns the sub-pool and the original index of
    /// each of its entries.
    pub fn restrict(&self, draw_indices: &[usize]) -> (CandidatePool, Vec<usize>) {
        let mut counts = vec![0usize; self.entries.len()];
        for &d in draw_indices {
            counts[self.draws[d]] += 1;
        }
        let kept: Vec<usize> = (0..self.entries.len()).filter(|&i| counts[i] > 0).collect();
        let mut remap = vec![usize::MAX; self.entries.len()];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let entries = kept
            .iter()
            .map(|&i| PoolEntry {
                seq: self.entries[i].seq.clone(),
                count: counts[i],
                logprob: self.entries[i].logprob,
            })
            .collect();
        let mut sorted = draw_indices.to_vec();
        sorted.sort_unstable();
        let draws = sorted.iter().map(|&d| remap[self.draws[d]]).collect();
        (CandidatePool { entries, draws }, kept)
    }

    /// Hash of the distinct sequence list, used to key cached utility matrices.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        for e in &self.entries {
            bytes.extend((e.seq.len() as u64).to_le_bytes());
            for id in e.seq.ids() {
                bytes.extend(id.to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

/// Header record of a pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub source_key: String,
    pub policy: SamplingPolicy,
    pub seed: u64,
    pub n: usize,
    pub max_len: usize,
    pub vocab: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolRecord {
    tokens: Vec<String>,
    count: usize,
    #[serde(with = "logprob_serde")]
    logprob: f64,
    terminated: bool,
    draws: Vec<usize>,
}

/// A pool together with its provenance header, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolFile {
    pub header: PoolHeader,
    pub pool: CandidatePool,
}

impl PoolFile {
    /// JSON lines: the header, then one record per distinct sequence. Tokens
    /// are written without the end-of-sequence marker; `terminated` says
    /// whether it was present.
    pub fn to_jsonl(&self, vocab: &Vocabulary) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        let mut positions: Vec<Vec<usize>> = vec![Vec::new(); self.pool.len()];
        for (d, &e) in self.pool.draws.iter().enumerate() {
            positions[e].push(d);
        }
        for (entry, draws) in self.pool.entries.iter().zip(positions) {
            let record = PoolRecord {
                tokens: entry
                    .seq
                    .content()
                    .iter()
                    .map(|&id| vocab.token(id).to_string())
                    .collect(),
                count: entry.count,
                logprob: entry.logprob,
                terminated: entry.seq.is_terminated(),
                draws,
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl(vocab).as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a pool file, returning it with the vocabulary from its header.
    pub fn read(path: impl AsRef<Path>) -> Result<(PoolFile, Vocabulary)> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        let mut lines = BufReader::new(f).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("{ctx}: empty pool file")))?
            .map_err(|e| Error::io(path, e))?;
        let header: PoolHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::json(&ctx, e))?;
        header.policy.validated()?;
        let vocab = Vocabulary::new(header.vocab.clone())?;

        let mut entries = Vec::new();
        let mut slots: Vec<Option<usize>> = vec![None; header.n];
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PoolRecord = serde_json::from_str(&line).map_err(|e| Error::json(&ctx, e))?;
            let ids = rec
                .tokens
                .iter()
                .map(|t| vocab.id(t))
                .collect::<Result<Vec<_>>>()?;
            let mut ids = ids;
            if rec.terminated {
                ids.push(vocab.eos());
            }
            let seq = TokenSequence::new(ids, &vocab)?;
            if rec.draws.len() != rec.count {
                return Err(Error::InvalidArgument(format!(
                    "{ctx}: record lists {} draws but count {}",
                    rec.draws.len(),
                    rec.count
                )));
            }
            for d in rec.draws {
                match slots.get_mut(d) {
                    Some(slot @ None) => *slot = Some(entries.len()),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "{ctx}: draw index {d} invalid or repeated"
                        )))
                    }
                }
            }
            entries.push(PoolEntry {
                seq,
                count: rec.count,
                logprob: rec.logprob,
            });
        }
        let draws = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::InvalidArgument(format!("{ctx}: draw {i} missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        let pool = CandidatePool::from_parts(entries, draws)?;
        Ok((PoolFile { header, pool }, vocab))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["x", "y", "</s>"]).unwrap()
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), &vocab()).unwrap()
    }

    #[test]
    fn multiset_accounting() {
        let pool = CandidatePool::from_draws(vec![
            (seq(&[0, 2]), -0.5),
            (seq(&[1, 2]), -1.0),
            (seq(&[0, 2]), -0.5),
        ]);
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.n(), 3);
        assert_eq!(pool.entries()[0].count, 2);
        assert_eq!(pool.draws(), &[0, 1, 0]);
        assert_eq!(
            pool.entries().iter().map(|e| e.count).sum::<usize>(),
            pool.n()
        );
    }

    #[test]
    fn restrict_to_all_draws_is_identity() {
        let pool = CandidatePool::from_draws(vec![
            (seq(&[0, 2]), -0.5),
            (seq(&[1, 2]), -1.0),
            (seq(&[0, 2]), -0.5),
        ]);
        let (sub, kept) = pool.restrict(&[0, 1, 2]);
        assert_eq!(sub, pool);
        assert_eq!(kept, vec![0, 1]);
        let (sub, kept) = pool.restrict(&[1]);
        assert_eq!(kept, vec![1]);
        assert_eq!(sub.n(), 1);
    }

    #[test]
    fn file_round_trip_with_neg_inf() {
        let pool = CandidatePool::from_draws(vec![
            (seq(&[0, 2]), -0.5),
            (seq(&[1, 1]), f64::NEG_INFINITY),
            (seq(&[0, 2]), -0.5),
        ]);
        let file = PoolFile {
            header: PoolHeader {
                source_key: "s1".into(),
                policy: SamplingPolicy::epsilon(0.02, 1.0).unwrap(),
                seed: 3,
                n: 3,
                max_len: 2,
                vocab: vocab().tokens().to_vec(),
            },
            pool,
        };
        let text = file.to_jsonl(&vocab());
        assert!(text.contains("\"-inf\""));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("{\"tokens\":[\"x\"]"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        file.write(&path, &vocab()).unwrap();
        let (back, v) = PoolFile::read(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(v, vocab());
    }

    #[test]
    fn from_parts_rejects_duplicates() {
        let e = PoolEntry {
            seq: seq(&[0, 2]),
            count: 1,
            logprob: 0.0,
        };
        assert!(CandidatePool::from_parts(vec![e.clone(), e], vec![0, 1]).is_err());
    }
}
