//! Vocabulary, next-token distributions, token sequences and the table-driven
//! toy autoregressive model.
//!
//! The toy model conditions each step on a source key and the last `order`
//! target tokens. Any `(source, context)` pair without a table entry falls back
//! to the uniform distribution over the vocabulary, so sparse tables still
//! describe a proper distribution over sequences.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved end-of-sequence token.
pub const EOS_TOKEN: &str = "</s>";

/// Tolerance within which a stored distribution is silently renormalized on load.
pub const LOAD_TOLERANCE: f64 = 1e-6;

/// Tolerance for the sum of a [`NextTokenDistribution`].
pub const DIST_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of sequences visited by [`ToyModel::enumerate`].
pub const DEFAULT_ENUMERATION_BUDGET: usize = 1_000_000;

/// Default maximum decode length.
pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::MalformedModel(format!(
                    "empty token at position {i}"
                )));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::MalformedModel(format!("duplicate token {tok:?}")));
            }
        }
        let eos = *index
            .get(EOS_TOKEN)
            .ok_or_else(|| Error::MalformedModel(format!("vocabulary lacks {EOS_TOKEN:?}")))?;
        Ok(Vocabulary { tokens, index, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<TokenId> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    /// Maps whitespace-separated text to a sequence, appending EOS when
    /// `terminated` is set.
    pub fn encode(&self, text: &str, terminated: bool) -> Result<TokenSequence> {
        let mut ids = text
            .split_whitespace()
            .map(|t| self.id(t))
            .collect::<Result<Vec<_>>>()?;
        if terminated {
            ids.push(self.eos);
        }
        TokenSequence::new(ids, self)
    }
}

/// Probability vector over the vocabulary for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    probs: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution(
                "empty probability vector".into(),
            ));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(NextTokenDistribution { probs })
    }

    pub fn uniform(size: usize) -> Self {
        NextTokenDistribution {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id as usize]
    }
}

/// A sequence of token ids; `terminated` iff the final id is EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
    terminated: bool,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= vocab.len()) {
            return Err(Error::InvalidSequence(format!(
                "token id {bad} out of range"
            )));
        }
        Self::with_eos(ids, vocab.eos())
    }

    pub(crate) fn with_eos(ids: Vec<TokenId>, eos: TokenId) -> Result<Self> {
        let eos_count = ids.iter().filter(|&&id| id == eos).count();
        let terminated = ids.last() == Some(&eos);
        if eos_count > 1 || (eos_count == 1 && !terminated) {
            return Err(Error::InvalidSequence(
                "end-of-sequence token may only appear once, at the end".into(),
            ));
        }
        Ok(TokenSequence { ids, terminated })
    }

    pub fn empty() -> Self {
        TokenSequence {
            ids: Vec::new(),
            terminated: false,
        }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Content tokens, i.e. without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        if self.terminated {
            &self.ids[..self.ids.len() - 1]
        } else {
            &self.ids
        }
    }

    /// Whitespace-joined content tokens.
    pub fn text(&self, vocab: &Vocabulary) -> String {
        self.join(vocab, " ")
    }

    pub fn join(&self, vocab: &Vocabulary, sep: &str) -> String {
        let toks: Vec<&str> = self.content().iter().map(|&id| vocab.token(id)).collect();
        toks.join(sep)
    }
}

/// A terminated sequence found by exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct EnumeratedSequence {
    pub seq: TokenSequence,
    pub logprob: f64,
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Positive-probability terminated sequences, sorted by token ids.
    pub sequences: Vec<EnumeratedSequence>,
    /// Mass on sequences still unterminated at the length cap.
    pub unterminated_mass: f64,
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    vocab: Vocabulary,
    order: usize,
    sources: BTreeMap<String, String>,
    table: HashMap<String, HashMap<Vec<TokenId>, NextTokenDistribution>>,
    uniform: NextTokenDistribution,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    vocab: Vec<String>,
    order: usize,
    sources: BTreeMap<String, String>,
    table: Vec<TableEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableEntry {
    source: String,
    context: Vec<String>,
    probs: Vec<f64>,
}

impl ToyModel {
    pub fn new(vocab: Vocabulary, order: usize) -> Self {
        let uniform = NextTokenDistribution::uniform(vocab.len());
        ToyModel {
            vocab,
            order,
            sources: BTreeMap::new(),
            table: HashMap::new(),
            uniform,
        }
    }

    pub fn add_source(&mut self, key: impl Into<String>, text: impl Into<String>) {
        let key = key.into();
        self.table.entry(key.clone()).or_default();
        self.sources.insert(key, text.into());
    }

    /// Stores the distribution for `(source, context)`. Fails on unknown
    /// source, over-long or invalid context, or a duplicate entry.
    pub fn insert(
        &mut self,
        source: &str,
        context: Vec<TokenId>,
        dist: NextTokenDistribution,
    ) -> Result<()> {
        if dist.len() != self.vocab.len() {
            return Err(Error::InvalidDistribution(format!(
                "length {} does not match vocabulary size {}",
                dist.len(),
                self.vocab.len()
            )));
        }
        if context.len() > self.order {
            return Err(Error::ContextTooLong {
                source_key: source.to_string(),
                len: context.len(),
                order: self.order,
            });
        }
        if context
            .iter()
            .any(|&id| id as usize >= self.vocab.len() || id == self.vocab.eos())
        {
            return Err(Error::MalformedModel(format!(
                "context {context:?} contains an invalid or end-of-sequence token"
            )));
        }
        let names = self.context_names(&context);
        let entries = self
            .table
            .get_mut(source)
            .ok_or_else(|| Error::UnknownSource(source.to_string()))?;
        if entries.contains_key(&context) {
            return Err(Error::DuplicateContext {
                source_key: source.to_string(),
                context: names,
            });
        }
        entries.insert(context, dist);
        Ok(())
    }

    fn context_names(&self, context: &[TokenId]) -> Vec<String> {
        context
            .iter()
            .map(|&id| {
                self.vocab
                    .tokens
                    .get(id as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("#{id}"))
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
        let vocab = Vocabulary::new(file.vocab)?;
        let mut model = ToyModel::new(vocab, file.order);
        for (key, text) in file.sources {
            model.add_source(key, text);
        }
        for entry in file.table {
            if !model.sources.contains_key(&entry.source) {
                return Err(Error::UnknownSource(entry.source));
            }
            let context = entry
                .context
                .iter()
                .map(|t| model.vocab.id(t))
                .collect::<Result<Vec<_>>>()?;
            if entry.probs.len() != model.vocab.len() {
                return Err(Error::MalformedModel(format!(
                    "distribution for source {:?} context {:?} has {} entries, vocabulary has {}",
                    entry.source,
                    entry.context,
                    entry.probs.len(),
                    model.vocab.len()
                )));
            }
            if entry.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::MalformedModel(format!(
                    "negative or non-finite probability for source {:?} context {:?}",
                    entry.source, entry.context
                )));
            }
            let sum: f64 = entry.probs.iter().sum();
            if (sum - 1.0).abs() > LOAD_TOLERANCE {
                return Err(Error::UnnormalizedDistribution {
                    source_key: entry.source,
                    context: entry.context,
                    sum,
                });
            }
            let probs = if (sum - 1.0).abs() > DIST_TOLERANCE {
                entry.probs.iter().map(|p| p / sum).collect()
            } else {
                entry.probs
            };
            let dist = NextTokenDistribution::new(probs)?;
            model.insert(&entry.source, context, dist)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut table = Vec::new();
        for (source, entries) in &self.table {
            for (context, dist) in entries {
                table.push(TableEntry {
                    source: source.clone(),
                    context: self.context_names(context),
                    probs: dist.probs.clone(),
                });
            }
        }
        table.sort_by(|a, b| (&a.source, &a.context).cmp(&(&b.source, &b.context)));
        let file = ModelFile {
            vocab: self.vocab.tokens.clone(),
            order: self.order,
            sources: self.sources.clone(),
            table,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sources(&self) -> &BTreeMap<String, String> {
        &self.sources
    }

    pub fn has_source(&self, key: &str) -> bool {
        self.sources.contains_key(key)
    }

    /// Distribution of the next token after `prefix`.
    pub fn next_token_dist(
        &self,
        source: &str,
        prefix: &TokenSequence,
    ) -> Result<&NextTokenDistribution> {
        if prefix.is_terminated() {
            return Err(Error::InvalidSequence(
                "cannot extend a terminated prefix".into(),
            ));
        }
        self.next_token_dist_ids(source, prefix.ids())
    }

    /// Like [`next_token_dist`](Self::next_token_dist) on a raw prefix that is
    /// assumed EOS-free.
    pub fn next_token_dist_ids(
        &self,
        source: &str,
        prefix: &[TokenId],
    ) -> Result<&NextTokenDistribution> {
        let entries = self
            .table
            .get(source)
            .ok_or_else(|| Error::UnknownSource(source.to_string()))?;
        let start = prefix.len() - prefix.len().min(self.order);
        Ok(entries.get(&prefix[start..]).unwrap_or(&self.uniform))
    }

    /// Natural-log probability of a terminated sequence; `-inf` when any step
    /// has probability zero.
    pub fn sequence_logprob(&self, source: &str, seq: &TokenSequence) -> Result<f64> {
        if !seq.is_terminated() {
            return Err(Error::InvalidSequence(
                "sequence log-probability requires a terminated sequence".into(),
            ));
        }
        self.prefix_logprob(source, seq.ids())
    }

    /// Log-probability of generating exactly `ids` (terminated or not).
    pub fn prefix_logprob(&self, source: &str, ids: &[TokenId]) -> Result<f64> {
        let mut total = 0.0;
        for t in 0..ids.len() {
            let p = self.next_token_dist_ids(source, &ids[..t])?.prob(ids[t]);
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += p.ln();
        }
        Ok(total)
    }

    /// Raw step probabilities of every token in `seq`.
    pub fn step_probs(&self, source: &str, seq: &TokenSequence) -> Result<Vec<f64>> {
        let ids = seq.ids();
        (0..ids.len())
            .map(|t| Ok(self.next_token_dist_ids(source, &ids[..t])?.prob(ids[t])))
            .collect()
    }

    /// Lists every positive-probability terminated sequence of length at most
    /// `max_len`. Fails once more than `budget` sequences have been visited.
    pub fn enumerate(&self, source: &str, max_len: usize, budget: usize) -> Result<Enumeration> {
        if !self.has_source(source) {
            return Err(Error::UnknownSource(source.to_string()));
        }
        let mut out = Enumeration {
            sequences: Vec::new(),
            unterminated_mass: 0.0,
        };
        let mut visited = 0usize;
        let mut prefix = Vec::with_capacity(max_len);
        self.enumerate_from(
            source,
            &mut prefix,
            0.0,
            max_len,
            budget,
            &mut visited,
            &mut out,
        )?;
        out.sequences.sort_by(|a, b| a.seq.cmp(&b.seq));
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate_from(
        &self,
        source: &str,
        prefix: &mut Vec<TokenId>,
        logprob: f64,
        max_len: usize,
        budget: usize,
        visited: &mut usize,
        out: &mut Enumeration,
    ) -> Result<()> {
        if prefix.len() == max_len {
            out.unterminated_mass += logprob.exp();
            return Ok(());
        }
        let dist = self.next_token_dist_ids(source, prefix)?;
        let eos = self.vocab.eos();
        for (id, &p) in dist.probs().iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            *visited += 1;
            if *visited > budget {
                return Err(Error::BudgetExceeded { budget });
            }
            let id = id as TokenId;
            let lp = logprob + p.ln();
            prefix.push(id);
            if id == eos {
                out.sequences.push(EnumeratedSequence {
                    seq: TokenSequence {
                        ids: prefix.clone(),
                        terminated: true,
                    },
                    logprob: lp,
                });
            } else {
                self.enumerate_from(source, prefix, lp, max_len, budget, visited, out)?;
            }
            prefix.pop();
        }
        Ok(())
    }

    /// Stable SHA-256 of the serialized model content.
    pub fn content_hash(&self) -> String {
        crate::util::sha256_hex(self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "vocab": ["a", "b", "</s>"],
        "order": 0,
        "sources": {"s1": "hello"},
        "table": [{"source": "s1", "context": [], "probs": [0.6, 0.3, 0.1]}]
    }"#;

    fn order_one() -> ToyModel {
        let text = r#"{
            "vocab": ["a", "b", "</s>"],
            "order": 1,
            "sources": {"s1": "hello"},
            "table": [
                {"source": "s1", "context": [], "probs": [0.5, 0.5, 0.0]},
                {"source": "s1", "context": ["a"], "probs": [0.0, 0.0, 1.0]},
                {"source": "s1", "context": ["b"], "probs": [0.2, 0.3, 0.5]}
            ]
        }"#;
        ToyModel::from_json(text).unwrap()
    }

    #[test]
    fn loads_minimal_file() {
        let m = ToyModel::from_json(MINIMAL).unwrap();
        assert_eq!(m.order(), 0);
        assert_eq!(m.vocab().len(), 3);
        assert_eq!(m.vocab().eos(), 2);
        let d = m.next_token_dist("s1", &TokenSequence::empty()).unwrap();
        assert_eq!(d.probs(), &[0.6, 0.3, 0.1]);
    }

    #[test]
    fn rejects_unnormalized() {
        let text = MINIMAL.replace("[0.6, 0.3, 0.1]", "[0.3, 0.1, 0.1]");
        let err = ToyModel::from_json(&text).unwrap_err();
        assert!(
            matches!(err, Error::UnnormalizedDistribution { .. }),
            "{err}"
        );
        assert!(err.to_string().contains("unnormalized distribution"));
    }

    #[test]
    fn renormalizes_small_drift() {
        let text = MINIMAL.replace("[0.6, 0.3, 0.1]", "[0.6, 0.3, 0.1000005]");
        let m = ToyModel::from_json(&text).unwrap();
        let d = m.next_token_dist("s1", &TokenSequence::empty()).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_long_context() {
        let text = r#"{"vocab": ["a","b","</s>"], "order": 1, "sources": {"s": "x"},
            "table": [{"source": "s", "context": ["a","b"], "probs": [0.6,0.3,0.1]}]}"#;
        let err = ToyModel::from_json(text).unwrap_err();
        assert!(
            err.to_string().contains("context longer than order"),
            "{err}"
        );
    }

    #[test]
    fn rejects_unknown_token_and_duplicates() {
        let text = r#"{"vocab": ["a","b","</s>"], "order": 1, "sources": {"s": "x"},
            "table": [{"source": "s", "context": ["zz"], "probs": [0.6,0.3,0.1]}]}"#;
        assert!(matches!(
            ToyModel::from_json(text),
            Err(Error::UnknownToken(_))
        ));
        let text = r#"{"vocab": ["a","b","</s>"], "order": 1, "sources": {"s": "x"},
            "table": [{"source": "s", "context": ["a"], "probs": [0.6,0.3,0.1]},
                      {"source": "s", "context": ["a"], "probs": [0.6,0.3,0.1]}]}"#;
        assert!(matches!(
            ToyModel::from_json(text),
            Err(Error::DuplicateContext { .. })
        ));
        let text = r#"{"vocab": ["a","b"], "order": 0, "sources": {}, "table": []}"#;
        assert!(matches!(
            ToyModel::from_json(text),
            Err(Error::MalformedModel(_))
        ));
        assert!(matches!(
            ToyModel::from_json("{"),
            Err(Error::MalformedModel(_))
        ));
    }

    #[test]
    fn missing_context_falls_back_to_uniform() {
        let text = r#"{"vocab": ["a","b","</s>"], "order": 1, "sources": {"s": "x"}, "table": []}"#;
        let m = ToyModel::from_json(text).unwrap();
        let d = m.next_token_dist("s", &TokenSequence::empty()).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lookup_uses_last_order_tokens() {
        let m = order_one();
        let b = m.vocab().id("b").unwrap();
        let a = m.vocab().id("a").unwrap();
        let prefix = TokenSequence::new(vec![a, b], m.vocab()).unwrap();
        assert_eq!(
            m.next_token_dist("s1", &prefix).unwrap().probs(),
            &[0.2, 0.3, 0.5]
        );
        assert!(matches!(
            m.next_token_dist("nope", &prefix),
            Err(Error::UnknownSource(_))
        ));
    }

    #[test]
    fn next_token_dist_rejects_terminated_prefix() {
        let m = order_one();
        let seq = TokenSequence::new(vec![0, 2], m.vocab()).unwrap();
        assert!(m.next_token_dist("s1", &seq).is_err());
    }

    #[test]
    fn sequence_logprob_examples() {
        let m = order_one();
        // b (0.5), b (0.3), EOS (0.5)
        let seq = TokenSequence::new(vec![1, 1, 2], m.vocab()).unwrap();
        let lp = m.sequence_logprob("s1", &seq).unwrap();
        assert!((lp - (0.5f64 * 0.3 * 0.5).ln()).abs() < 1e-12);

        // two steps with probability 0.5 each
        let seq = TokenSequence::new(vec![1, 2], m.vocab()).unwrap();
        let lp = m.sequence_logprob("s1", &seq).unwrap();
        assert!((lp - (-1.386294)).abs() < 1e-6);
        assert!((lp - 0.25f64.ln()).abs() < 1e-15);

        // zero-probability step
        let seq = TokenSequence::new(vec![2], m.vocab()).unwrap();
        assert_eq!(m.sequence_logprob("s1", &seq).unwrap(), f64::NEG_INFINITY);

        let open = TokenSequence::new(vec![0], m.vocab()).unwrap();
        assert!(m.sequence_logprob("s1", &open).is_err());
    }

    #[test]
    fn eos_only_sequence_with_certain_eos_has_zero_logprob() {
        let text = r#"{"vocab": ["a","</s>"], "order": 0, "sources": {"s": "x"},
            "table": [{"source": "s", "context": [], "probs": [0.0, 1.0]}]}"#;
        let m = ToyModel::from_json(text).unwrap();
        let seq = TokenSequence::new(vec![1], m.vocab()).unwrap();
        assert_eq!(m.sequence_logprob("s", &seq).unwrap(), 0.0);
    }

    #[test]
    fn sequence_invariants() {
        let v = Vocabulary::new(["a", "b", EOS_TOKEN]).unwrap();
        assert!(TokenSequence::new(vec![2, 0], &v).is_err());
        assert!(TokenSequence::new(vec![0, 2, 2], &v).is_err());
        assert!(TokenSequence::new(vec![7], &v).is_err());
        let s = TokenSequence::new(vec![0, 1, 2], &v).unwrap();
        assert!(s.is_terminated());
        assert_eq!(s.text(&v), "a b");
        assert_eq!(v.encode("a b", true).unwrap(), s);
        assert!(Vocabulary::new(["a", "a", EOS_TOKEN]).is_err());
        assert!(Vocabulary::new(["", EOS_TOKEN]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = order_one();
        let again = ToyModel::from_json(&m.to_json()).unwrap();
        assert_eq!(again.to_json(), m.to_json());
        assert_eq!(again.content_hash(), m.content_hash());
    }

    #[test]
    fn enumeration_mass_is_bounded() {
        let m = order_one();
        let e = m.enumerate("s1", 5, DEFAULT_ENUMERATION_BUDGET).unwrap();
        let total: f64 = e.sequences.iter().map(|s| s.logprob.exp()).sum();
        assert!(total <= 1.0 + 1e-6);
        assert!((total + e.unterminated_mass - 1.0).abs() < 1e-9);
        for s in &e.sequences {
            let lp = m.sequence_logprob("s1", &s.seq).unwrap();
            assert!((lp - s.logprob).abs() < 1e-12);
        }
        assert!(matches!(
            m.enumerate("s1", 5, 3),
            Err(Error::BudgetExceeded { budget: 3 })
        ));
    }
}
