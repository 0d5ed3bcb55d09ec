//! Sampling-based minimum Bayes risk (MBR) decoding for autoregressive
//! sequence models.
//!
//! Candidates are drawn with ancestral, top-k, nucleus or epsilon sampling
//! (with temperature), scored pairwise with a utility metric, and the
//! candidate with the highest Monte-Carlo expected utility is selected. A
//! table-driven toy model makes every quantity checkable against exhaustive
//! enumeration. A beam-search baseline and several diagnostics (mass curves,
//! candidate-size sweeps, token annotation, paired permutation tests) round
//! out the toolkit.

pub mod analysis;
pub mod beam;
pub mod cli;
pub mod error;
pub mod mbr;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod rng;
pub mod sampling;
mod util;

pub use error::{Error, Result, ScorerError};
pub use mbr::{mbr_decode, Detokenizer, MbrResult, UtilityMatrix};
pub use model::{NextTokenDistribution, TokenId, TokenSequence, ToyModel, Vocabulary};
pub use pool::{CandidatePool, PoolEntry, PoolFile};
pub use sampling::{SamplingPolicy, Strategy, TruncatedDistribution};
