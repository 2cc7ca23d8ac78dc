//! Active discovery of rare classes and slices in unlabeled data pools.
//!
//! This crate implements a conditioning-and-targeting selection loop on top of
//! a family of submodular information measures. Given a labeled pool of known
//! concepts and a large unlabeled pool that may hide unknown concepts, the
//! loop alternates between two phases:
//!
//! - **conditioning**: maximize a submodular conditional gain (`f(A | P)`) to
//!   pick points *dissimilar* to everything already known, until a selection
//!   round stops surfacing new concepts;
//! - **targeting**: maximize a submodular mutual information (`I_f(A; Q)`)
//!   against the unknown exemplars found so far to pull in the rest of them.
//!
//! The building blocks are usable on their own:
//!
//! - [`dataset`]: embedding and label ingestion, imbalanced split construction,
//!   and the ground-truth labeling oracle.
//! - [`kernels`]: dense cosine similarity kernels, object-level detection
//!   similarity, and ground-set partitioning.
//! - [`submodular`]: facility-location, graph-cut and log-determinant
//!   instantiations of mutual-information, conditional-gain and conditional
//!   mutual-information set functions, with memoized marginal gains.
//! - [`maximizer`]: budgeted greedy maximization (naive, lazy, stochastic,
//!   partitioned).
//! - [`discovery`]: the round-based discovery loop and its state bookkeeping.
//! - [`baselines`]: uncertainty sampling, gradient-embedding k-means++ and
//!   random selection for comparison.
//! - [`metrics`]: discovery reports, strategy comparison, CSV/JSON export.
//! - [`synthetic`]: planted Gaussian cluster generator for demos and tests.

pub mod baselines;
pub mod dataset;
pub mod discovery;
pub mod error;
pub mod ids;
pub mod kernels;
pub mod maximizer;
pub mod metrics;
pub mod submodular;
pub mod synthetic;

pub use error::{Error, Result};
pub use ids::PointId;

/// Mixes a base seed with a textual tag and an index into a fresh sub-seed.
///
/// Uses FNV-1a so derived streams are stable across platforms and releases;
/// every seeded component of an experiment (per-concept draws, per-round
/// greedy randomness, per-strategy runs) derives its stream through this.
pub fn derive_seed(base: u64, tag: &str, k: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in base
        .to_le_bytes()
        .iter()
        .chain(tag.as_bytes())
        .chain(k.to_le_bytes().iter())
    {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    // final avalanche, splitmix64 style
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}
