//! Reconstruction of strip-shredded text documents.
//!
//! The pipeline learns, without labels, a pair of side-specialized
//! convolutional networks that project shred-boundary patches into a
//! common metric space, embeds every shred boundary once, scores
//! pairwise compatibility from embedding distances with a vertical shift
//! search, and orders the shreds by minimizing the accumulated cost of
//! consecutive placements. Network inference count is linear in the
//! number of shreds; only the distance arithmetic is quadratic.

pub mod cli;
pub mod compat;
pub mod docproc;
pub mod metrics;
pub mod projector;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod synth;
pub mod tensornet;
pub mod trainer;
