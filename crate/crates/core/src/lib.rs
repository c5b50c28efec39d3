//! Virtual air-quality sensors on a spatial sensor graph.
//!
//! A two-layer GraphSAGE regressor predicts hourly NO₂ at an unmonitored
//! node from satellite, meteorological, time and road-proximity features of
//! the node and its sampled neighbours, plus the previous hour's NO₂. At
//! inference the previous-hour input is the model's own last prediction
//! (closed-loop rollout). The crate also provides MLP, CNN and boosted-tree
//! comparators, pretrain/fine-tune transfer, leave-one-location-out
//! evaluation and a synthetic city generator.

#![allow(clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod geograph;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod sage;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor2;

/// Seedable generator used for every stochastic step in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    <Rng as rand::SeedableRng>::seed_from_u64(seed)
}
