//! Prune-and-tune ensembles.
//!
//! Train one parent network, derive children by random or anti-random
//! pruning, tune each child briefly, and average their softmax outputs.
//! Also provides calibration and diversity metrics and filter-normalised
//! loss-surface grids.

pub mod bitset;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod landscape;
pub mod masks;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod schedule;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
