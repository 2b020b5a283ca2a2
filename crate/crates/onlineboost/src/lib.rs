//! Multiclass gradient boosting with in-place online learning.
//!
//! Trains a Robust LogitBoost ensemble over histogram-discretized features
//! and then supports adding or deleting training instances *in place*: node
//! statistics are maintained per tree so an update touches the online batch
//! instead of the full training set, current splits are kept while they stay
//! within a rank tolerance, and only shifted subtrees are retrained.
//!
//! The crate is organized around the pipeline:
//!
//! - [`dataset`] / [`binning`]: tabular loading and adaptive feature
//!   discretization into at most `B` integer bins per feature.
//! - [`boost`]: softmax, derivatives, split gain, histogram split finding,
//!   breadth-first tree fitting, training and prediction.
//! - [`online`]: the incremental/decremental pass over a trained model.
//! - [`store`]: versioned binary model files (full online-capable state or a
//!   slim prediction-only export).
//! - [`eval`]: the verification harness (functional similarity, leaf-score
//!   error, backdoor inject/remove, batch schedules, speedup timing).

pub mod audit;
pub mod binning;
pub mod boost;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod online;
pub mod store;
pub mod synth;

mod seeds;

pub use serde;

pub use binning::BinMapper;
pub use boost::{HyperParams, Model};
pub use dataset::{BinnedDataset, RawDataset};
pub use error::Error;
pub use online::{Policy, UpdateOptions, UpdateReport};

pub type Result<T> = std::result::Result<T, Error>;
