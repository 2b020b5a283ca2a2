//! Robust LogitBoost training core: derivatives, split statistics, trees,
//! and the trained model.

pub mod hist;
pub mod instances;
pub mod math;
pub mod model;
pub mod tree;

pub use hist::{Candidates, FeatureLayout, Histogram, Totals};
pub use instances::{InstanceStore, ScoreState};
pub use model::{HyperParams, Model, OnlineState};
pub use tree::{fit_tree, FitParams, Node, NodeKind, Tree, ROOT};
