//! Deterministic seed derivation.
//!
//! Candidate sampling must be reproducible per node so that a retrained
//! subtree draws the same candidates a from-scratch training would: seeds are
//! derived from (global seed, iteration, class, node path), never from shared
//! RNG state.

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b))
}

pub fn tree_seed(global: u64, iteration: usize, class: usize) -> u64 {
    mix(mix(global, iteration as u64), class as u64)
}

pub fn node_seed(tree_seed: u64, path: u64) -> u64 {
    mix(tree_seed, path)
}

pub fn feature_seed(node_seed: u64, feature: usize) -> u64 {
    mix(node_seed, feature as u64)
}
