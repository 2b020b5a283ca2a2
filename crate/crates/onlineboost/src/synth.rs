//! Synthetic multiclass data for experiments that must run without downloads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::RawDataset;

/// Gaussian blobs: one unit-variance cluster per class, centers drawn
/// uniformly in [-4, 4] per dimension, labels balanced round-robin.
///
/// With `quantize` the values are snapped to that many integer levels over
/// [-8, 8], mimicking the integer-valued UCI tabular sets and keeping
/// per-feature bin counts (and histogram memory) small.
pub fn gaussian_blobs(
    n_rows: usize,
    n_features: usize,
    n_classes: usize,
    quantize: Option<u32>,
    seed: u64,
) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..n_classes * n_features)
        .map(|_| rng.gen_range(-4.0..4.0))
        .collect();
    let mut labels = Vec::with_capacity(n_rows);
    let mut features = Vec::with_capacity(n_rows * n_features);
    for i in 0..n_rows {
        let y = i % n_classes;
        labels.push(y as u32);
        for f in 0..n_features {
            let mut v = centers[y * n_features + f] + normal(&mut rng);
            if let Some(levels) = quantize {
                let t = ((v + 8.0) / 16.0).clamp(0.0, 1.0);
                v = (t * (levels - 1) as f64).round();
            }
            features.push(v);
        }
    }
    RawDataset {
        labels,
        features,
        n_features,
        n_classes,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, one sample per call.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministic shuffle split into (train, test).
pub fn train_test_split(raw: &RawDataset, test_fraction: f64, seed: u64) -> (RawDataset, RawDataset) {
    let mut idx: Vec<usize> = (0..raw.n_rows()).collect();
    shuffle(&mut idx, seed);
    let n_test = ((raw.n_rows() as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, raw.n_rows() - 1);
    let (test_idx, train_idx) = idx.split_at(n_test);
    (raw.subset(train_idx), raw.subset(test_idx))
}

pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_shapes_and_determinism() {
        let a = gaussian_blobs(90, 5, 3, Some(16), 42);
        assert_eq!(a.n_rows(), 90);
        assert_eq!(a.n_features, 5);
        assert_eq!(a.n_classes, 3);
        assert!(a.features.iter().all(|v| v.fract() == 0.0));
        let b = gaussian_blobs(90, 5, 3, Some(16), 42);
        assert_eq!(a.features, b.features);
        let c = gaussian_blobs(90, 5, 3, Some(16), 43);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn split_partitions_rows() {
        let raw = gaussian_blobs(100, 3, 2, None, 1);
        let (train, test) = train_test_split(&raw, 0.25, 9);
        assert_eq!(train.n_rows() + test.n_rows(), 100);
        assert_eq!(test.n_rows(), 25);
    }
}
