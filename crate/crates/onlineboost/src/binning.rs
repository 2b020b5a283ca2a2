//! Adaptive feature discretization.
//!
//! Each feature is discretized independently: values are sorted and grouped
//! greedily, starting a new bin whenever the gap from the current bin's
//! anchor exceeds the bin width. The width starts at 1e-10 and doubles
//! whenever the group count would exceed the bin budget, so every feature
//! ends up with at most `B` bins and ids fit in `0..B-1`.
//!
//! The mapper stores the anchor (lower boundary) of every bin. Assignment of
//! a value is by boundary lookup, which reproduces the construction exactly
//! on training data; unseen values in the gap between two bins resolve to the
//! lower bin, and out-of-range values clamp to the first or last bin.

use crate::dataset::{BinnedDataset, RawDataset};
use crate::error::Error;
use crate::Result;

const INITIAL_BIN_WIDTH: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    /// Per feature: ascending bin lower boundaries, one per bin id.
    boundaries: Vec<Vec<f64>>,
    /// Per feature: the accepted bin width.
    widths: Vec<f64>,
    max_bins: usize,
}

impl BinMapper {
    pub fn fit(raw: &RawDataset, max_bins: usize) -> Result<BinMapper> {
        if max_bins < 2 {
            return Err(Error::InvalidParam {
                name: "bins",
                msg: format!("need at least 2, got {max_bins}"),
            });
        }
        if max_bins > u16::MAX as usize + 1 {
            return Err(Error::InvalidParam {
                name: "bins",
                msg: format!("at most {}, got {max_bins}", u16::MAX as usize + 1),
            });
        }
        let mut boundaries = Vec::with_capacity(raw.n_features);
        let mut widths = Vec::with_capacity(raw.n_features);
        let mut column = vec![0.0; raw.n_rows()];
        for f in 0..raw.n_features {
            for (i, v) in column.iter_mut().enumerate() {
                *v = raw.features[i * raw.n_features + f];
            }
            column.sort_unstable_by(|a, b| a.total_cmp(b));
            let (anchors, width) = discretize(&column, max_bins);
            boundaries.push(anchors);
            widths.push(width);
        }
        Ok(BinMapper {
            boundaries,
            widths,
            max_bins,
        })
    }

    pub fn n_features(&self) -> usize {
        self.boundaries.len()
    }

    pub fn max_bins(&self) -> usize {
        self.max_bins
    }

    /// Number of bins actually materialized for a feature (≤ max_bins).
    pub fn n_bins(&self, feature: usize) -> usize {
        self.boundaries[feature].len()
    }

    pub fn boundaries(&self, feature: usize) -> &[f64] {
        &self.boundaries[feature]
    }

    pub fn width(&self, feature: usize) -> f64 {
        self.widths[feature]
    }

    pub fn bin_value(&self, feature: usize, value: f64) -> u16 {
        let b = &self.boundaries[feature];
        // partition_point is the count of anchors <= value; clamp below range.
        let idx = b.partition_point(|a| *a <= value);
        idx.saturating_sub(1) as u16
    }

    pub fn bin_row(&self, row: &[f64], out: &mut [u16]) -> Result<()> {
        if row.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        for (f, (&v, slot)) in row.iter().zip(out.iter_mut()).enumerate() {
            *slot = self.bin_value(f, v);
        }
        Ok(())
    }

    pub fn apply(&self, raw: &RawDataset) -> Result<BinnedDataset> {
        if raw.n_features != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: raw.n_features,
            });
        }
        let mut bins = vec![0u16; raw.n_rows() * raw.n_features];
        for i in 0..raw.n_rows() {
            let out = &mut bins[i * raw.n_features..(i + 1) * raw.n_features];
            self.bin_row(raw.row(i), out)?;
        }
        Ok(BinnedDataset {
            labels: raw.labels.clone(),
            bins,
            n_features: raw.n_features,
            n_classes: raw.n_classes,
        })
    }

    pub(crate) fn from_parts(boundaries: Vec<Vec<f64>>, widths: Vec<f64>, max_bins: usize) -> Self {
        BinMapper {
            boundaries,
            widths,
            max_bins,
        }
    }
}

/// One feature's pass: returns bin anchors and the accepted width.
fn discretize(sorted: &[f64], max_bins: usize) -> (Vec<f64>, f64) {
    let mut width = INITIAL_BIN_WIDTH;
    loop {
        let mut anchors = vec![sorted[0]];
        let mut overflow = false;
        for &v in &sorted[1..] {
            if v - *anchors.last().unwrap() > width {
                // The next id would be anchors.len(); keep ids within 0..max_bins.
                if anchors.len() == max_bins {
                    overflow = true;
                    break;
                }
                anchors.push(v);
            }
        }
        if !overflow {
            return (anchors, width);
        }
        width *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_feature(values: &[f64]) -> RawDataset {
        RawDataset::new(vec![0; values.len()], values.to_vec(), 1).unwrap()
    }

    /// Independent re-statement of the discretization loop: assign ids over
    /// the sorted values directly, doubling on overflow.
    fn brute_force_ids(values: &[f64], max_bins: usize) -> Vec<u16> {
        let mut sorted: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut width = INITIAL_BIN_WIDTH;
        'outer: loop {
            let mut ids = vec![0u16; values.len()];
            let mut cnt = 0u16;
            let mut anchor = sorted[0].1;
            for &(orig, v) in &sorted {
                if v - anchor > width {
                    cnt += 1;
                    anchor = v;
                    if cnt as usize >= max_bins {
                        width *= 2.0;
                        continue 'outer;
                    }
                }
                ids[orig] = cnt;
            }
            return ids;
        }
    }

    #[test]
    fn hand_traced_example() {
        let raw = single_feature(&[0.0, 0.0, 1.0, 2.5, 2.5, 100.0]);
        let mapper = BinMapper::fit(&raw, 8).unwrap();
        let binned = mapper.apply(&raw).unwrap();
        let ids: Vec<u16> = (0..6).map(|i| binned.row(i)[0]).collect();
        assert_eq!(ids, vec![0, 0, 1, 2, 2, 3]);
        assert_eq!(ids, brute_force_ids(&[0.0, 0.0, 1.0, 2.5, 2.5, 100.0], 8));
    }

    #[test]
    fn constant_feature_single_bin() {
        let raw = single_feature(&[5.0; 32]);
        let mapper = BinMapper::fit(&raw, 4).unwrap();
        assert_eq!(mapper.n_bins(0), 1);
        let binned = mapper.apply(&raw).unwrap();
        assert!(binned.bins.iter().all(|&b| b == 0));
    }

    #[test]
    fn doubling_keeps_ids_under_budget() {
        // B+1 equally spaced values force more than B groups at the initial
        // width, so the width must double until the ids fit.
        let b = 8usize;
        let values: Vec<f64> = (0..=b).map(|i| i as f64).collect();
        let raw = single_feature(&values);
        let mapper = BinMapper::fit(&raw, b).unwrap();
        assert!(mapper.n_bins(0) <= b);
        assert!(mapper.width(0) > INITIAL_BIN_WIDTH);
        let binned = mapper.apply(&raw).unwrap();
        let ids: Vec<u16> = (0..values.len()).map(|i| binned.row(i)[0]).collect();
        assert_eq!(ids, brute_force_ids(&values, b));
    }

    #[test]
    fn training_values_round_trip() {
        let values = [3.0, -1.5, 0.0, 0.25, 7.125, -1.5, 3.0000001];
        let raw = single_feature(&values);
        let mapper = BinMapper::fit(&raw, 16).unwrap();
        let ids = brute_force_ids(&values, 16);
        for (i, &v) in values.iter().enumerate() {
            assert_eq!(mapper.bin_value(0, v), ids[i], "value {v}");
        }
    }

    #[test]
    fn out_of_range_clamps() {
        let raw = single_feature(&[0.0, 1.0, 2.0]);
        let mapper = BinMapper::fit(&raw, 8).unwrap();
        assert_eq!(mapper.bin_value(0, -100.0), 0);
        assert_eq!(mapper.bin_value(0, 100.0), mapper.n_bins(0) as u16 - 1);
    }

    #[test]
    fn feature_count_mismatch() {
        let raw = single_feature(&[0.0, 1.0]);
        let mapper = BinMapper::fit(&raw, 8).unwrap();
        let wide = RawDataset::new(vec![0], vec![1.0, 2.0], 2).unwrap();
        assert!(mapper.apply(&wide).is_err());
    }

    proptest! {
        #[test]
        fn ids_match_brute_force_and_stay_bounded(
            values in proptest::collection::vec(-1e3..1e3f64, 1..200),
            max_bins in 2usize..32,
        ) {
            let raw = single_feature(&values);
            let mapper = BinMapper::fit(&raw, max_bins).unwrap();
            prop_assert!(mapper.n_bins(0) <= max_bins);
            let expected = brute_force_ids(&values, max_bins);
            for (i, &v) in values.iter().enumerate() {
                prop_assert_eq!(mapper.bin_value(0, v), expected[i]);
            }
            // Monotone over sorted raw values.
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let ids: Vec<u16> = sorted.iter().map(|&v| mapper.bin_value(0, v)).collect();
            prop_assert!(ids.windows(2).all(|w| w[0] <= w[1]));
            // Deterministic rebuild.
            let again = BinMapper::fit(&raw, max_bins).unwrap();
            prop_assert_eq!(mapper, again);
        }
    }
}
