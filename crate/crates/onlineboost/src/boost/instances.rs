//! Stored training instances and their boosting state.
//!
//! Rows are append-only with stable ids; deletion tombstones an id instead of
//! moving rows. Besides the binned features the store keeps, per instance,
//! the raw score row `F` and the derivative ledger: the probability row that
//! was in effect when each iteration's tree statistics last included the
//! instance. Deletions subtract exactly those stored per-tree-state values.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::boost::math::softmax_row;
use crate::error::Error;
use crate::Result;

#[derive(Debug)]
pub struct InstanceStore {
    bins: Vec<u16>,
    labels: Vec<u32>,
    n_features: usize,
    tombstones: Vec<bool>,
    n_live: usize,
    /// Feature-row reads of non-exempt rows; online passes exempt their own
    /// batch so the counter observes touches of the remaining training set.
    feature_reads: AtomicU64,
    exempt: Vec<bool>,
}

impl Clone for InstanceStore {
    fn clone(&self) -> Self {
        InstanceStore {
            bins: self.bins.clone(),
            labels: self.labels.clone(),
            n_features: self.n_features,
            tombstones: self.tombstones.clone(),
            n_live: self.n_live,
            feature_reads: AtomicU64::new(self.feature_reads.load(Ordering::Relaxed)),
            exempt: self.exempt.clone(),
        }
    }
}

impl InstanceStore {
    pub fn new(bins: Vec<u16>, labels: Vec<u32>, n_features: usize) -> Self {
        let n = labels.len();
        assert_eq!(bins.len(), n * n_features);
        InstanceStore {
            bins,
            labels,
            n_features,
            tombstones: vec![false; n],
            n_live: n,
            feature_reads: AtomicU64::new(0),
            exempt: vec![false; n],
        }
    }

    pub(crate) fn from_parts(
        bins: Vec<u16>,
        labels: Vec<u32>,
        n_features: usize,
        tombstones: Vec<bool>,
    ) -> Self {
        let n_live = tombstones.iter().filter(|&&t| !t).count();
        let n = labels.len();
        assert_eq!(bins.len(), n * n_features);
        InstanceStore {
            bins,
            labels,
            n_features,
            tombstones,
            n_live,
            feature_reads: AtomicU64::new(0),
            exempt: vec![false; n],
        }
    }

    pub fn n_total(&self) -> usize {
        self.labels.len()
    }

    pub fn n_live(&self) -> usize {
        self.n_live
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn label(&self, id: u32) -> u32 {
        self.labels[id as usize]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn is_live(&self, id: u32) -> bool {
        !self.tombstones[id as usize]
    }

    pub fn tombstones(&self) -> &[bool] {
        &self.tombstones
    }

    pub fn live_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.n_total() as u32).filter(|&id| self.is_live(id))
    }

    /// Binned feature row; counts towards [`feature_reads`](Self::feature_reads)
    /// unless the id is exempted for the current pass.
    pub fn row(&self, id: u32) -> &[u16] {
        if !self.exempt[id as usize] {
            self.feature_reads.fetch_add(1, Ordering::Relaxed);
        }
        self.row_uncounted(id)
    }

    pub fn row_uncounted(&self, id: u32) -> &[u16] {
        let i = id as usize * self.n_features;
        &self.bins[i..i + self.n_features]
    }

    pub fn raw_bins(&self) -> &[u16] {
        &self.bins
    }

    pub fn feature_reads(&self) -> u64 {
        self.feature_reads.load(Ordering::Relaxed)
    }

    /// Appends rows, returning the id range `[start, end)`.
    pub fn append(&mut self, bins: &[u16], labels: &[u32]) -> (u32, u32) {
        assert_eq!(bins.len(), labels.len() * self.n_features);
        let start = self.n_total() as u32;
        self.bins.extend_from_slice(bins);
        self.labels.extend_from_slice(labels);
        self.tombstones.extend(std::iter::repeat_n(false, labels.len()));
        self.exempt.extend(std::iter::repeat_n(false, labels.len()));
        self.n_live += labels.len();
        (start, self.n_total() as u32)
    }

    pub fn tombstone(&mut self, ids: &[u32]) {
        for &id in ids {
            if !self.tombstones[id as usize] {
                self.tombstones[id as usize] = true;
                self.n_live -= 1;
            }
        }
    }

    pub fn set_exempt(&mut self, ids: &[u32], flag: bool) {
        for &id in ids {
            self.exempt[id as usize] = flag;
        }
    }

    /// Ids must exist, be live, and be unique.
    pub fn validate_deletable(&self, ids: &[u32]) -> Result<()> {
        let mut bad: Vec<u32> = ids
            .iter()
            .copied()
            .filter(|&id| id as usize >= self.n_total() || !self.is_live(id))
            .collect();
        let mut seen = vec![false; self.n_total()];
        for &id in ids {
            if (id as usize) < self.n_total() {
                if seen[id as usize] {
                    bad.push(id);
                }
                seen[id as usize] = true;
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            bad.sort_unstable();
            bad.dedup();
            Err(Error::UnknownIds(bad))
        }
    }
}

/// Per-instance boosting state: current `F` rows plus the per-iteration
/// probability ledger.
#[derive(Debug, Clone)]
pub struct ScoreState {
    n_classes: usize,
    iterations: usize,
    f: Vec<f64>,
    /// `p` in effect for iteration `m`'s trees, laid out `(id * M + m) * K + k`.
    ledger: Vec<f64>,
}

impl ScoreState {
    pub fn new(n: usize, iterations: usize, n_classes: usize) -> Self {
        ScoreState {
            n_classes,
            iterations,
            f: vec![0.0; n * n_classes],
            ledger: vec![0.0; n * iterations * n_classes],
        }
    }

    pub(crate) fn from_parts(
        n_classes: usize,
        iterations: usize,
        f: Vec<f64>,
        ledger: Vec<f64>,
    ) -> Self {
        ScoreState {
            n_classes,
            iterations,
            f,
            ledger,
        }
    }

    pub fn n(&self) -> usize {
        self.f.len() / self.n_classes
    }

    pub fn append(&mut self, n_new: usize) {
        self.f.extend(std::iter::repeat_n(0.0, n_new * self.n_classes));
        self.ledger
            .extend(std::iter::repeat_n(0.0, n_new * self.iterations * self.n_classes));
    }

    pub fn f_row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.n_classes;
        &self.f[i..i + self.n_classes]
    }

    pub fn f_add(&mut self, id: u32, class: usize, delta: f64) {
        self.f[id as usize * self.n_classes + class] += delta;
    }

    pub fn raw_f(&self) -> &[f64] {
        &self.f
    }

    pub fn raw_ledger(&self) -> &[f64] {
        &self.ledger
    }

    pub fn ledger_p(&self, id: u32, m: usize, k: usize) -> f64 {
        self.ledger[(id as usize * self.iterations + m) * self.n_classes + k]
    }

    pub fn set_ledger_p(&mut self, id: u32, m: usize, k: usize, p: f64) {
        self.ledger[(id as usize * self.iterations + m) * self.n_classes + k] = p;
    }

    pub fn set_ledger_row(&mut self, id: u32, m: usize, p_row: &[f64]) {
        let i = (id as usize * self.iterations + m) * self.n_classes;
        self.ledger[i..i + self.n_classes].copy_from_slice(p_row);
    }

    /// Current probability row implied by the stored scores.
    pub fn softmax_f(&self, id: u32, out: &mut [f64]) {
        softmax_row(self.f_row(id), out);
    }
}
