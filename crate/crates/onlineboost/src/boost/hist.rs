//! Per-node split statistics.
//!
//! Every internal node keeps, per feature and per bin, the sums `Σ(r-p)` and
//! `Σ p(1-p)` plus an instance count over the data reaching it. Split gains
//! are evaluated by prefix-scanning these histograms at the node's persisted
//! candidate bins, so both training and the online Keep/Retrain check share
//! one code path.
//!
//! Candidate gains are only emitted at the lowest bin of each distinct
//! left-count partition: a candidate whose bin holds no live instances splits
//! the node identically to the nearest populated bin below it, and evaluating
//! both would make the argmax depend on dead bins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binning::BinMapper;
use crate::seeds;

/// Guard on hessian-sum denominators; a side at or below this is not a valid
/// split and a leaf with `sum_pp` at or below it gets value 0.
pub const EPS_H: f64 = 1e-12;
/// Minimum gain for a split to be worth making during fitting.
pub const MIN_GAIN: f64 = 1e-12;

/// Bin offsets of each feature into a flat histogram array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    offsets: Vec<u32>,
}

impl FeatureLayout {
    pub fn from_mapper(mapper: &BinMapper) -> Self {
        let mut offsets = Vec::with_capacity(mapper.n_features() + 1);
        let mut acc = 0u32;
        offsets.push(0);
        for f in 0..mapper.n_features() {
            acc += mapper.n_bins(f) as u32;
            offsets.push(acc);
        }
        FeatureLayout { offsets }
    }

    pub fn n_features(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_bins(&self) -> usize {
        *self.offsets.last().unwrap() as usize
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        (self.offsets[feature + 1] - self.offsets[feature]) as usize
    }

    pub fn start(&self, feature: usize) -> usize {
        self.offsets[feature] as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Totals {
    pub sum_rp: f64,
    pub sum_pp: f64,
    pub count: u32,
}

impl Totals {
    pub fn add(&mut self, rp: f64, pp: f64) {
        self.sum_rp += rp;
        self.sum_pp += pp;
        self.count += 1;
    }

    pub fn apply(&mut self, d_rp: f64, d_pp: f64, d_count: i32) {
        self.sum_rp += d_rp;
        self.sum_pp += d_pp;
        self.count = (self.count as i64 + d_count as i64) as u32;
    }

    pub fn minus(&self, other: &Totals) -> Totals {
        Totals {
            sum_rp: self.sum_rp - other.sum_rp,
            sum_pp: self.sum_pp - other.sum_pp,
            count: self.count - other.count,
        }
    }
}

/// Flat per-feature-per-bin statistics (see [`FeatureLayout`]).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Histogram {
    pub sum_rp: Vec<f64>,
    pub sum_pp: Vec<f64>,
    pub count: Vec<u32>,
}

impl Histogram {
    pub fn zeroed(total_bins: usize) -> Self {
        Histogram {
            sum_rp: vec![0.0; total_bins],
            sum_pp: vec![0.0; total_bins],
            count: vec![0; total_bins],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sum_rp.is_empty()
    }

    /// Accumulate one instance into every feature's bin.
    pub fn add_row(&mut self, layout: &FeatureLayout, bins: &[u16], rp: f64, pp: f64) {
        for (f, &b) in bins.iter().enumerate() {
            let i = layout.start(f) + b as usize;
            self.sum_rp[i] += rp;
            self.sum_pp[i] += pp;
            self.count[i] += 1;
        }
    }

    /// Signed update used by the online pass.
    pub fn apply_row(&mut self, layout: &FeatureLayout, bins: &[u16], d_rp: f64, d_pp: f64, d_count: i32) {
        for (f, &b) in bins.iter().enumerate() {
            let i = layout.start(f) + b as usize;
            self.sum_rp[i] += d_rp;
            self.sum_pp[i] += d_pp;
            self.count[i] = (self.count[i] as i64 + d_count as i64) as u32;
        }
    }

    pub fn subtract(&mut self, other: &Histogram) {
        for (a, b) in self.sum_rp.iter_mut().zip(&other.sum_rp) {
            *a -= b;
        }
        for (a, b) in self.sum_pp.iter_mut().zip(&other.sum_pp) {
            *a -= b;
        }
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a -= b;
        }
    }
}

/// Persisted per-feature candidate split bins, each list ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidates {
    pub bins: Vec<u16>,
    pub offsets: Vec<u32>,
}

impl Candidates {
    pub fn for_feature(&self, f: usize) -> &[u16] {
        &self.bins[self.offsets[f] as usize..self.offsets[f + 1] as usize]
    }

    pub fn n_features(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total(&self) -> usize {
        self.bins.len()
    }
}

/// Robust `⌈rate·m⌉` clamped to `[1, m]`; guards against FP like
/// `0.1 * 10 = 1.0000000000000002` rounding the ceiling up a step.
pub fn ceil_frac(rate: f64, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    let k = (rate * m as f64 - 1e-9).ceil() as i64;
    k.clamp(1, m as i64) as usize
}

/// Sample `⌈α·|present|⌉` candidate bins per feature, without replacement,
/// deterministically from the node seed. `α = 1` keeps every present bin.
pub fn sample_candidates(
    hist: &Histogram,
    layout: &FeatureLayout,
    alpha: f64,
    node_seed: u64,
) -> Candidates {
    let mut bins = Vec::new();
    let mut offsets = Vec::with_capacity(layout.n_features() + 1);
    offsets.push(0u32);
    let mut present = Vec::new();
    for f in 0..layout.n_features() {
        present.clear();
        let start = layout.start(f);
        for b in 0..layout.n_bins(f) {
            if hist.count[start + b] > 0 {
                present.push(b as u16);
            }
        }
        if !present.is_empty() {
            let take = ceil_frac(alpha, present.len());
            if take >= present.len() {
                bins.extend_from_slice(&present);
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::feature_seed(node_seed, f));
                let mut chosen: Vec<u16> = rand::seq::index::sample(&mut rng, present.len(), take)
                    .iter()
                    .map(|i| present[i])
                    .collect();
                chosen.sort_unstable();
                bins.extend_from_slice(&chosen);
            }
        }
        offsets.push(bins.len() as u32);
    }
    Candidates { bins, offsets }
}

/// Split gain for a left/total pair of `(Σ(r-p), Σp(1-p))` sums. `None` marks
/// an invalid split (either side's hessian sum at or below `EPS_H`).
pub fn split_gain(left: (f64, f64), total: (f64, f64)) -> Option<f64> {
    let (gl, hl) = left;
    let (gt, ht) = total;
    let gr = gt - gl;
    let hr = ht - hl;
    if hl <= EPS_H || hr <= EPS_H {
        return None;
    }
    Some(gl * gl / hl + gr * gr / hr - gt * gt / ht)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateGain {
    pub feature: u32,
    pub bin: u16,
    pub gain: f64,
    pub left_count: u32,
}

/// Evaluate the gain at every persisted candidate by prefix scan, emitting in
/// (feature asc, bin asc) order. Candidates that reproduce an already-seen
/// left-count on the same feature, or leave a side empty or degenerate, are
/// skipped.
pub fn scan_candidate_gains(
    hist: &Histogram,
    layout: &FeatureLayout,
    cands: &Candidates,
    totals: &Totals,
    out: &mut Vec<CandidateGain>,
) {
    out.clear();
    for f in 0..cands.n_features() {
        let bins = cands.for_feature(f);
        if bins.is_empty() {
            continue;
        }
        let start = layout.start(f);
        let mut acc_rp = 0.0;
        let mut acc_pp = 0.0;
        let mut acc_n = 0u32;
        let mut pos = 0usize;
        let mut last_n = 0u32; // left_count == 0 is invalid, so 0 doubles as the sentinel
        for &cb in bins {
            while pos <= cb as usize {
                acc_rp += hist.sum_rp[start + pos];
                acc_pp += hist.sum_pp[start + pos];
                acc_n += hist.count[start + pos];
                pos += 1;
            }
            if acc_n == last_n {
                continue;
            }
            last_n = acc_n;
            if acc_n >= totals.count {
                break;
            }
            if let Some(gain) = split_gain((acc_rp, acc_pp), (totals.sum_rp, totals.sum_pp)) {
                out.push(CandidateGain {
                    feature: f as u32,
                    bin: cb,
                    gain,
                    left_count: acc_n,
                });
            }
        }
    }
}

/// Two gains within this slack of each other are one tie class. Equal sums
/// reached by different arithmetic routes (fresh accumulation vs maintained
/// statistics) land within it, so tie-breaking stays deterministic across
/// routes. The absolute floor covers late iterations, where gains shrink
/// towards zero while the accumulated float residue stays at summation scale.
fn gain_tie_slack(g: f64) -> f64 {
    1e-10 * g.abs() + 1e-9
}

pub fn gain_strictly_better(candidate: f64, incumbent: f64) -> bool {
    candidate > incumbent + gain_tie_slack(incumbent)
}

pub fn gain_tied(a: f64, b: f64) -> bool {
    !gain_strictly_better(a, b) && !gain_strictly_better(b, a)
}

/// The maximizer under deterministic tie-breaking (ties resolve to the lowest
/// feature index, then the lowest bin — the scan emission order).
pub fn best_of(gains: &[CandidateGain]) -> Option<CandidateGain> {
    let mut best: Option<CandidateGain> = None;
    for c in gains {
        if best.is_none_or(|b| gain_strictly_better(c.gain, b.gain)) {
            best = Some(*c);
        }
    }
    best
}

/// Prefix statistics of one feature up to and including `bin`.
pub fn prefix_at(hist: &Histogram, layout: &FeatureLayout, feature: usize, bin: u16) -> Totals {
    let start = layout.start(feature);
    let mut t = Totals::default();
    for b in 0..=bin as usize {
        t.sum_rp += hist.sum_rp[start + b];
        t.sum_pp += hist.sum_pp[start + b];
        t.count += hist.count[start + b];
    }
    t
}
