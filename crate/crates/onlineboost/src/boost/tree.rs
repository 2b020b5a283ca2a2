//! Regression trees over binned features.
//!
//! Nodes live in an arena; internal nodes route `bin <= threshold` left and
//! keep their full split statistics and candidate sets, leaves keep their
//! prediction value and the ids of the instances that reached them. Trees
//! grow breadth-first until the terminal-node budget is exhausted or no leaf
//! has a valid split, which makes the final shape a function of the per-node
//! split decisions alone — the property the online Keep/Retrain pass relies
//! on to mirror a from-scratch training.

use std::collections::VecDeque;

use crate::boost::hist::{
    best_of, sample_candidates, scan_candidate_gains, Candidates, FeatureLayout, Histogram,
    Totals, EPS_H, MIN_GAIN,
};
use crate::boost::instances::InstanceStore;
use crate::seeds;

#[derive(Debug, Clone)]
pub enum NodeKind {
    Internal {
        feature: u32,
        bin: u16,
        left: u32,
        right: u32,
        gain: f64,
        hist: Histogram,
        cands: Candidates,
    },
    Leaf {
        beta: f64,
        ids: Vec<u32>,
    },
}

#[derive(Debug, Clone)]
pub struct Node {
    /// Root-relative position: root is 1, children are `path*2` and `path*2+1`.
    pub path: u64,
    pub totals: Totals,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

pub const ROOT: u32 = 0;

/// Cap on |β|. A badly-misclassified instance isolated in a leaf can drive
/// `Σ(r-p)` orders of magnitude above `Σ(1-p)p` and blow up the raw scores;
/// clamping keeps single leaves from dominating the ensemble.
pub const MAX_LEAF_VALUE: f64 = 4.0;

/// `β = (K-1)/K · Σ(r-p) / Σ(1-p)p`, zero when the denominator degenerates,
/// clamped to ±[`MAX_LEAF_VALUE`].
pub fn leaf_value(totals: &Totals, k_factor: f64) -> f64 {
    if totals.sum_pp <= EPS_H {
        0.0
    } else {
        (k_factor * totals.sum_rp / totals.sum_pp).clamp(-MAX_LEAF_VALUE, MAX_LEAF_VALUE)
    }
}

impl Tree {
    pub fn node(&self, idx: u32) -> &Node {
        &self.nodes[idx as usize]
    }

    pub fn node_mut(&mut self, idx: u32) -> &mut Node {
        &mut self.nodes[idx as usize]
    }

    /// Leaf index an instance routes to, starting from `from`.
    pub fn route(&self, from: u32, bins: &[u16]) -> u32 {
        let mut idx = from;
        loop {
            match &self.nodes[idx as usize].kind {
                NodeKind::Leaf { .. } => return idx,
                NodeKind::Internal {
                    feature,
                    bin,
                    left,
                    right,
                    ..
                } => {
                    idx = if bins[*feature as usize] <= *bin {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn leaf_beta(&self, bins: &[u16]) -> f64 {
        match &self.nodes[self.route(ROOT, bins) as usize].kind {
            NodeKind::Leaf { beta, .. } => *beta,
            NodeKind::Internal { .. } => unreachable!(),
        }
    }

    pub fn leaves_under(&self, from: u32, out: &mut Vec<u32>) {
        match &self.nodes[from as usize].kind {
            NodeKind::Leaf { .. } => out.push(from),
            NodeKind::Internal { left, right, .. } => {
                self.leaves_under(*left, out);
                self.leaves_under(*right, out);
            }
        }
    }

    pub fn terminal_count(&self, from: u32) -> u32 {
        match &self.nodes[from as usize].kind {
            NodeKind::Leaf { .. } => 1,
            NodeKind::Internal { left, right, .. } => {
                self.terminal_count(*left) + self.terminal_count(*right)
            }
        }
    }

    /// Ids stored in the leaves under `from`, in leaf order.
    pub fn collect_ids(&self, from: u32, out: &mut Vec<u32>) {
        match &self.nodes[from as usize].kind {
            NodeKind::Leaf { ids, .. } => out.extend_from_slice(ids),
            NodeKind::Internal { left, right, .. } => {
                self.collect_ids(*left, out);
                self.collect_ids(*right, out);
            }
        }
    }

    /// Replace the subtree rooted at `at` with `sub` (its root becomes `at`,
    /// the rest is appended). Detached nodes stay in the arena; [`compact`]
    /// drops them.
    ///
    /// [`compact`]: Tree::compact
    pub fn graft(&mut self, at: u32, sub: Tree) {
        let base = self.nodes.len() as u32;
        let remap = |i: u32| if i == ROOT { at } else { base + i - 1 };
        for (i, mut node) in sub.nodes.into_iter().enumerate() {
            if let NodeKind::Internal { left, right, .. } = &mut node.kind {
                *left = remap(*left);
                *right = remap(*right);
            }
            if i == 0 {
                self.nodes[at as usize] = node;
            } else {
                self.nodes.push(node);
            }
        }
    }

    /// Reachable nodes only, breadth-first order, indices remapped.
    pub fn compact(&self) -> Tree {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut remap = vec![u32::MAX; self.nodes.len()];
        let mut queue = VecDeque::from([ROOT]);
        while let Some(idx) = queue.pop_front() {
            remap[idx as usize] = order.len() as u32;
            order.push(idx);
            if let NodeKind::Internal { left, right, .. } = &self.nodes[idx as usize].kind {
                queue.push_back(*left);
                queue.push_back(*right);
            }
        }
        let mut nodes = Vec::with_capacity(order.len());
        for &idx in &order {
            let mut node = self.nodes[idx as usize].clone();
            if let NodeKind::Internal { left, right, .. } = &mut node.kind {
                *left = remap[*left as usize];
                *right = remap[*right as usize];
            }
            nodes.push(node);
        }
        Tree { nodes }
    }

    pub fn reachable_count(&self) -> usize {
        let mut n = 0;
        let mut queue = VecDeque::from([ROOT]);
        while let Some(idx) = queue.pop_front() {
            n += 1;
            if let NodeKind::Internal { left, right, .. } = &self.nodes[idx as usize].kind {
                queue.push_back(*left);
                queue.push_back(*right);
            }
        }
        n
    }
}

pub struct FitParams<'a> {
    pub layout: &'a FeatureLayout,
    pub alpha: f64,
    pub leaf_budget: u32,
    pub k_factor: f64,
    pub tree_seed: u64,
    pub root_path: u64,
}

struct Pending {
    node: u32,
    path: u64,
    ids: Vec<u32>,
    derivs: Vec<(f64, f64)>,
    totals: Totals,
    hist: Histogram,
    cands: Candidates,
    best: Option<(u32, u16, f64)>,
}

/// Fit a tree on `ids` (with aligned `(r-p, p(1-p))` rows) by breadth-first
/// growth to at most `leaf_budget` terminal nodes. An empty id set yields a
/// single zero-valued leaf.
pub fn fit_tree(
    store: &InstanceStore,
    params: &FitParams,
    ids: Vec<u32>,
    derivs: Vec<(f64, f64)>,
) -> Tree {
    debug_assert_eq!(ids.len(), derivs.len());
    let mut tree = Tree { nodes: Vec::new() };
    tree.nodes.push(placeholder(params.root_path));
    let mut queue = VecDeque::new();
    queue.push_back(build_pending(store, params, ROOT, params.root_path, ids, derivs, None));
    let mut leaves = 1u32;

    while let Some(p) = queue.pop_front() {
        let can_split = leaves < params.leaf_budget && p.best.is_some();
        if !can_split {
            tree.nodes[p.node as usize] = Node {
                path: p.path,
                totals: p.totals,
                kind: NodeKind::Leaf {
                    beta: leaf_value(&p.totals, params.k_factor),
                    ids: p.ids,
                },
            };
            continue;
        }
        let (feature, bin, gain) = p.best.unwrap();

        let mut left_ids = Vec::new();
        let mut left_derivs = Vec::new();
        let mut right_ids = Vec::new();
        let mut right_derivs = Vec::new();
        for (&id, &d) in p.ids.iter().zip(&p.derivs) {
            if store.row(id)[feature as usize] <= bin {
                left_ids.push(id);
                left_derivs.push(d);
            } else {
                right_ids.push(id);
                right_derivs.push(d);
            }
        }

        let left_idx = tree.nodes.len() as u32;
        tree.nodes.push(placeholder(p.path << 1));
        let right_idx = tree.nodes.len() as u32;
        tree.nodes.push(placeholder((p.path << 1) | 1));

        // Build the smaller child's histogram directly; derive the other by
        // subtraction from the parent.
        let (small_hist, small_totals, small_is_left) = if left_ids.len() <= right_ids.len() {
            let (h, t) = build_hist(store, params.layout, &left_ids, &left_derivs);
            (h, t, true)
        } else {
            let (h, t) = build_hist(store, params.layout, &right_ids, &right_derivs);
            (h, t, false)
        };
        let mut big_hist = p.hist.clone();
        big_hist.subtract(&small_hist);
        let big_totals = p.totals.minus(&small_totals);

        let (left_hist, left_totals, right_hist, right_totals) = if small_is_left {
            (small_hist, small_totals, big_hist, big_totals)
        } else {
            (big_hist, big_totals, small_hist, small_totals)
        };

        tree.nodes[p.node as usize] = Node {
            path: p.path,
            totals: p.totals,
            kind: NodeKind::Internal {
                feature,
                bin,
                left: left_idx,
                right: right_idx,
                gain,
                hist: p.hist,
                cands: p.cands,
            },
        };
        leaves += 1;

        queue.push_back(build_pending(
            store,
            params,
            left_idx,
            p.path << 1,
            left_ids,
            left_derivs,
            Some((left_hist, left_totals)),
        ));
        queue.push_back(build_pending(
            store,
            params,
            right_idx,
            (p.path << 1) | 1,
            right_ids,
            right_derivs,
            Some((right_hist, right_totals)),
        ));
    }
    tree
}

fn placeholder(path: u64) -> Node {
    Node {
        path,
        totals: Totals::default(),
        kind: NodeKind::Leaf {
            beta: 0.0,
            ids: Vec::new(),
        },
    }
}

fn build_hist(
    store: &InstanceStore,
    layout: &FeatureLayout,
    ids: &[u32],
    derivs: &[(f64, f64)],
) -> (Histogram, Totals) {
    let mut hist = Histogram::zeroed(layout.total_bins());
    let mut totals = Totals::default();
    for (&id, &(rp, pp)) in ids.iter().zip(derivs) {
        hist.add_row(layout, store.row(id), rp, pp);
        totals.add(rp, pp);
    }
    (hist, totals)
}

fn build_pending(
    store: &InstanceStore,
    params: &FitParams,
    node: u32,
    path: u64,
    ids: Vec<u32>,
    derivs: Vec<(f64, f64)>,
    prebuilt: Option<(Histogram, Totals)>,
) -> Pending {
    let (hist, totals) = match prebuilt {
        Some(ht) => ht,
        None => build_hist(store, params.layout, &ids, &derivs),
    };
    let cands = sample_candidates(
        &hist,
        params.layout,
        params.alpha,
        seeds::node_seed(params.tree_seed, path),
    );
    let mut gains = Vec::new();
    scan_candidate_gains(&hist, params.layout, &cands, &totals, &mut gains);
    let best = if ids.len() < 2 {
        None
    } else {
        best_of(&gains)
            .filter(|b| b.gain > MIN_GAIN)
            .map(|b| (b.feature, b.bin, b.gain))
    };
    Pending {
        node,
        path,
        ids,
        derivs,
        totals,
        hist,
        cands,
        best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_1d(bins: &[u16]) -> InstanceStore {
        InstanceStore::new(bins.to_vec(), vec![0; bins.len()], 1)
    }

    fn layout_1d(n_bins: usize) -> FeatureLayout {
        let raw = crate::dataset::RawDataset::new(
            vec![0; n_bins],
            (0..n_bins).map(|i| i as f64).collect(),
            1,
        )
        .unwrap();
        let mapper = crate::binning::BinMapper::fit(&raw, n_bins.max(2)).unwrap();
        FeatureLayout::from_mapper(&mapper)
    }

    fn fit_simple(
        store: &InstanceStore,
        layout: &FeatureLayout,
        budget: u32,
        derivs: Vec<(f64, f64)>,
    ) -> Tree {
        let ids: Vec<u32> = (0..derivs.len() as u32).collect();
        fit_tree(
            store,
            &FitParams {
                layout,
                alpha: 1.0,
                leaf_budget: budget,
                k_factor: 0.5,
                tree_seed: 1,
                root_path: 1,
            },
            ids,
            derivs,
        )
    }

    #[test]
    fn four_instance_root_split() {
        // The hand example: residuals split cleanly between bins {0,1} and {2,3}.
        let store = store_1d(&[0, 1, 2, 3]);
        let layout = layout_1d(4);
        let derivs = vec![(0.5, 0.25), (0.5, 0.25), (-0.5, 0.25), (-0.5, 0.25)];
        let tree = fit_simple(&store, &layout, 2, derivs);
        match &tree.node(ROOT).kind {
            NodeKind::Internal {
                feature, bin, gain, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*bin, 1);
                assert!((gain - 4.0).abs() < 1e-12);
            }
            NodeKind::Leaf { .. } => panic!("expected a split"),
        }
        assert_eq!(tree.terminal_count(ROOT), 2);
    }

    #[test]
    fn budget_two_means_single_split() {
        let store = store_1d(&[0, 1, 2, 3, 4, 5]);
        let layout = layout_1d(6);
        let derivs: Vec<(f64, f64)> = (0..6)
            .map(|i| (if i < 3 { 0.6 } else { -0.4 }, 0.2))
            .collect();
        let tree = fit_simple(&store, &layout, 2, derivs);
        assert_eq!(tree.terminal_count(ROOT), 2);
        assert_eq!(tree.nodes.len(), 3);
    }

    #[test]
    fn pure_node_stays_leaf() {
        // Identical residuals everywhere: every split has zero gain.
        let store = store_1d(&[0, 1, 2, 3]);
        let layout = layout_1d(4);
        let derivs = vec![(0.25, 0.1875); 4];
        let tree = fit_simple(&store, &layout, 8, derivs);
        assert_eq!(tree.terminal_count(ROOT), 1);
        assert!(tree.node(ROOT).is_leaf());
    }

    #[test]
    fn single_instance_is_leaf() {
        let store = store_1d(&[2]);
        let layout = layout_1d(4);
        let tree = fit_simple(&store, &layout, 4, vec![(0.5, 0.25)]);
        assert!(tree.node(ROOT).is_leaf());
    }

    #[test]
    fn leaf_value_examples() {
        let t = Totals {
            sum_rp: 0.5,
            sum_pp: 0.25,
            count: 1,
        };
        assert!((leaf_value(&t, 0.5) - 1.0).abs() < 1e-15);
        let zero = Totals {
            sum_rp: 0.0,
            sum_pp: 0.3,
            count: 2,
        };
        assert_eq!(leaf_value(&zero, 0.5), 0.0);
        let three = Totals {
            sum_rp: 0.8,
            sum_pp: 0.46,
            count: 3,
        };
        assert!((leaf_value(&three, 2.0 / 3.0) - 1.15942).abs() < 1e-5);
        let degenerate = Totals {
            sum_rp: 0.5,
            sum_pp: 0.0,
            count: 1,
        };
        assert_eq!(leaf_value(&degenerate, 0.5), 0.0);
    }

    #[test]
    fn leaf_ids_stay_sorted_and_partition() {
        let store = store_1d(&[0, 3, 1, 2, 0, 3]);
        let layout = layout_1d(4);
        let derivs: Vec<(f64, f64)> = (0..6)
            .map(|i| ((i as f64 - 2.5) / 4.0, 0.2))
            .collect();
        let tree = fit_simple(&store, &layout, 4, derivs);
        let mut leaves = Vec::new();
        tree.leaves_under(ROOT, &mut leaves);
        let mut all = Vec::new();
        for &l in &leaves {
            if let NodeKind::Leaf { ids, .. } = &tree.node(l).kind {
                assert!(ids.windows(2).all(|w| w[0] < w[1]));
                all.extend_from_slice(ids);
            }
        }
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<u32>>());
    }

    #[test]
    fn graft_and_compact() {
        let store = store_1d(&[0, 1, 2, 3]);
        let layout = layout_1d(4);
        let derivs = vec![(0.5, 0.25), (0.2, 0.25), (-0.5, 0.25), (-0.2, 0.25)];
        let mut tree = fit_simple(&store, &layout, 4, derivs);
        let before = tree.terminal_count(ROOT);
        let sub = fit_tree(
            &store,
            &FitParams {
                layout: &layout,
                alpha: 1.0,
                leaf_budget: 2,
                k_factor: 0.5,
                tree_seed: 1,
                root_path: 1,
            },
            vec![0, 1, 2, 3],
            vec![(0.5, 0.25), (0.2, 0.25), (-0.5, 0.25), (-0.2, 0.25)],
        );
        tree.graft(ROOT, sub);
        assert_eq!(tree.terminal_count(ROOT), 2);
        assert!(before >= 2);
        let compacted = tree.compact();
        assert_eq!(compacted.nodes.len(), compacted.reachable_count());
        assert_eq!(compacted.terminal_count(ROOT), 2);
        for (i, b) in [0u16, 1, 2, 3].iter().enumerate() {
            assert_eq!(tree.leaf_beta(&[*b]), compacted.leaf_beta(&[*b]), "row {i}");
        }
    }
}
