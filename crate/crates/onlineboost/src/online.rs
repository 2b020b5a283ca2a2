//! In-place incremental and decremental learning.
//!
//! A pass walks the trees in boosting order. For each tree it assembles an
//! update set — the batch itself plus, under the eager policy, corrections
//! for instances whose derivatives were refreshed earlier in the pass — and
//! pushes it down from the root: node statistics are adjusted, the current
//! split is kept while it stays within the top `⌈σ·C⌉` of the node's
//! candidates by recomputed gain, and otherwise the subtree is retrained from
//! the live instances reaching it (the only step that touches training
//! rows). Leaf values refresh from maintained sums, never from data.
//!
//! Additions replay the batch's own scores through the updated trees exactly
//! like training would (`F = 0`, `p = 1/K`, refreshed each iteration).
//! Deletions subtract the contributions recorded in the per-tree derivative
//! ledger, so no assumption is made about how stale the training-set rows
//! are.
//!
//! Score rows `F` are kept equal to the sum of the *current* leaf values for
//! every live instance at all times. When a refresh needs the probabilities
//! a from-scratch run would see at iteration `m`, it takes `softmax` of the
//! score row minus the instance's contributions from trees `m..M` (the
//! not-yet-relearned suffix), which reconstructs the boosting prefix exactly.

use std::time::Instant;

use serde::Serialize;

use crate::boost::hist::{
    ceil_frac, gain_strictly_better, gain_tied, prefix_at, scan_candidate_gains, split_gain,
    CandidateGain, FeatureLayout, EPS_H,
};
use crate::boost::instances::{InstanceStore, ScoreState};
use crate::boost::math::{rp_pp, softmax_in_place};
use crate::boost::model::{HyperParams, Model};
use crate::boost::tree::{fit_tree, FitParams, NodeKind, Tree, ROOT};
use crate::dataset::RawDataset;
use crate::error::Error;
use crate::seeds;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Add,
    Delete,
}

/// When training-instance derivatives are refreshed during a pass.
///
/// `Lazy` (the default) refreshes only the instances rebuilt into a retrained
/// subtree. `Eager` refreshes every instance that reaches a changed terminal
/// node and propagates the refresh into all subsequent trees' statistics,
/// which converges to a from-scratch result at `α = 1`, `σ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Lazy,
    Eager,
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateOptions {
    pub policy: Policy,
    pub record_decisions: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            policy: Policy::Lazy,
            record_decisions: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecisionAction {
    Keep,
    Retrain,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionRecord {
    pub iteration: u32,
    pub class: u32,
    pub node_path: u64,
    pub action: DecisionAction,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpdateReport {
    pub mode: Mode,
    pub batch_size: usize,
    pub retrained_per_iteration: Vec<u32>,
    pub retrained_nodes: u32,
    pub touched_leaves: u64,
    pub micros: u64,
    /// Id range `[start, end)` assigned to an added batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub added_ids: Option<(u32, u32)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decisions: Option<Vec<DecisionRecord>>,
}

impl UpdateReport {
    fn empty(mode: Mode, iterations: usize) -> Self {
        UpdateReport {
            mode,
            batch_size: 0,
            retrained_per_iteration: vec![0; iterations],
            retrained_nodes: 0,
            touched_leaves: 0,
            micros: 0,
            added_ids: None,
            decisions: None,
        }
    }
}

#[derive(Clone, Copy)]
struct UpdEntry {
    id: u32,
    d_rp: f64,
    d_pp: f64,
    d_count: i32,
    batch: bool,
}

impl Model {
    /// Add labeled rows to the trained model in place (Algorithm-2 add mode).
    /// Rows are binned with the frozen mapper and appended with fresh ids.
    pub fn incremental_learn(
        &mut self,
        rows: &RawDataset,
        opts: UpdateOptions,
    ) -> Result<UpdateReport> {
        let k_classes = self.params.n_classes;
        if rows.n_features != self.mapper.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.mapper.n_features(),
                got: rows.n_features,
            });
        }
        if let Some(&y) = rows.labels.iter().find(|&&y| y as usize >= k_classes) {
            return Err(Error::UnknownLabel {
                label: y.to_string(),
                classes: k_classes,
            });
        }
        self.online_state()?;
        if rows.n_rows() == 0 {
            let mut report = UpdateReport::empty(Mode::Add, self.params.iterations);
            let n = self.online_state()?.store.n_total() as u32;
            report.added_ids = Some((n, n));
            return Ok(report);
        }
        let mut bins = vec![0u16; rows.n_rows() * rows.n_features];
        for i in 0..rows.n_rows() {
            let out = &mut bins[i * rows.n_features..(i + 1) * rows.n_features];
            self.mapper.bin_row(rows.row(i), out)?;
        }
        let state = self.online.as_mut().unwrap();
        let (start, end) = state.store.append(&bins, &rows.labels);
        state.scores.append(rows.n_rows());
        let batch: Vec<u32> = (start..end).collect();
        let mut report = run_pass(self, Mode::Add, batch, opts)?;
        report.added_ids = Some((start, end));
        Ok(report)
    }

    /// Remove previously learned instances in place (Algorithm-2 delete
    /// mode). Ids must be live; on any invalid id the model is untouched.
    pub fn decremental_learn(&mut self, ids: &[u32], opts: UpdateOptions) -> Result<UpdateReport> {
        let state = self.online_state()?;
        state.store.validate_deletable(ids)?;
        if ids.is_empty() {
            return Ok(UpdateReport::empty(Mode::Delete, self.params.iterations));
        }
        let mut batch = ids.to_vec();
        batch.sort_unstable();
        run_pass(self, Mode::Delete, batch, opts)
    }
}

fn run_pass(
    model: &mut Model,
    mode: Mode,
    batch: Vec<u32>,
    opts: UpdateOptions,
) -> Result<UpdateReport> {
    let start_time = Instant::now();
    let params = model.params;
    let (m_iters, k_classes) = (params.iterations, params.n_classes);
    let state = model.online.as_mut().unwrap();
    let n_total = state.store.n_total();
    state.store.set_exempt(&batch, true);

    let mut batch_flag = vec![false; n_total];
    for &id in &batch {
        batch_flag[id as usize] = true;
    }
    // Added instances start from F = 0, p = 1/K (the batch replays its own
    // training trajectory through the updated trees).
    let mut batch_p = vec![1.0 / k_classes as f64; batch.len() * k_classes];

    let mut dirty_p: Vec<Option<Box<[f64]>>> = vec![None; n_total];
    let mut dirty_ids: Vec<u32> = Vec::new();
    let mut pending_refresh: Vec<u32> = Vec::new();

    let mut retrained_per_iteration = vec![0u32; m_iters];
    let mut touched_leaves = 0u64;
    let mut decisions: Option<Vec<DecisionRecord>> = opts.record_decisions.then(Vec::new);

    #[allow(clippy::needless_range_loop)] // m keys trees, the ledger, and the report alike
    for m in 0..m_iters {
        for k in 0..k_classes {
            // Assemble the update set; ledger entries are rewritten in the
            // same breath as the statistics they feed.
            let mut entries = Vec::with_capacity(batch.len() + dirty_ids.len());
            match mode {
                Mode::Add => {
                    for (pos, &id) in batch.iter().enumerate() {
                        let p = batch_p[pos * k_classes + k];
                        state.scores.set_ledger_p(id, m, k, p);
                        let (rp, pp) = rp_pp(state.store.label(id), k, p);
                        entries.push(UpdEntry {
                            id,
                            d_rp: rp,
                            d_pp: pp,
                            d_count: 1,
                            batch: true,
                        });
                    }
                }
                Mode::Delete => {
                    for &id in &batch {
                        let p = state.scores.ledger_p(id, m, k);
                        let (rp, pp) = rp_pp(state.store.label(id), k, p);
                        entries.push(UpdEntry {
                            id,
                            d_rp: -rp,
                            d_pp: -pp,
                            d_count: -1,
                            batch: true,
                        });
                    }
                }
            }
            for &id in &dirty_ids {
                let p_new = dirty_p[id as usize].as_ref().unwrap()[k];
                let p_old = state.scores.ledger_p(id, m, k);
                if p_old.to_bits() == p_new.to_bits() {
                    continue;
                }
                state.scores.set_ledger_p(id, m, k, p_new);
                let label = state.store.label(id);
                let (rp_old, pp_old) = rp_pp(label, k, p_old);
                let (rp_new, pp_new) = rp_pp(label, k, p_new);
                entries.push(UpdEntry {
                    id,
                    d_rp: rp_new - rp_old,
                    d_pp: pp_new - pp_old,
                    d_count: 0,
                    batch: false,
                });
            }

            let tree_index = m * k_classes + k;
            let mut tree = std::mem::take(&mut model.trees[tree_index]);
            let mut walk = TreeWalk {
                layout: &model.layout,
                store: &state.store,
                scores: &mut state.scores,
                all_trees: &model.trees,
                tree_index,
                params: &params,
                mode,
                policy: opts.policy,
                m,
                k,
                batch_flag: &batch_flag,
                changed_leaves: Vec::new(),
                refresh_members: Vec::new(),
                retrains: 0,
                touched_leaves: 0,
                decisions: decisions.as_mut(),
            };
            if !entries.is_empty() {
                walk.visit(&mut tree, ROOT, entries);
            }
            let TreeWalk {
                changed_leaves,
                mut refresh_members,
                retrains,
                touched_leaves: walk_touched,
                ..
            } = walk;
            retrained_per_iteration[m] += retrains; // indexed: `m` also keys the ledger below
            touched_leaves += walk_touched + changed_leaves.len() as u64;

            // Refresh kept leaves from their maintained sums; members' score
            // rows track the new values immediately.
            for &leaf_idx in &changed_leaves {
                let node = tree.node_mut(leaf_idx);
                let totals = node.totals;
                if let NodeKind::Leaf { beta, ids } = &mut node.kind {
                    let new = crate::boost::tree::leaf_value(&totals, params.k_factor());
                    let old = *beta;
                    *beta = new;
                    if new.to_bits() != old.to_bits() {
                        let delta = params.shrinkage * (new - old);
                        for &id in ids.iter() {
                            if !batch_flag[id as usize] && state.store.is_live(id) {
                                state.scores.f_add(id, k, delta);
                            }
                        }
                        if opts.policy == Policy::Eager {
                            refresh_members.extend(
                                ids.iter()
                                    .copied()
                                    .filter(|&id| !batch_flag[id as usize] && state.store.is_live(id)),
                            );
                        }
                    }
                }
            }

            // The batch's own scores advance with the updated tree.
            if mode == Mode::Add {
                for &id in &batch {
                    let beta = tree.leaf_beta(state.store.row_uncounted(id));
                    state.scores.f_add(id, k, params.shrinkage * beta);
                }
            }

            if opts.policy == Policy::Eager {
                pending_refresh.append(&mut refresh_members);
            }

            model.trees[tree_index] = tree;
        }

        // Iteration boundary (Algorithm 1 line 10 semantics): the batch and
        // any refreshed instances get the probabilities a from-scratch run
        // would carry into iteration m+1.
        if mode == Mode::Add && m + 1 < m_iters {
            for (pos, &id) in batch.iter().enumerate() {
                let row = &mut batch_p[pos * k_classes..(pos + 1) * k_classes];
                state.scores.softmax_f(id, row);
            }
        }
        if opts.policy == Policy::Eager && m + 1 < m_iters {
            for id in pending_refresh.drain(..) {
                if batch_flag[id as usize] || !state.store.is_live(id) {
                    continue;
                }
                if dirty_p[id as usize].is_none() {
                    dirty_p[id as usize] = Some(vec![0.0; k_classes].into_boxed_slice());
                    dirty_ids.push(id);
                }
            }
            dirty_ids.sort_unstable();
            dirty_ids.dedup();
            // Once refreshed, an instance's row must be re-derived for every
            // later iteration: the boosting prefix it is the softmax of keeps
            // growing.
            for &id in &dirty_ids {
                boundary_probs(
                    &model.trees,
                    None,
                    (m + 1) * k_classes,
                    k_classes,
                    params.shrinkage,
                    state.store.row_uncounted(id),
                    state.scores.f_row(id),
                    dirty_p[id as usize].as_mut().unwrap(),
                );
            }
        }
        pending_refresh.clear();
    }

    state.store.set_exempt(&batch, false);
    if mode == Mode::Delete {
        state.store.tombstone(&batch);
    }

    Ok(UpdateReport {
        mode,
        batch_size: batch.len(),
        retrained_nodes: retrained_per_iteration.iter().sum(),
        retrained_per_iteration,
        touched_leaves,
        micros: start_time.elapsed().as_micros() as u64,
        added_ids: None,
        decisions,
    })
}

/// Probabilities a from-scratch run would hold entering the iteration whose
/// first tree is `suffix_start`: softmax of the score row minus this
/// instance's contributions from every tree at or after it. `taken` supplies
/// the tree currently checked out of the slice, if any.
#[allow(clippy::too_many_arguments)]
fn boundary_probs(
    trees: &[Tree],
    taken: Option<(usize, &Tree)>,
    suffix_start: usize,
    k_classes: usize,
    shrinkage: f64,
    row: &[u16],
    f_row: &[f64],
    out: &mut [f64],
) {
    out.copy_from_slice(f_row);
    for t in suffix_start..trees.len() {
        let tree = match taken {
            Some((ti, tr)) if ti == t => tr,
            _ => &trees[t],
        };
        out[t % k_classes] -= shrinkage * tree.leaf_beta(row);
    }
    softmax_in_place(out);
}

struct TreeWalk<'a> {
    layout: &'a FeatureLayout,
    store: &'a InstanceStore,
    scores: &'a mut ScoreState,
    /// The full forest; `all_trees[tree_index]` is a placeholder while the
    /// tree being walked is checked out.
    all_trees: &'a [Tree],
    tree_index: usize,
    params: &'a HyperParams,
    mode: Mode,
    policy: Policy,
    m: usize,
    k: usize,
    batch_flag: &'a [bool],
    /// Kept leaves whose totals changed; β refresh happens after the walk.
    changed_leaves: Vec<u32>,
    /// Candidates for the eager boundary refresh (retrained members here,
    /// kept-leaf members appended after β refresh).
    refresh_members: Vec<u32>,
    retrains: u32,
    touched_leaves: u64,
    decisions: Option<&'a mut Vec<DecisionRecord>>,
}

impl<'a> TreeWalk<'a> {
    fn visit(&mut self, tree: &mut Tree, node_idx: u32, entries: Vec<UpdEntry>) {
        debug_assert!(!entries.is_empty());
        {
            let node = tree.node_mut(node_idx);
            for e in &entries {
                node.totals.apply(e.d_rp, e.d_pp, e.d_count);
            }
            match &mut node.kind {
                NodeKind::Leaf { ids, .. } => {
                    for e in &entries {
                        if e.batch {
                            match self.mode {
                                Mode::Add => ids.push(e.id),
                                Mode::Delete => {
                                    if let Ok(pos) = ids.binary_search(&e.id) {
                                        ids.remove(pos);
                                    }
                                }
                            }
                        }
                    }
                    self.changed_leaves.push(node_idx);
                    return;
                }
                NodeKind::Internal { hist, .. } => {
                    for e in &entries {
                        hist.apply_row(self.layout, self.store.row(e.id), e.d_rp, e.d_pp, e.d_count);
                    }
                }
            }
        }

        let action = if self.params.tolerance >= 1.0 {
            // σ = 1 avoids retraining entirely; the split is kept as-is.
            DecisionAction::Keep
        } else {
            self.decide(tree, node_idx)
        };
        if let Some(log) = self.decisions.as_deref_mut() {
            log.push(DecisionRecord {
                iteration: self.m as u32,
                class: self.k as u32,
                node_path: tree.node(node_idx).path,
                action,
            });
        }

        match action {
            DecisionAction::Keep => {
                let (feature, bin, left, right) = match &tree.node(node_idx).kind {
                    NodeKind::Internal {
                        feature,
                        bin,
                        left,
                        right,
                        ..
                    } => (*feature, *bin, *left, *right),
                    NodeKind::Leaf { .. } => unreachable!(),
                };
                let mut left_entries = Vec::new();
                let mut right_entries = Vec::new();
                for e in entries {
                    if self.store.row(e.id)[feature as usize] <= bin {
                        left_entries.push(e);
                    } else {
                        right_entries.push(e);
                    }
                }
                if !left_entries.is_empty() {
                    self.visit(tree, left, left_entries);
                }
                if !right_entries.is_empty() {
                    self.visit(tree, right, right_entries);
                }
            }
            DecisionAction::Retrain => {
                self.retrain(tree, node_idx, &entries);
            }
        }
    }

    /// Keep iff the current split still ranks within the top `⌈σ·C⌉` of the
    /// node's evaluated candidates; an invalidated split forces Retrain.
    fn decide(&mut self, tree: &Tree, node_idx: u32) -> DecisionAction {
        let node = tree.node(node_idx);
        let NodeKind::Internal {
            feature,
            bin,
            hist,
            cands,
            ..
        } = &node.kind
        else {
            unreachable!()
        };
        let totals = node.totals;
        let cur = prefix_at(hist, self.layout, *feature as usize, *bin);
        if cur.count == 0 || cur.count >= totals.count {
            return DecisionAction::Retrain;
        }
        if split_gain((cur.sum_rp, cur.sum_pp), (totals.sum_rp, totals.sum_pp)).is_none() {
            return DecisionAction::Retrain;
        }
        let mut gains: Vec<CandidateGain> = Vec::new();
        scan_candidate_gains(hist, self.layout, cands, &totals, &mut gains);
        // The current split is represented by its evaluated twin: the lowest
        // candidate bin producing the same partition. Comparing through the
        // twin keeps the ranking immune to the float residue left in bins the
        // update emptied.
        let Some(twin) = gains
            .iter()
            .copied()
            .find(|c| c.feature == *feature && c.left_count == cur.count)
        else {
            return DecisionAction::Retrain;
        };
        let top = ceil_frac(self.params.tolerance, gains.len());
        let rank = 1 + gains
            .iter()
            .filter(|c| {
                gain_strictly_better(c.gain, twin.gain)
                    || (gain_tied(c.gain, twin.gain)
                        && (c.feature, c.bin) < (twin.feature, twin.bin))
            })
            .count();
        // At σ = 0 a current bin that went dead must be retrained onto its
        // twin for the structure to match a from-scratch fit; at σ > 0
        // keeping the stale bin is an accepted approximation.
        if rank <= top && (twin.bin == *bin || self.params.tolerance > 0.0) {
            DecisionAction::Keep
        } else {
            DecisionAction::Retrain
        }
    }

    /// Rebuild the subtree rooted at `node_idx` from the live instances that
    /// reach it, with the replaced subtree's terminal count as leaf budget
    /// and the node's path-derived candidate seed.
    fn retrain(&mut self, tree: &mut Tree, node_idx: u32, entries: &[UpdEntry]) {
        let k_classes = self.params.n_classes;
        let mut s: Vec<u32> = Vec::new();
        tree.collect_ids(node_idx, &mut s);
        s.retain(|&id| {
            self.store.is_live(id) && !(self.mode == Mode::Delete && self.batch_flag[id as usize])
        });
        if self.mode == Mode::Add {
            s.extend(entries.iter().filter(|e| e.batch).map(|e| e.id));
        }
        s.sort_unstable();

        let mut derivs = Vec::with_capacity(s.len());
        let mut old_beta = Vec::with_capacity(s.len());
        let mut corrections: Vec<(u32, f64, f64)> = Vec::new();
        let mut p_buf = vec![0.0; k_classes];
        for &id in &s {
            // The stored per-tree-state derivative is this tree's state; the
            // batch's entry for this iteration was written at assembly. Under
            // the eager policy the row is refreshed to the probabilities a
            // from-scratch run would hold entering this iteration, and every
            // statistic above this node that embeds the old value is
            // corrected to match.
            let p = if self.policy == Policy::Eager && !self.batch_flag[id as usize] {
                boundary_probs(
                    self.all_trees,
                    Some((self.tree_index, tree)),
                    self.m * k_classes,
                    k_classes,
                    self.params.shrinkage,
                    self.store.row(id),
                    self.scores.f_row(id),
                    &mut p_buf,
                );
                let p_new = p_buf[self.k];
                let p_old = self.scores.ledger_p(id, self.m, self.k);
                if p_old.to_bits() != p_new.to_bits() {
                    self.scores.set_ledger_p(id, self.m, self.k, p_new);
                    corrections.push((id, p_old, p_new));
                }
                p_new
            } else {
                self.scores.ledger_p(id, self.m, self.k)
            };
            derivs.push(rp_pp(self.store.label(id), self.k, p));
            if self.batch_flag[id as usize] {
                old_beta.push(0.0);
            } else {
                let leaf = tree.route(node_idx, self.store.row(id));
                old_beta.push(match &tree.node(leaf).kind {
                    NodeKind::Leaf { beta, .. } => *beta,
                    NodeKind::Internal { .. } => unreachable!(),
                });
            }
        }

        // The refreshed rows change what this tree's statistics embed for
        // these instances; the rebuilt subtree uses the fresh values, and the
        // nodes above it must be corrected to match.
        for &(id, p_old, p_new) in &corrections {
            let label = self.store.label(id);
            let (rp_old, pp_old) = rp_pp(label, self.k, p_old);
            let (rp_new, pp_new) = rp_pp(label, self.k, p_new);
            let (d_rp, d_pp) = (rp_new - rp_old, pp_new - pp_old);
            let row = self.store.row(id);
            let mut cur = ROOT;
            while cur != node_idx {
                let node = tree.node_mut(cur);
                node.totals.apply(d_rp, d_pp, 0);
                let NodeKind::Internal {
                    feature,
                    bin,
                    left,
                    right,
                    ref mut hist,
                    ..
                } = node.kind
                else {
                    unreachable!()
                };
                hist.apply_row(self.layout, row, d_rp, d_pp, 0);
                cur = if row[feature as usize] <= bin { left } else { right };
            }
        }

        let budget = tree.terminal_count(node_idx);
        let root_path = tree.node(node_idx).path;
        let sub = fit_tree(
            self.store,
            &FitParams {
                layout: self.layout,
                alpha: self.params.sample_rate,
                leaf_budget: budget,
                k_factor: self.params.k_factor(),
                tree_seed: seeds::tree_seed(self.params.seed, self.m, self.k),
                root_path,
            },
            s.clone(),
            derivs,
        );
        self.touched_leaves += sub.terminal_count(ROOT) as u64;
        tree.graft(node_idx, sub);

        for (i, &id) in s.iter().enumerate() {
            if self.batch_flag[id as usize] {
                continue; // added rows get their full leaf value after the walk
            }
            let leaf = tree.route(node_idx, self.store.row(id));
            let new_beta = match &tree.node(leaf).kind {
                NodeKind::Leaf { beta, .. } => *beta,
                NodeKind::Internal { .. } => unreachable!(),
            };
            let delta = self.params.shrinkage * (new_beta - old_beta[i]);
            if delta != 0.0 {
                self.scores.f_add(id, self.k, delta);
            }
            self.refresh_members.push(id);
        }
        self.retrains += 1;
    }
}

/// Advisory robustness report for one internal node (never gates decisions).
#[derive(Debug, Clone, Serialize)]
pub struct NodeRobustness {
    pub iteration: u32,
    pub class: u32,
    pub node_path: u64,
    pub best_gain: f64,
    /// Best evaluated candidate with a different partition, if any.
    pub runner_up_gain: Option<f64>,
    /// Distance to the nearest same-feature candidate split.
    pub nearest_candidate_distance: Option<u16>,
    /// Distance-robust: `N_Δ > λ·Gain(s) / (G_l/N_l + G_r/N_r)`.
    pub distance_robust: Option<bool>,
    /// Gain-ratio-robust: `Gain(s) > Gain(t) / (1 - λ)`.
    pub gain_ratio_robust: Option<bool>,
}

/// Evaluate the split-robustness inequalities at every internal node for an
/// online batch fraction `λ = |D'| / |D_tr|`.
pub fn robustness_diagnostics(model: &Model, lambda: f64) -> Result<Vec<NodeRobustness>> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidParam {
            name: "lambda",
            msg: format!("must be in [0, 1), got {lambda}"),
        });
    }
    model.online_state()?;
    let k_classes = model.params.n_classes;
    let mut out = Vec::new();
    let mut gains: Vec<CandidateGain> = Vec::new();
    for m in 0..model.params.iterations {
        for k in 0..k_classes {
            let tree = model.tree(m, k);
            let mut stack = vec![ROOT];
            while let Some(idx) = stack.pop() {
                let node = tree.node(idx);
                let NodeKind::Internal {
                    feature,
                    bin,
                    left,
                    right,
                    hist,
                    cands,
                    ..
                } = &node.kind
                else {
                    continue;
                };
                stack.push(*right);
                stack.push(*left);

                let totals = node.totals;
                let cur = prefix_at(hist, &model.layout, *feature as usize, *bin);
                let best_gain = match split_gain(
                    (cur.sum_rp, cur.sum_pp),
                    (totals.sum_rp, totals.sum_pp),
                ) {
                    Some(g) => g,
                    None => continue,
                };
                scan_candidate_gains(hist, &model.layout, cands, &totals, &mut gains);
                let runner_up_gain = gains
                    .iter()
                    .filter(|c| !(c.feature == *feature && c.left_count == cur.count))
                    .map(|c| c.gain)
                    .fold(None, |acc: Option<f64>, g| {
                        Some(acc.map_or(g, |a| a.max(g)))
                    });
                let nearest = cands
                    .for_feature(*feature as usize)
                    .iter()
                    .filter(|&&b| b != *bin)
                    .map(|&b| b.abs_diff(*bin))
                    .min();

                // Definition 1: per-child mean gains against the candidate gap.
                let distance_robust = nearest.map(|n_delta| {
                    let (n_l, n_r) = (cur.count, totals.count - cur.count);
                    let g_l = if cur.sum_pp > EPS_H {
                        cur.sum_rp * cur.sum_rp / cur.sum_pp
                    } else {
                        0.0
                    };
                    let (rp_r, pp_r) = (totals.sum_rp - cur.sum_rp, totals.sum_pp - cur.sum_pp);
                    let g_r = if pp_r > EPS_H { rp_r * rp_r / pp_r } else { 0.0 };
                    let denom = g_l / n_l.max(1) as f64 + g_r / n_r.max(1) as f64;
                    denom > 0.0 && (n_delta as f64) > lambda * best_gain / denom
                });
                let gain_ratio_robust = runner_up_gain
                    .map(|t| !gain_strictly_better(t / (1.0 - lambda), best_gain));

                out.push(NodeRobustness {
                    iteration: m as u32,
                    class: k as u32,
                    node_path: node.path,
                    best_gain,
                    runner_up_gain,
                    nearest_candidate_distance: nearest,
                    distance_robust,
                    gain_ratio_robust,
                });
            }
        }
    }
    Ok(out)
}
