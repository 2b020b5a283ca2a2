//! From-scratch consistency checks for the maintained model state.
//!
//! These recompute what the incremental bookkeeping claims to maintain, by
//! routing every live instance through the current trees with its stored
//! per-tree-state derivatives, and report the worst deviation found. They
//! share no code with the maintenance path beyond the histogram layout.

use crate::boost::hist::{Histogram, Totals};
use crate::boost::math::rp_pp;
use crate::boost::model::Model;
use crate::boost::tree::{NodeKind, ROOT};
use crate::Result;

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    /// Worst |stored - recomputed| over all histogram cells and totals.
    pub max_stat_deviation: f64,
    /// Worst count mismatch over all histogram cells and totals.
    pub max_count_deviation: u64,
    /// Worst |parent - (left + right)| over internal-node totals and cells.
    pub max_child_sum_deviation: f64,
    /// Leaves whose stored id list differs from routing the live set.
    pub leaf_id_mismatches: usize,
}

pub fn audit_model(model: &Model) -> Result<AuditReport> {
    let state = model.online_state()?;
    let k_classes = model.params.n_classes;
    let mut report = AuditReport::default();

    for m in 0..model.params.iterations {
        for k in 0..k_classes {
            let tree = model.tree(m, k);
            let n_nodes = tree.nodes.len();
            let mut hists: Vec<Option<Histogram>> = vec![None; n_nodes];
            let mut totals = vec![Totals::default(); n_nodes];
            let mut leaf_ids: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];

            for id in state.store.live_ids() {
                let row = state.store.row_uncounted(id);
                let p = state.scores.ledger_p(id, m, k);
                let (rp, pp) = rp_pp(state.store.label(id), k, p);
                let mut idx = ROOT;
                loop {
                    totals[idx as usize].add(rp, pp);
                    match &tree.node(idx).kind {
                        NodeKind::Leaf { .. } => {
                            leaf_ids[idx as usize].push(id);
                            break;
                        }
                        NodeKind::Internal {
                            feature,
                            bin,
                            left,
                            right,
                            ..
                        } => {
                            hists[idx as usize]
                                .get_or_insert_with(|| {
                                    Histogram::zeroed(model.layout.total_bins())
                                })
                                .add_row(&model.layout, row, rp, pp);
                            idx = if row[*feature as usize] <= *bin {
                                *left
                            } else {
                                *right
                            };
                        }
                    }
                }
            }

            // Compare reachable nodes against the stored state.
            let mut stack = vec![ROOT];
            while let Some(idx) = stack.pop() {
                let node = tree.node(idx);
                let expect = &totals[idx as usize];
                report.max_stat_deviation = report
                    .max_stat_deviation
                    .max((node.totals.sum_rp - expect.sum_rp).abs())
                    .max((node.totals.sum_pp - expect.sum_pp).abs());
                report.max_count_deviation = report
                    .max_count_deviation
                    .max(node.totals.count.abs_diff(expect.count) as u64);
                match &node.kind {
                    NodeKind::Leaf { ids, .. } => {
                        if ids != &leaf_ids[idx as usize] {
                            report.leaf_id_mismatches += 1;
                        }
                    }
                    NodeKind::Internal {
                        hist, left, right, ..
                    } => {
                        let empty = Histogram::zeroed(model.layout.total_bins());
                        let expect_hist =
                            hists[idx as usize].as_ref().unwrap_or(&empty);
                        for i in 0..model.layout.total_bins() {
                            report.max_stat_deviation = report
                                .max_stat_deviation
                                .max((hist.sum_rp[i] - expect_hist.sum_rp[i]).abs())
                                .max((hist.sum_pp[i] - expect_hist.sum_pp[i]).abs());
                            report.max_count_deviation = report
                                .max_count_deviation
                                .max(hist.count[i].abs_diff(expect_hist.count[i]) as u64);
                        }
                        let (l, r) = (tree.node(*left), tree.node(*right));
                        report.max_child_sum_deviation = report
                            .max_child_sum_deviation
                            .max((node.totals.sum_rp - l.totals.sum_rp - r.totals.sum_rp).abs())
                            .max((node.totals.sum_pp - l.totals.sum_pp - r.totals.sum_pp).abs())
                            .max(
                                (node.totals.count as f64
                                    - l.totals.count as f64
                                    - r.totals.count as f64)
                                    .abs(),
                            );
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
    }
    Ok(report)
}
