//! Verification harness: functional similarity, leaf-score approximation
//! error, backdoor injection/removal, batch add/remove schedules, and
//! online-vs-retrain speedup timing.

use std::time::Instant;

use serde::Serialize;

use crate::boost::hist::Totals;
use crate::boost::math::{rp_pp, softmax_row};
use crate::boost::model::{HyperParams, Model};
use crate::boost::tree::{leaf_value, NodeKind, ROOT};
use crate::dataset::RawDataset;
use crate::error::Error;
use crate::online::UpdateOptions;
use crate::synth::shuffle;
use crate::Result;

// --- functional similarity ----------------------------------------------

/// Disagreement rates between a reference model and an online-updated one.
/// `phi = 1 - (c2w + w2c + w2w)`.
#[derive(Debug, Clone, Serialize)]
pub struct SimilarityReport {
    pub n: usize,
    pub c2w: f64,
    pub w2c: f64,
    pub w2w: f64,
    pub phi: f64,
}

pub fn functional_similarity(
    reference: &Model,
    online: &Model,
    test: &RawDataset,
) -> Result<SimilarityReport> {
    if test.n_rows() == 0 {
        return Err(Error::Invalid("empty test set".into()));
    }
    if reference.n_features() != online.n_features()
        || reference.n_classes() != online.n_classes()
    {
        return Err(Error::Invalid(
            "models disagree on feature count or classes".into(),
        ));
    }
    let (mut c2w, mut w2c, mut w2w) = (0usize, 0usize, 0usize);
    for i in 0..test.n_rows() {
        let truth = test.labels[i];
        let (_, a) = reference.predict(test.row(i))?;
        let (_, b) = online.predict(test.row(i))?;
        if a == b {
            continue;
        }
        match (a == truth, b == truth) {
            (true, false) => c2w += 1,
            (false, true) => w2c += 1,
            (false, false) => w2w += 1,
            (true, true) => unreachable!(),
        }
    }
    let n = test.n_rows() as f64;
    let (c2w, w2c, w2w) = (c2w as f64 / n, w2c as f64 / n, w2w as f64 / n);
    Ok(SimilarityReport {
        n: test.n_rows(),
        c2w,
        w2c,
        w2w,
        phi: 1.0 - (c2w + w2c + w2w),
    })
}

// --- leaf score approximation error --------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LeafErrorReport {
    pub abs_diff_sum: f64,
    pub abs_ref_sum: f64,
    /// `Σ|β_online - β_ref| / Σ|β_ref|` over all leaves of all trees.
    pub error: f64,
}

/// Rebuild the model's leaf values with fully fresh derivatives over its live
/// instances, keeping every structure and split fixed. The result is the
/// structure-matched retrain reference for [`leaf_score_error`]; it carries
/// no online state.
pub fn structure_matched_retrain(model: &Model) -> Result<Model> {
    let state = model.online_state()?;
    let k_classes = model.params.n_classes;
    let m_iters = model.params.iterations;
    let n = state.store.n_total();
    let live: Vec<u32> = state.store.live_ids().collect();

    let mut reference = Model {
        params: model.params,
        mapper: model.mapper.clone(),
        layout: model.layout.clone(),
        trees: model.trees.iter().map(|t| t.compact()).collect(),
        online: None,
    };

    let mut f = vec![0.0; n * k_classes];
    let mut p_cur = vec![1.0 / k_classes as f64; n * k_classes];
    let mut leaf_totals: Vec<Totals> = Vec::new();
    for m in 0..m_iters {
        for k in 0..k_classes {
            let tree = &mut reference.trees[m * k_classes + k];
            leaf_totals.clear();
            leaf_totals.resize(tree.nodes.len(), Totals::default());
            let mut assigned: Vec<u32> = Vec::with_capacity(live.len());
            for &id in &live {
                let leaf = tree.route(ROOT, state.store.row_uncounted(id));
                let (rp, pp) = rp_pp(
                    state.store.label(id),
                    k,
                    p_cur[id as usize * k_classes + k],
                );
                leaf_totals[leaf as usize].add(rp, pp);
                assigned.push(leaf);
            }
            for (idx, node) in tree.nodes.iter_mut().enumerate() {
                if let NodeKind::Leaf { beta, .. } = &mut node.kind {
                    *beta = leaf_value(&leaf_totals[idx], model.params.k_factor());
                }
            }
            for (&id, &leaf) in live.iter().zip(&assigned) {
                if let NodeKind::Leaf { beta, .. } = &tree.nodes[leaf as usize].kind {
                    f[id as usize * k_classes + k] += model.params.shrinkage * beta;
                }
            }
        }
        for &id in &live {
            let i = id as usize * k_classes;
            let (scores, probs) = (&f[i..i + k_classes], &mut p_cur[i..i + k_classes]);
            softmax_row(scores, probs);
        }
    }
    Ok(reference)
}

/// Aggregate relative L1 distance between leaf values of two
/// structure-identical models.
pub fn leaf_score_error(online: &Model, reference: &Model) -> Result<LeafErrorReport> {
    if online.trees.len() != reference.trees.len() {
        return Err(Error::Invalid("models have different tree counts".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in online.trees.iter().zip(&reference.trees) {
        // Compare by structure, not node index: the online arena may hold
        // detached nodes.
        let mut stack = vec![(ROOT, ROOT)];
        while let Some((ia, ib)) = stack.pop() {
            match (&a.node(ia).kind, &b.node(ib).kind) {
                (
                    NodeKind::Leaf { beta: ba, .. },
                    NodeKind::Leaf { beta: bb, .. },
                ) => {
                    num += (ba - bb).abs();
                    den += bb.abs();
                }
                (
                    NodeKind::Internal {
                        feature: fa,
                        bin: na,
                        left: la,
                        right: ra,
                        ..
                    },
                    NodeKind::Internal {
                        feature: fb,
                        bin: nb,
                        left: lb,
                        right: rb,
                        ..
                    },
                ) => {
                    if fa != fb || na != nb {
                        return Err(Error::Invalid("model structures differ".into()));
                    }
                    stack.push((*la, *lb));
                    stack.push((*ra, *rb));
                }
                _ => return Err(Error::Invalid("model structures differ".into())),
            }
        }
    }
    let error = if den == 0.0 { 0.0 } else { num / den };
    Ok(LeafErrorReport {
        abs_diff_sum: num,
        abs_ref_sum: den,
        error,
    })
}

// --- backdoor experiment --------------------------------------------------

#[derive(Debug, Clone)]
pub struct BackdoorConfig {
    /// Fraction of the training set selected for poisoning; 0 degenerates the
    /// add phase to a no-op.
    pub poison_fraction: f64,
    /// How many leading features the trigger stamps.
    pub trigger_features: usize,
    /// Stamp value; defaults to each feature's training maximum.
    pub trigger_value: Option<f64>,
    pub target_label: u32,
    pub seed: u64,
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        BackdoorConfig {
            poison_fraction: 0.05,
            trigger_features: 3,
            trigger_value: None,
            target_label: 0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseMetrics {
    pub phase: String,
    pub clean_accuracy: f64,
    /// Accuracy on the trigger-stamped, target-relabeled test subset.
    pub attack_success_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackdoorReport {
    pub phases: Vec<PhaseMetrics>,
    pub poisoned_rows: usize,
}

impl BackdoorReport {
    pub fn phase(&self, name: &str) -> &PhaseMetrics {
        self.phases.iter().find(|p| p.phase == name).unwrap()
    }
}

/// Four-phase protocol: train on the clean split, incrementally add the
/// poisoned split, compare against training on clean+poisoned from scratch,
/// then decrementally remove the poisoned rows again.
pub fn run_backdoor_experiment(
    train: &RawDataset,
    test: &RawDataset,
    params: HyperParams,
    config: &BackdoorConfig,
) -> Result<BackdoorReport> {
    if !(0.0..1.0).contains(&config.poison_fraction) {
        return Err(Error::Invalid("poison fraction must be in [0, 1)".into()));
    }
    if config.trigger_features == 0 || config.trigger_features > train.n_features {
        return Err(Error::Invalid("bad trigger feature count".into()));
    }
    if config.target_label as usize >= train.n_classes {
        return Err(Error::Invalid("target label out of range".into()));
    }

    let trigger: Vec<f64> = (0..config.trigger_features)
        .map(|f| {
            config.trigger_value.unwrap_or_else(|| {
                (0..train.n_rows())
                    .map(|i| train.row(i)[f])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
        })
        .collect();
    let stamp = |data: &RawDataset, idx: &[usize], relabel: bool| -> RawDataset {
        let mut sub = data.subset(idx);
        for i in 0..sub.n_rows() {
            for (f, &v) in trigger.iter().enumerate() {
                sub.features[i * sub.n_features + f] = v;
            }
            if relabel {
                sub.labels[i] = config.target_label;
            }
        }
        sub.n_classes = data.n_classes;
        sub
    };

    let mut train_idx: Vec<usize> = (0..train.n_rows()).collect();
    shuffle(&mut train_idx, config.seed);
    let n_poison = (train.n_rows() as f64 * config.poison_fraction).round() as usize;
    let (poison_idx, clean_idx) = train_idx.split_at(n_poison);
    if n_poison > 0 && poison_idx.iter().all(|&i| train.labels[i] == config.target_label) {
        return Err(Error::Invalid(
            "degenerate poison set: every selected row already has the target label".into(),
        ));
    }
    let clean_train = train.subset(clean_idx).with_classes(train.n_classes)?;
    let poison_train = stamp(train, poison_idx, true);

    let mut test_idx: Vec<usize> = (0..test.n_rows()).collect();
    shuffle(&mut test_idx, config.seed.wrapping_add(1));
    let n_test_poison = ((test.n_rows() as f64 * config.poison_fraction).round() as usize).max(1);
    let (backdoor_test_idx, clean_test_idx) = test_idx.split_at(n_test_poison.min(test.n_rows() - 1));
    let clean_test = test.subset(clean_test_idx);
    let backdoor_test = stamp(test, backdoor_test_idx, true);

    let mut params = params;
    params.n_classes = params.n_classes.max(train.n_classes);

    let measure = |model: &Model, phase: &str| -> Result<PhaseMetrics> {
        Ok(PhaseMetrics {
            phase: phase.into(),
            clean_accuracy: 1.0 - model.test_error(&clean_test)?,
            attack_success_rate: 1.0 - model.test_error(&backdoor_test)?,
        })
    };

    let clean_model = Model::train(&clean_train, params)?;
    let train_clean = measure(&clean_model, "train_clean")?;

    let mut added_model = clean_model;
    let report = added_model.incremental_learn(&poison_train, UpdateOptions::default())?;
    let (start, end) = report.added_ids.unwrap();
    let add_backdoor = measure(&added_model, "add_backdoor")?;

    let mut combined_rows = clean_train.clone();
    combined_rows.labels.extend_from_slice(&poison_train.labels);
    combined_rows
        .features
        .extend_from_slice(&poison_train.features);
    let backdoor_model = Model::train(&combined_rows, params)?;
    let train_backdoor = measure(&backdoor_model, "train_backdoor")?;

    let ids: Vec<u32> = (start..end).collect();
    added_model.decremental_learn(&ids, UpdateOptions::default())?;
    let remove_backdoor = measure(&added_model, "remove_backdoor")?;

    Ok(BackdoorReport {
        phases: vec![train_clean, train_backdoor, add_backdoor, remove_backdoor],
        poisoned_rows: n_poison,
    })
}

// --- batch addition / removal schedule ------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOp {
    Add,
    Delete,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScheduleStep {
    pub op: StepOp,
    pub part: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub op: StepOp,
    pub part: usize,
    pub live_rows: usize,
    pub online_error: f64,
    /// Test error of a from-scratch model on the same live set, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrain_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub n_parts: usize,
    pub initial_parts: Vec<usize>,
    pub initial_error: f64,
    pub steps: Vec<StepMetrics>,
}

/// Ramp-up: start from one part, add the rest, then delete them again (the
/// 20-part protocol). `run_schedule` executes any explicit step list.
pub fn ramp_schedule(n_parts: usize) -> Vec<ScheduleStep> {
    let mut steps = Vec::new();
    for part in 1..n_parts {
        steps.push(ScheduleStep {
            op: StepOp::Add,
            part,
        });
    }
    for part in (1..n_parts).rev() {
        steps.push(ScheduleStep {
            op: StepOp::Delete,
            part,
        });
    }
    steps
}

#[allow(clippy::too_many_arguments)]
pub fn run_schedule(
    train: &RawDataset,
    test: &RawDataset,
    params: HyperParams,
    n_parts: usize,
    initial_parts: &[usize],
    steps: &[ScheduleStep],
    seed: u64,
    retrain_reference: bool,
) -> Result<ScheduleReport> {
    if n_parts < 2 || n_parts > train.n_rows() {
        return Err(Error::Invalid(format!("bad part count {n_parts}")));
    }
    let mut idx: Vec<usize> = (0..train.n_rows()).collect();
    shuffle(&mut idx, seed);
    let parts: Vec<Vec<usize>> = (0..n_parts)
        .map(|p| idx.iter().copied().filter(|i| i % n_parts == p).collect())
        .collect();

    let mut params = params;
    params.n_classes = params.n_classes.max(train.n_classes);

    let mut in_model: Vec<bool> = vec![false; n_parts];
    let mut part_ids: Vec<Vec<u32>> = vec![Vec::new(); n_parts];
    let mut initial_rows: Vec<usize> = Vec::new();
    for &p in initial_parts {
        if p >= n_parts {
            return Err(Error::Invalid(format!("unknown partition {p}")));
        }
        in_model[p] = true;
        let start = initial_rows.len();
        initial_rows.extend_from_slice(&parts[p]);
        part_ids[p] = (start as u32..initial_rows.len() as u32).collect();
    }
    if initial_rows.is_empty() {
        return Err(Error::Invalid("schedule needs at least one initial part".into()));
    }
    let mut model = Model::train(&train.subset(&initial_rows).with_classes(train.n_classes)?, params)?;
    let initial_error = model.test_error(test)?;

    let retrain_err = |in_model: &[bool]| -> Result<f64> {
        let rows: Vec<usize> = (0..n_parts)
            .filter(|&p| in_model[p])
            .flat_map(|p| parts[p].iter().copied())
            .collect();
        let reference = Model::train(&train.subset(&rows).with_classes(train.n_classes)?, params)?;
        reference.test_error(test)
    };

    let mut out = Vec::new();
    for (step_no, step) in steps.iter().enumerate() {
        if step.part >= n_parts {
            return Err(Error::Invalid(format!("unknown partition {}", step.part)));
        }
        match step.op {
            StepOp::Add => {
                if in_model[step.part] {
                    return Err(Error::Invalid(format!(
                        "partition {} is already in the model",
                        step.part
                    )));
                }
                let rows = train.subset(&parts[step.part]).with_classes(train.n_classes)?;
                let report = model.incremental_learn(&rows, UpdateOptions::default())?;
                let (start, end) = report.added_ids.unwrap();
                part_ids[step.part] = (start..end).collect();
                in_model[step.part] = true;
            }
            StepOp::Delete => {
                if !in_model[step.part] {
                    return Err(Error::Invalid(format!(
                        "partition {} is not in the model",
                        step.part
                    )));
                }
                let ids = std::mem::take(&mut part_ids[step.part]);
                model.decremental_learn(&ids, UpdateOptions::default())?;
                in_model[step.part] = false;
            }
        }
        out.push(StepMetrics {
            step: step_no,
            op: step.op,
            part: step.part,
            live_rows: model.online_state()?.store.n_live(),
            online_error: model.test_error(test)?,
            retrain_error: if retrain_reference {
                Some(retrain_err(&in_model)?)
            } else {
                None
            },
        });
    }
    Ok(ScheduleReport {
        n_parts,
        initial_parts: initial_parts.to_vec(),
        initial_error,
        steps: out,
    })
}

// --- speedup benchmark -----------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupRow {
    pub batch_rows: usize,
    pub add_micros: u64,
    pub delete_micros: u64,
    pub retrain_full_micros: u64,
    pub retrain_reduced_micros: u64,
    pub add_speedup: f64,
    pub delete_speedup: f64,
}

/// Wall-clock comparison of online updates against retraining from scratch.
/// Sizes < 1 are fractions of the dataset, otherwise absolute row counts.
/// Timings cover algorithm work only: models are trained before the clock
/// starts and nothing is loaded or deserializing inside the timed region.
pub fn benchmark_speedup(
    data: &RawDataset,
    params: HyperParams,
    sizes: &[f64],
    seed: u64,
) -> Result<Vec<SpeedupRow>> {
    let mut params = params;
    params.n_classes = params.n_classes.max(data.n_classes);

    let t0 = Instant::now();
    let full_model = Model::train(data, params)?;
    let retrain_full_micros = t0.elapsed().as_micros() as u64;

    let mut rows = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let batch_rows = if size < 1.0 {
            ((data.n_rows() as f64 * size).round() as usize).max(1)
        } else {
            size as usize
        };
        if batch_rows >= data.n_rows() {
            return Err(Error::Invalid(format!("batch of {batch_rows} rows too large")));
        }
        let mut idx: Vec<usize> = (0..data.n_rows()).collect();
        shuffle(&mut idx, seed.wrapping_add(i as u64));
        let (batch_idx, rest_idx) = idx.split_at(batch_rows);
        let batch_raw = data.subset(batch_idx).with_classes(data.n_classes)?;
        let reduced_raw = data.subset(rest_idx).with_classes(data.n_classes)?;

        let t = Instant::now();
        let reduced_model = Model::train(&reduced_raw, params)?;
        let retrain_reduced_micros = t.elapsed().as_micros() as u64;

        // Three repetitions on fresh copies; clones happen off the clock.
        const REPS: u32 = 3;
        let mut add_micros = 0u64;
        for _ in 0..REPS {
            let mut add_model = reduced_model.clone();
            let t = Instant::now();
            add_model.incremental_learn(&batch_raw, UpdateOptions::default())?;
            add_micros += t.elapsed().as_micros() as u64;
        }
        let add_micros = add_micros / REPS as u64;

        let ids: Vec<u32> = batch_idx.iter().map(|&i| i as u32).collect();
        let mut delete_micros = 0u64;
        for _ in 0..REPS {
            let mut del_model = full_model.clone();
            let t = Instant::now();
            del_model.decremental_learn(&ids, UpdateOptions::default())?;
            delete_micros += t.elapsed().as_micros() as u64;
        }
        let delete_micros = delete_micros / REPS as u64;

        rows.push(SpeedupRow {
            batch_rows,
            add_micros,
            delete_micros,
            retrain_full_micros,
            retrain_reduced_micros,
            add_speedup: retrain_full_micros as f64 / add_micros.max(1) as f64,
            delete_speedup: retrain_reduced_micros as f64 / delete_micros.max(1) as f64,
        });
    }
    Ok(rows)
}
