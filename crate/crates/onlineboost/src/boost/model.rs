//! Training (Robust LogitBoost) and prediction.

use serde::{Deserialize, Serialize};

use crate::binning::BinMapper;
use crate::boost::hist::FeatureLayout;
use crate::boost::instances::{InstanceStore, ScoreState};
use crate::boost::math::{argmax, nll_loss, rp_pp, softmax_row};
use crate::boost::tree::{fit_tree, FitParams, NodeKind, Tree, ROOT};
use crate::dataset::{BinnedDataset, RawDataset};
use crate::error::Error;
use crate::seeds;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Boosting iterations M.
    pub iterations: usize,
    /// Classes K.
    pub n_classes: usize,
    /// Terminal nodes per tree J.
    pub max_leaves: u32,
    /// Bin budget per feature B.
    pub max_bins: usize,
    /// Shrinkage ν.
    pub shrinkage: f64,
    /// Split candidate sample rate α.
    pub sample_rate: f64,
    /// Split robustness tolerance σ.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            iterations: 100,
            n_classes: 2,
            max_leaves: 20,
            max_bins: 1024,
            shrinkage: 1.0,
            sample_rate: 0.1,
            tolerance: 0.1,
            seed: 42,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, msg: String) -> Error {
            Error::InvalidParam { name, msg }
        }
        if self.iterations < 1 {
            return Err(bad("iters", "must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(bad("classes", format!("need at least 2, got {}", self.n_classes)));
        }
        if self.max_leaves < 2 {
            return Err(bad("leaves", "must be at least 2".into()));
        }
        if self.max_bins < 2 || self.max_bins > u16::MAX as usize + 1 {
            return Err(bad("bins", format!("must be in [2, 65536], got {}", self.max_bins)));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(bad("shrinkage", format!("must be in (0, 1], got {}", self.shrinkage)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(bad("alpha", format!("must be in (0, 1], got {}", self.sample_rate)));
        }
        if !(0.0..=1.0).contains(&self.tolerance) {
            return Err(bad("sigma", format!("must be in [0, 1], got {}", self.tolerance)));
        }
        Ok(())
    }

    pub fn k_factor(&self) -> f64 {
        (self.n_classes as f64 - 1.0) / self.n_classes as f64
    }
}

/// The instance-side state that makes a model online-learnable. Slim model
/// files drop it, leaving prediction only.
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub store: InstanceStore,
    pub scores: ScoreState,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: HyperParams,
    pub mapper: BinMapper,
    pub layout: FeatureLayout,
    /// M×K trees, iteration-major: index `m * K + k`.
    pub trees: Vec<Tree>,
    pub online: Option<OnlineState>,
}

impl Model {
    /// Fit the bin mapper on `raw` and train.
    pub fn train(raw: &RawDataset, mut params: HyperParams) -> Result<Model> {
        params.n_classes = params.n_classes.max(raw.n_classes);
        params.validate()?;
        let mapper = BinMapper::fit(raw, params.max_bins)?;
        let binned = mapper.apply(raw)?;
        Model::train_binned(binned, mapper, params)
    }

    pub fn train_binned(binned: BinnedDataset, mapper: BinMapper, params: HyperParams) -> Result<Model> {
        params.validate()?;
        if binned.n_rows() == 0 {
            return Err(Error::Invalid("no rows".into()));
        }
        if let Some(&y) = binned.labels.iter().find(|&&y| y as usize >= params.n_classes) {
            return Err(Error::UnknownLabel {
                label: y.to_string(),
                classes: params.n_classes,
            });
        }
        let n = binned.n_rows();
        let (m_iters, k_classes) = (params.iterations, params.n_classes);
        let layout = FeatureLayout::from_mapper(&mapper);
        let store = InstanceStore::new(binned.bins, binned.labels, binned.n_features);
        let mut scores = ScoreState::new(n, m_iters, k_classes);
        let mut trees = Vec::with_capacity(m_iters * k_classes);

        let mut p_cur = vec![1.0 / k_classes as f64; n * k_classes];
        for m in 0..m_iters {
            for i in 0..n {
                scores.set_ledger_row(i as u32, m, &p_cur[i * k_classes..(i + 1) * k_classes]);
            }
            for k in 0..k_classes {
                let ids: Vec<u32> = (0..n as u32).collect();
                let derivs: Vec<(f64, f64)> = (0..n)
                    .map(|i| rp_pp(store.label(i as u32), k, p_cur[i * k_classes + k]))
                    .collect();
                let tree = fit_tree(
                    &store,
                    &FitParams {
                        layout: &layout,
                        alpha: params.sample_rate,
                        leaf_budget: params.max_leaves,
                        k_factor: params.k_factor(),
                        tree_seed: seeds::tree_seed(params.seed, m, k),
                        root_path: 1,
                    },
                    ids,
                    derivs,
                );
                let mut leaves = Vec::new();
                tree.leaves_under(ROOT, &mut leaves);
                for &leaf in &leaves {
                    if let NodeKind::Leaf { beta, ids } = &tree.node(leaf).kind {
                        let delta = params.shrinkage * beta;
                        for &id in ids {
                            scores.f_add(id, k, delta);
                        }
                    }
                }
                trees.push(tree);
            }
            for i in 0..n {
                let out = &mut p_cur[i * k_classes..(i + 1) * k_classes];
                softmax_row(scores.f_row(i as u32), out);
            }
        }

        Ok(Model {
            params,
            mapper,
            layout,
            trees,
            online: Some(OnlineState { store, scores }),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.params.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.mapper.n_features()
    }

    pub fn tree(&self, m: usize, k: usize) -> &Tree {
        &self.trees[m * self.params.n_classes + k]
    }

    pub fn online_state(&self) -> Result<&OnlineState> {
        self.online.as_ref().ok_or(Error::SlimModel)
    }

    pub fn online_state_mut(&mut self) -> Result<&mut OnlineState> {
        self.online.as_mut().ok_or(Error::SlimModel)
    }

    /// Probabilities for a binned row.
    pub fn predict_binned(&self, bins: &[u16]) -> Vec<f64> {
        let k_classes = self.params.n_classes;
        let mut f = vec![0.0; k_classes];
        for (t, tree) in self.trees.iter().enumerate() {
            f[t % k_classes] += self.params.shrinkage * tree.leaf_beta(bins);
        }
        let mut p = vec![0.0; k_classes];
        softmax_row(&f, &mut p);
        p
    }

    /// Probabilities plus argmax label for one raw row.
    pub fn predict(&self, row: &[f64]) -> Result<(Vec<f64>, u32)> {
        let mut bins = vec![0u16; self.mapper.n_features()];
        self.mapper.bin_row(row, &mut bins)?;
        let p = self.predict_binned(&bins);
        let label = argmax(&p);
        Ok((p, label))
    }

    /// Fraction of rows whose argmax prediction misses the label.
    pub fn test_error(&self, data: &RawDataset) -> Result<f64> {
        if data.n_rows() == 0 {
            return Err(Error::Invalid("empty test set".into()));
        }
        let mut wrong = 0usize;
        for i in 0..data.n_rows() {
            let (_, label) = self.predict(data.row(i))?;
            if label != data.labels[i] {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / data.n_rows() as f64)
    }

    /// Negative log-likelihood of the live training set under the stored scores.
    pub fn training_nll(&self) -> Result<f64> {
        let state = self.online_state()?;
        let k_classes = self.params.n_classes;
        let mut labels = Vec::with_capacity(state.store.n_live());
        let mut probs = Vec::with_capacity(state.store.n_live() * k_classes);
        let mut p = vec![0.0; k_classes];
        for id in state.store.live_ids() {
            state.scores.softmax_f(id, &mut p);
            labels.push(state.store.label(id));
            probs.extend_from_slice(&p);
        }
        Ok(nll_loss(&labels, &probs, k_classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gaussian_blobs;

    fn small_params(m: usize, k: usize) -> HyperParams {
        HyperParams {
            iterations: m,
            n_classes: k,
            max_leaves: 4,
            max_bins: 64,
            sample_rate: 1.0,
            tolerance: 0.0,
            seed: 7,
            ..HyperParams::default()
        }
    }

    #[test]
    fn param_validation() {
        let mut p = HyperParams::default();
        p.sample_rate = 1.5;
        assert!(p.validate().is_err());
        p.sample_rate = 0.1;
        p.tolerance = -0.1;
        assert!(p.validate().is_err());
        p.tolerance = 0.1;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn one_iteration_trains_k_trees() {
        let raw = gaussian_blobs(60, 3, 2, Some(32), 5);
        let model = Model::train(&raw, small_params(1, 2)).unwrap();
        assert_eq!(model.trees.len(), 2);
        let raw3 = gaussian_blobs(60, 3, 3, Some(32), 5);
        let model3 = Model::train(&raw3, small_params(1, 3)).unwrap();
        assert_eq!(model3.trees.len(), 3);
    }

    #[test]
    fn training_reduces_nll() {
        let raw = gaussian_blobs(200, 4, 3, Some(32), 11);
        let model = Model::train(&raw, small_params(5, 3)).unwrap();
        let n = raw.n_rows() as f64;
        let initial = n * (3.0f64).ln(); // uniform p = 1/3 per instance
        assert!(model.training_nll().unwrap() < initial);
    }

    #[test]
    fn empty_ensemble_predicts_uniform() {
        let raw = gaussian_blobs(30, 2, 3, Some(16), 2);
        let mut model = Model::train(&raw, small_params(1, 3)).unwrap();
        model.trees.clear();
        let (p, _) = model.predict(raw.row(0)).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn prediction_deterministic_and_matches_stored_scores() {
        let raw = gaussian_blobs(150, 4, 3, Some(32), 13);
        let model = Model::train(&raw, small_params(6, 3)).unwrap();
        let (p1, l1) = model.predict(raw.row(7)).unwrap();
        let (p2, l2) = model.predict(raw.row(7)).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
        // Full forward pass equals the incrementally maintained p row.
        let state = model.online_state().unwrap();
        let mut stored = vec![0.0; 3];
        for id in [0u32, 7, 149] {
            state.scores.softmax_f(id, &mut stored);
            let (fresh, _) = model.predict(raw.row(id as usize)).unwrap();
            for (a, b) in fresh.iter().zip(&stored) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let raw = gaussian_blobs(120, 3, 2, Some(32), 3);
        let params = HyperParams {
            sample_rate: 0.5,
            ..small_params(4, 2)
        };
        let a = Model::train(&raw, params).unwrap();
        let b = Model::train(&raw, params).unwrap();
        assert_eq!(a.trees.len(), b.trees.len());
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            assert_eq!(ta.nodes.len(), tb.nodes.len());
            for (na, nb) in ta.nodes.iter().zip(&tb.nodes) {
                match (&na.kind, &nb.kind) {
                    (
                        NodeKind::Leaf { beta: ba, ids: ia },
                        NodeKind::Leaf { beta: bb, ids: ib },
                    ) => {
                        assert_eq!(ba.to_bits(), bb.to_bits());
                        assert_eq!(ia, ib);
                    }
                    (
                        NodeKind::Internal {
                            feature: fa,
                            bin: na_bin,
                            ..
                        },
                        NodeKind::Internal {
                            feature: fb,
                            bin: nb_bin,
                            ..
                        },
                    ) => {
                        assert_eq!(fa, fb);
                        assert_eq!(na_bin, nb_bin);
                    }
                    _ => panic!("shape mismatch"),
                }
            }
        }
    }

    #[test]
    fn model_is_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Model>();
        let raw = gaussian_blobs(60, 3, 2, Some(16), 31);
        let model = std::sync::Arc::new(Model::train(&raw, small_params(2, 2)).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let model = model.clone();
                let row: Vec<f64> = raw.row(t).to_vec();
                std::thread::spawn(move || model.predict(&row).unwrap().1)
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn probability_rows_normalized() {
        let raw = gaussian_blobs(100, 3, 4, Some(32), 23);
        let model = Model::train(&raw, small_params(3, 4)).unwrap();
        let state = model.online_state().unwrap();
        let mut p = vec![0.0; 4];
        for id in state.store.live_ids() {
            state.scores.softmax_f(id, &mut p);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
