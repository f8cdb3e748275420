//! Unified multi-treatment causal forest (UDCF).
//!
//! One forest jointly estimates the conditional average treatment effect of
//! every arm versus control, `θ(x) ∈ R^K`, from randomized-trial data. Each
//! tree recursively partitions its subsample with the two-step criterion in
//! [`split`]; every leaf stores the joint effect vector fitted on its own
//! samples, and a prediction averages the leaf vectors over trees. Because
//! all arms share one partition, the `K` effect estimates for a user always
//! come from the same leaves and are directly comparable — the property
//! budget allocation depends on.
//!
//! Training is deterministic for a given seed: trees derive independent
//! substreams, are built in parallel, and are assembled in index order.

mod split;
mod stats;

pub use split::{find_best_split, inter_split_score, intra_split_score, SplitCandidate};
pub use stats::{compute_node_stats, NodeStats, UdcfError};

use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RctDataset;

/// Serialized model layout version accepted by [`UdcfModel::load`].
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Every arm (control included) must keep at least this many samples on
    /// both sides of any split.
    pub min_samples_per_arm_leaf: usize,
    /// Number of stage-one-ranked candidates refined by the stage-two score.
    pub m_candidates: usize,
    /// Diagonal regularization of the per-node design matrix.
    pub ridge_epsilon: f64,
    /// Fraction of rows (stratified by arm) given to each tree.
    pub subsample_fraction: f64,
    /// Fraction of features drawn as candidates at each node.
    pub feature_subsample_fraction: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            min_samples_per_arm_leaf: 10,
            m_candidates: 10,
            ridge_epsilon: 1e-6,
            subsample_fraction: 0.5,
            feature_subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), UdcfError> {
        let bad = |msg: String| Err(UdcfError::BadParams(msg));
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if self.min_samples_per_arm_leaf == 0 {
            return bad("min_samples_per_arm_leaf must be positive".into());
        }
        if self.m_candidates == 0 {
            return bad("m_candidates must be positive".into());
        }
        if !self.ridge_epsilon.is_finite() || self.ridge_epsilon < 0.0 {
            return bad(format!("ridge_epsilon must be ≥ 0, got {}", self.ridge_epsilon));
        }
        for (name, f) in [
            ("subsample_fraction", self.subsample_fraction),
            ("feature_subsample_fraction", self.feature_subsample_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {f}"));
            }
        }
        Ok(())
    }
}

/// One node of a flat-array tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Joint arm-effect vector fitted on the leaf's samples, length `K`.
        theta: Vec<f64>,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Index of the leaf a feature row is routed to.
    pub fn leaf_index(&self, features: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if features[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                TreeNode::Leaf { .. } => return idx,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match &nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// A trained unified multi-treatment causal forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdcfModel {
    pub format_version: u32,
    pub num_treatments: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub params: TrainParams,
    pub trees: Vec<Tree>,
}

// ── Training ────────────────────────────────────────────────────────────────

/// Substream for one tree; independent of how trees are scheduled.
fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut mix = seed ^ 0x7533_4443_4654; // domain tag
    mix = mix.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(mix.wrapping_add(tree_index as u64))
}

/// Rows for one tree: within every arm, a seeded shuffle keeps
/// `ceil(fraction · arm_size)` rows, so no arm is lost by subsampling.
fn stratified_subsample(data: &RctDataset, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen = Vec::new();
    for arm in 0..=data.num_treatments() {
        let mut members: Vec<usize> = (0..data.n_samples())
            .filter(|&i| data.treatment(i) as usize == arm)
            .collect();
        let keep = ((members.len() as f64 * fraction).ceil() as usize).clamp(1, members.len());
        members.shuffle(rng);
        chosen.extend_from_slice(&members[..keep]);
    }
    chosen.sort_unstable();
    chosen
}

/// Distinct candidate features for one node, ascending.
fn sample_features(n_features: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let take = ((n_features as f64 * fraction).ceil() as usize).clamp(1, n_features);
    if take == n_features {
        return (0..n_features).collect();
    }
    let mut all: Vec<usize> = (0..n_features).collect();
    all.shuffle(rng);
    let mut picked = all[..take].to_vec();
    picked.sort_unstable();
    picked
}

struct TreeBuilder<'a> {
    data: &'a RctDataset,
    params: &'a TrainParams,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(
        &mut self,
        indices: Vec<usize>,
        depth: usize,
        parent_theta: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, UdcfError> {
        let k = self.data.num_treatments();
        let outcomes: Vec<f64> = indices.iter().map(|&i| self.data.outcome(i)).collect();
        let treatments: Vec<u32> = indices.iter().map(|&i| self.data.treatment(i)).collect();
        let stats = compute_node_stats(&outcomes, &treatments, k, self.params.ridge_epsilon);

        let stats = match stats {
            Ok(s) => s,
            Err(e) => {
                // A node whose design cannot be fitted becomes a leaf that
                // inherits the parent estimate; the root has no fallback.
                let theta = parent_theta
                    .map(|t| t.to_vec())
                    .ok_or(e)?;
                self.nodes.push(TreeNode::Leaf {
                    theta,
                    n_samples: indices.len(),
                });
                return Ok(self.nodes.len() - 1);
            }
        };

        let starved = stats
            .treatment_counts
            .iter()
            .any(|&c| c < self.params.min_samples_per_arm_leaf);
        let split = if depth >= self.params.max_depth || starved {
            None
        } else {
            let features = sample_features(
                self.data.n_features(),
                self.params.feature_subsample_fraction,
                rng,
            );
            find_best_split(self.data, &indices, &stats, &features, self.params)
        };

        match split {
            None => {
                self.nodes.push(TreeNode::Leaf {
                    theta: stats.theta_hat,
                    n_samples: indices.len(),
                });
                Ok(self.nodes.len() - 1)
            }
            Some(cand) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| self.data.feature_row(i)[cand.feature_index] <= cand.threshold);
                let slot = self.nodes.len();
                self.nodes.push(TreeNode::Split {
                    feature: cand.feature_index,
                    threshold: cand.threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                });
                let left = self.build(left_idx, depth + 1, Some(&stats.theta_hat), rng)?;
                let right = self.build(right_idx, depth + 1, Some(&stats.theta_hat), rng)?;
                if let TreeNode::Split {
                    left: l, right: r, ..
                } = &mut self.nodes[slot]
                {
                    *l = left;
                    *r = right;
                }
                Ok(slot)
            }
        }
    }
}

fn build_tree(
    data: &RctDataset,
    params: &TrainParams,
    tree_index: usize,
) -> Result<Tree, UdcfError> {
    let mut rng = tree_rng(params.seed, tree_index);
    let indices = stratified_subsample(data, params.subsample_fraction, &mut rng);
    let mut builder = TreeBuilder {
        data,
        params,
        nodes: Vec::new(),
    };
    builder.build(indices, 0, None, &mut rng)?;
    Ok(Tree {
        nodes: builder.nodes,
    })
}

/// Trains a forest on randomized-trial data.
///
/// Validates the hyperparameters and requires every arm of the full dataset
/// to hold at least `min_samples_per_arm_leaf` samples. Deterministic for a
/// given `(data, params)` regardless of thread count.
pub fn train_forest(data: &RctDataset, params: &TrainParams) -> Result<UdcfModel, UdcfError> {
    params.validate()?;
    for (arm, &count) in data.arm_counts().iter().enumerate() {
        if count < params.min_samples_per_arm_leaf {
            return Err(UdcfError::ArmStarvation {
                arm,
                count,
                min: params.min_samples_per_arm_leaf,
            });
        }
    }
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| build_tree(data, params, t))
        .collect::<Result<_, _>>()?;
    Ok(UdcfModel {
        format_version: MODEL_FORMAT_VERSION,
        num_treatments: data.num_treatments(),
        n_features: data.n_features(),
        feature_names: data.feature_names().to_vec(),
        params: params.clone(),
        trees,
    })
}

// ── Prediction and persistence ──────────────────────────────────────────────

impl UdcfModel {
    fn check_dim(&self, n_features: usize) -> Result<(), UdcfError> {
        if n_features != self.n_features {
            return Err(UdcfError::DimensionMismatch {
                expected: self.n_features,
                got: n_features,
            });
        }
        Ok(())
    }

    /// Predicted effect vector for one feature row: the average of the leaf
    /// vectors the row is routed to, in tree order.
    pub fn predict_cate(&self, features: &[f64]) -> Result<Vec<f64>, UdcfError> {
        self.check_dim(features.len())?;
        let mut acc = vec![0.0f64; self.num_treatments];
        for tree in &self.trees {
            let leaf = tree.leaf_index(features);
            if let TreeNode::Leaf { theta, .. } = &tree.nodes[leaf] {
                for (a, t) in acc.iter_mut().zip(theta) {
                    *a += t;
                }
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        Ok(acc)
    }

    /// Batch prediction over a row-major `N × n_features` matrix; returns a
    /// row-major `N × K` effect matrix. Row `i` equals
    /// `predict_cate(row i)` exactly.
    pub fn predict_batch(&self, features: &[f64]) -> Result<Vec<f64>, UdcfError> {
        if features.len() % self.n_features != 0 {
            return Err(UdcfError::DimensionMismatch {
                expected: self.n_features,
                got: features.len(),
            });
        }
        let rows = features.len() / self.n_features;
        let out: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|i| {
                self.predict_cate(&features[i * self.n_features..(i + 1) * self.n_features])
                    .expect("dimension already checked")
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    /// Effect matrix for every row of a dataset (row-major `N × K`).
    pub fn predict_dataset(&self, data: &RctDataset) -> Result<Vec<f64>, UdcfError> {
        self.check_dim(data.n_features())?;
        self.predict_batch(data.features())
    }

    /// Leaf index per tree for one feature row. All `K` effect estimates for
    /// the row are read from exactly these leaves.
    pub fn leaf_indices(&self, features: &[f64]) -> Result<Vec<usize>, UdcfError> {
        self.check_dim(features.len())?;
        Ok(self.trees.iter().map(|t| t.leaf_index(features)).collect())
    }

    pub fn tree_depths(&self) -> Vec<usize> {
        self.trees.iter().map(Tree::depth).collect()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.trees.iter().map(Tree::n_leaves).collect()
    }

    /// Writes the model as a versioned JSON document.
    pub fn save(&self, path: &Path) -> Result<(), UdcfError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    /// Loads a model, rejecting unknown layout versions.
    pub fn load(path: &Path) -> Result<Self, UdcfError> {
        let file = std::fs::File::open(path)?;
        let model: UdcfModel = serde_json::from_reader(BufReader::new(file))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(UdcfError::BadVersion(model.format_version));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_synthetic, true_effect, EffectForm, SynthConfig};

    fn quick_params(seed: u64) -> TrainParams {
        TrainParams {
            n_trees: 12,
            max_depth: 5,
            min_samples_per_arm_leaf: 10,
            seed,
            ..TrainParams::default()
        }
    }

    fn training_data(seed: u64) -> crate::dataset::RctDataset {
        let (data, _) = generate_synthetic(&SynthConfig {
            n_samples: 3000,
            uncertainty_weight: 0.5,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        data
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = training_data(1);
        let m1 = train_forest(&data, &quick_params(9)).unwrap();
        let m2 = train_forest(&data, &quick_params(9)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(
            serde_json::to_vec(&m1).unwrap(),
            serde_json::to_vec(&m2).unwrap(),
            "same seed must serialize byte-identically"
        );
        let m3 = train_forest(&data, &quick_params(10)).unwrap();
        assert_ne!(m1, m3, "a different seed should grow different trees");
    }

    #[test]
    fn depth_limit_is_respected() {
        let data = training_data(2);
        let model = train_forest(&data, &quick_params(0)).unwrap();
        assert!(model.tree_depths().iter().all(|&d| d <= 5));
        assert!(model.leaf_counts().iter().all(|&l| l >= 1));
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let data = training_data(3);
        let model = train_forest(&data, &quick_params(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = UdcfModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        let x = data.feature_row(17);
        assert_eq!(model.predict_cate(x).unwrap(), loaded.predict_cate(x).unwrap());
    }

    #[test]
    fn unknown_format_version_is_rejected() {
        let data = training_data(4);
        let mut model = train_forest(&data, &quick_params(0)).unwrap();
        model.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert!(matches!(
            UdcfModel::load(&path),
            Err(UdcfError::BadVersion(99))
        ));
    }

    #[test]
    fn prediction_is_pure_and_batch_matches_scalar() {
        let data = training_data(5);
        let model = train_forest(&data, &quick_params(1)).unwrap();
        let x = data.feature_row(100);
        assert_eq!(model.predict_cate(x).unwrap(), model.predict_cate(x).unwrap());

        let batch = model.predict_dataset(&data).unwrap();
        let k = data.num_treatments();
        for i in (0..data.n_samples()).step_by(251) {
            let single = model.predict_cate(data.feature_row(i)).unwrap();
            assert_eq!(&batch[i * k..(i + 1) * k], single.as_slice());
        }
    }

    #[test]
    fn all_arm_estimates_come_from_the_same_leaves() {
        let data = training_data(6);
        let model = train_forest(&data, &quick_params(2)).unwrap();
        let x = data.feature_row(42);
        let leaves_first = model.leaf_indices(x).unwrap();
        let leaves_again = model.leaf_indices(x).unwrap();
        assert_eq!(leaves_first, leaves_again);
        // The prediction is reproducible from those leaves alone.
        let k = model.num_treatments;
        let mut acc = vec![0.0; k];
        for (tree, &leaf) in model.trees.iter().zip(&leaves_first) {
            if let TreeNode::Leaf { theta, .. } = &tree.nodes[leaf] {
                for j in 0..k {
                    acc[j] += theta[j];
                }
            }
        }
        for a in &mut acc {
            *a /= model.trees.len() as f64;
        }
        assert_eq!(acc, model.predict_cate(x).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let data = training_data(7);
        let model = train_forest(&data, &quick_params(0)).unwrap();
        assert!(matches!(
            model.predict_cate(&[1.0, 2.0]),
            Err(UdcfError::DimensionMismatch { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn root_arm_starvation_is_a_training_error() {
        let n = 40;
        let data = crate::dataset::RctDataset::new(
            (0..n as u64).collect(),
            (0..n).map(|i| i as f64).collect(),
            vec!["x".into()],
            (0..n).map(|i| u32::from(i < 4)).collect(), // only 4 treated
            vec![0.0; n],
            vec![1.0; n],
            1,
        )
        .unwrap();
        match train_forest(&data, &quick_params(0)).unwrap_err() {
            UdcfError::ArmStarvation { arm, count, min } => {
                assert_eq!((arm, count, min), (1, 4, 10));
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let data = training_data(8);
        let bad = TrainParams {
            subsample_fraction: 0.0,
            ..TrainParams::default()
        };
        assert!(matches!(
            train_forest(&data, &bad),
            Err(UdcfError::BadParams(_))
        ));
        let bad = TrainParams {
            n_trees: 0,
            ..TrainParams::default()
        };
        assert!(matches!(
            train_forest(&data, &bad),
            Err(UdcfError::BadParams(_))
        ));
    }

    /// Step-shaped true effects on noise-free data must be recovered almost
    /// exactly; a compact version of the larger recovery benchmark.
    #[test]
    fn recovers_step_effects_on_noise_free_data() {
        let config = SynthConfig {
            n_samples: 6000,
            uncertainty_weight: 0.0,
            effect_form: EffectForm::Step { feature: 1 },
            seed: 60,
            ..SynthConfig::default()
        };
        let (data, _) = generate_synthetic(&config).unwrap();
        let (train, test) = data.split_train_test(0.3, 0).unwrap();
        let params = TrainParams {
            n_trees: 20,
            seed: 1,
            ..TrainParams::default()
        };
        let model = train_forest(&train, &params).unwrap();
        let k = data.num_treatments();
        let pred = model.predict_dataset(&test).unwrap();

        let mut sq_err = 0.0;
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for i in 0..test.n_samples() {
            for arm in 1..=k {
                let truth = true_effect(&config, test.feature_row(i), arm);
                lo = lo.min(truth);
                hi = hi.max(truth);
                sq_err += (pred[i * k + (arm - 1)] - truth).powi(2);
            }
        }
        let rmse = (sq_err / (test.n_samples() * k) as f64).sqrt();
        let range = hi - lo;
        assert!(
            rmse <= 0.05 * range,
            "rmse {rmse:.4} exceeds 5% of effect range {range:.4}"
        );
    }
}
