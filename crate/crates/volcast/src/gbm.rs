//! Gradient boosting machine with from-scratch regression-tree base learners.
//!
//! Squared loss, so the stagewise pseudo-residual is the plain residual and
//! the expansion coefficient is 1 (absorbed into the leaf means); the
//! learning rate provides shrinkage. Trees split greedily on the (feature,
//! midpoint-threshold) pair minimizing the summed child squared error over a
//! seeded random feature subset per node.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{mean, Mat};
use crate::preprocess::ModelInstance;

#[derive(Debug, Error)]
pub enum GbmError {
    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },
    #[error("feature vector length {got} does not match model dimension {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("model file error: {0}")]
    ModelIo(String),
}

/// Binary regression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { value: f64 },
    Internal { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Internal { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Boosting hyperparameters. Documented search ranges: n_trees [100, 1000],
/// max_features_frac [0.1, 1.0], min_samples_leaf [2, 9], max_depth [4, 9],
/// learning_rate [0.005, 0.05] (log-uniform in random search).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmHyperParams {
    pub n_trees: usize,
    pub max_features_frac: f64,
    pub min_samples_leaf: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GbmHyperParams {
    fn default() -> Self {
        GbmHyperParams {
            n_trees: 300,
            max_features_frac: 0.5,
            min_samples_leaf: 4,
            max_depth: 5,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Fitted additive expansion: prediction = F0 + lr * sum tree_m(x).
#[derive(Debug, Clone, PartialEq)]
pub struct GbmModel {
    pub init_value: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
    /// Training-residual variance of the log target; used downstream as the
    /// constant sigma^2 when mapping point predictions back to the raw scale.
    pub residual_var: f64,
}

/// Flatten instances into the concatenated feature matrix (source-major,
/// feature-major, lag-minor — each window's row-major layout appended in
/// source order) and the log targets u = ln y.
pub fn flatten_instances(instances: &[ModelInstance]) -> (Mat, Vec<f64>) {
    assert!(!instances.is_empty());
    let dim: usize = instances[0].windows.iter().map(|w| w.rows() * w.cols()).sum();
    let mut data = Vec::with_capacity(instances.len() * dim);
    let mut targets = Vec::with_capacity(instances.len());
    for inst in instances {
        for w in &inst.windows {
            data.extend_from_slice(w.data());
        }
        targets.push(inst.y.ln());
    }
    (Mat::from_vec(instances.len(), dim, data), targets)
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Best (feature, threshold) over the candidate features, minimizing the
/// summed child SSE. Thresholds are midpoints of consecutive distinct sorted
/// values; both children must keep at least `min_samples_leaf` rows. Ties
/// break toward the lowest feature index, then the lowest threshold.
fn best_split(
    x: &Mat,
    residuals: &[f64],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let mut best: Option<SplitChoice> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x.at(r, feature), residuals[r])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
        let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            left_sq += pairs[i].1 * pairs[i].1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_samples_leaf || n_right < min_samples_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse_left = left_sq - left_sum * left_sum / n_left as f64;
            let sse_right = right_sq - right_sum * right_sum / n_right as f64;
            let score = sse_left + sse_right;
            if best.as_ref().map(|b| score < b.score).unwrap_or(true) {
                let lo = pairs[i].0;
                let hi = pairs[i + 1].0;
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo; // adjacent floats; keep the partition honest
                }
                best = Some(SplitChoice { feature, threshold, score });
            }
        }
    }
    best
}

fn grow(
    x: &Mat,
    residuals: &[f64],
    rows: &[usize],
    depth_left: usize,
    hyper: &GbmHyperParams,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let node_mean = mean(&rows.iter().map(|&r| residuals[r]).collect::<Vec<_>>());
    if depth_left == 0 || rows.len() < 2 * hyper.min_samples_leaf {
        return TreeNode::Leaf { value: node_mean };
    }
    let zero_variance = rows.iter().all(|&r| residuals[r] == residuals[rows[0]]);
    if zero_variance {
        return TreeNode::Leaf { value: node_mean };
    }

    let n_features = x.cols();
    let k = ((hyper.max_features_frac * n_features as f64).ceil() as usize).clamp(1, n_features);
    let mut features: Vec<usize> = rand::seq::index::sample(rng, n_features, k).into_vec();
    features.sort_unstable();

    match best_split(x, residuals, rows, &features, hyper.min_samples_leaf) {
        None => TreeNode::Leaf { value: node_mean },
        Some(split) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| x.at(r, split.feature) <= split.threshold);
            let left = grow(x, residuals, &left_rows, depth_left - 1, hyper, rng);
            let right = grow(x, residuals, &right_rows, depth_left - 1, hyper, rng);
            TreeNode::Internal {
                feature: split.feature,
                threshold: split.threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Fit one regression tree to the residuals (exposed for the split-search
/// oracle tests; boosting calls it per stage).
pub fn fit_tree(
    x: &Mat,
    residuals: &[f64],
    hyper: &GbmHyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<TreeNode, GbmError> {
    let required = 2 * hyper.min_samples_leaf;
    if x.rows() < required.max(1) {
        return Err(GbmError::TooFewSamples { required, actual: x.rows() });
    }
    let rows: Vec<usize> = (0..x.rows()).collect();
    Ok(grow(x, residuals, &rows, hyper.max_depth, hyper, rng))
}

/// Forward-stagewise fit: F0 is the target mean, each stage fits a tree to
/// the current residuals and adds it with shrinkage.
pub fn gbm_fit(x: &Mat, u: &[f64], hyper: &GbmHyperParams) -> Result<GbmModel, GbmError> {
    if x.rows() == 0 {
        return Err(GbmError::TooFewSamples { required: 1, actual: 0 });
    }
    assert_eq!(x.rows(), u.len());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let init_value = mean(u);
    let mut current: Vec<f64> = vec![init_value; u.len()];
    let mut residuals: Vec<f64> = u.iter().zip(current.iter()).map(|(t, f)| t - f).collect();
    let mut trees = Vec::with_capacity(hyper.n_trees);
    for _ in 0..hyper.n_trees {
        let tree = fit_tree(x, &residuals, hyper, &mut rng)?;
        for r in 0..x.rows() {
            current[r] += hyper.learning_rate * tree.predict(x.row(r));
            residuals[r] = u[r] - current[r];
        }
        trees.push(tree);
    }
    let residual_var = residuals.iter().map(|e| e * e).sum::<f64>() / u.len().max(1) as f64;
    Ok(GbmModel {
        init_value,
        learning_rate: hyper.learning_rate,
        trees,
        n_features: x.cols(),
        residual_var,
    })
}

pub fn gbm_predict(model: &GbmModel, x: &[f64]) -> Result<f64, GbmError> {
    if x.len() != model.n_features {
        return Err(GbmError::ShapeMismatch { expected: model.n_features, got: x.len() });
    }
    let mut out = model.init_value;
    for tree in &model.trees {
        out += model.learning_rate * tree.predict(x);
    }
    Ok(out)
}

/// Hyperparameter search ranges for [`random_search`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbmSearchRanges {
    pub n_trees: (usize, usize),
    pub max_features_frac: (f64, f64),
    pub min_samples_leaf: (usize, usize),
    pub max_depth: (usize, usize),
    pub learning_rate: (f64, f64),
}

impl Default for GbmSearchRanges {
    fn default() -> Self {
        GbmSearchRanges {
            n_trees: (100, 1000),
            max_features_frac: (0.1, 1.0),
            min_samples_leaf: (2, 9),
            max_depth: (4, 9),
            learning_rate: (0.005, 0.05),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRecord {
    pub hyper: GbmHyperParams,
    pub val_rmse: f64,
}

/// Uniform random search (log-uniform for the learning rate); best draw by
/// validation RMSE on the log target.
pub fn random_search(
    x_train: &Mat,
    u_train: &[f64],
    x_val: &Mat,
    u_val: &[f64],
    n_draws: usize,
    seed: u64,
    ranges: &GbmSearchRanges,
) -> Result<(GbmHyperParams, Vec<SearchRecord>), GbmError> {
    assert!(n_draws >= 1);
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Vec::with_capacity(n_draws);
    for draw in 0..n_draws {
        let hyper = GbmHyperParams {
            n_trees: rng.random_range(ranges.n_trees.0..=ranges.n_trees.1),
            max_features_frac: rng.random_range(ranges.max_features_frac.0..=ranges.max_features_frac.1),
            min_samples_leaf: rng.random_range(ranges.min_samples_leaf.0..=ranges.min_samples_leaf.1),
            max_depth: rng.random_range(ranges.max_depth.0..=ranges.max_depth.1),
            learning_rate: (rng.random_range(ranges.learning_rate.0.ln()..=ranges.learning_rate.1.ln())).exp(),
            seed: crate::math::derive_seed(seed, &format!("gbm-draw-{draw}")),
        };
        let model = gbm_fit(x_train, u_train, &hyper)?;
        let mut sse = 0.0;
        for r in 0..x_val.rows() {
            let pred = gbm_predict(&model, x_val.row(r))?;
            sse += (u_val[r] - pred) * (u_val[r] - pred);
        }
        let val_rmse = (sse / x_val.rows().max(1) as f64).sqrt();
        table.push(SearchRecord { hyper, val_rmse });
    }
    let best = table
        .iter()
        .min_by(|a, b| a.val_rmse.partial_cmp(&b.val_rmse).unwrap())
        .expect("n_draws >= 1")
        .hyper
        .clone();
    Ok((best, table))
}

// ---------------------------------------------------------------------------
// Serialization: preorder node list with explicit tags.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
enum SerNode {
    Internal { feature: usize, threshold: f64 },
    Leaf { value: f64 },
}

fn to_preorder(node: &TreeNode, out: &mut Vec<SerNode>) {
    match node {
        TreeNode::Leaf { value } => out.push(SerNode::Leaf { value: *value }),
        TreeNode::Internal { feature, threshold, left, right } => {
            out.push(SerNode::Internal { feature: *feature, threshold: *threshold });
            to_preorder(left, out);
            to_preorder(right, out);
        }
    }
}

fn from_preorder(nodes: &mut std::slice::Iter<'_, SerNode>) -> Result<TreeNode, GbmError> {
    match nodes.next() {
        None => Err(GbmError::ModelIo("truncated preorder tree".into())),
        Some(SerNode::Leaf { value }) => Ok(TreeNode::Leaf { value: *value }),
        Some(SerNode::Internal { feature, threshold }) => {
            let left = from_preorder(nodes)?;
            let right = from_preorder(nodes)?;
            Ok(TreeNode::Internal {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbmModelFile {
    pub kind: String,
    pub dataset_hash: String,
    pub f0: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub residual_var: f64,
    pub hyper: GbmHyperParams,
    pub trees: Vec<Vec<SerNode>>,
}

impl GbmModelFile {
    pub fn from_model(model: &GbmModel, hyper: &GbmHyperParams, dataset_hash: &str) -> Self {
        let trees = model
            .trees
            .iter()
            .map(|t| {
                let mut out = Vec::new();
                to_preorder(t, &mut out);
                out
            })
            .collect();
        GbmModelFile {
            kind: "gbm".into(),
            dataset_hash: dataset_hash.into(),
            f0: model.init_value,
            learning_rate: model.learning_rate,
            n_features: model.n_features,
            residual_var: model.residual_var,
            hyper: hyper.clone(),
            trees,
        }
    }

    pub fn to_model(&self) -> Result<GbmModel, GbmError> {
        let trees = self
            .trees
            .iter()
            .map(|nodes| {
                let mut it = nodes.iter();
                let tree = from_preorder(&mut it)?;
                if it.next().is_some() {
                    return Err(GbmError::ModelIo("trailing nodes after preorder tree".into()));
                }
                Ok(tree)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GbmModel {
            init_value: self.f0,
            learning_rate: self.learning_rate,
            trees,
            n_features: self.n_features,
            residual_var: self.residual_var,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GbmError> {
        let json = serde_json::to_string(self).map_err(|e| GbmError::ModelIo(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| GbmError::ModelIo(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GbmError> {
        let json = std::fs::read_to_string(path).map_err(|e| GbmError::ModelIo(e.to_string()))?;
        let file: GbmModelFile = serde_json::from_str(&json).map_err(|e| GbmError::ModelIo(e.to_string()))?;
        if file.kind != "gbm" {
            return Err(GbmError::ModelIo(format!("expected gbm model file, found {}", file.kind)));
        }
        Ok(file)
    }
}

/// Brute-force split enumeration; test/acceptance oracle for the split
/// search. Recomputes both child SSEs from scratch for every (feature,
/// boundary) candidate.
pub fn brute_force_best_split(
    x: &Mat,
    residuals: &[f64],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &feature in features {
        let mut values: Vec<f64> = rows.iter().map(|&r| x.at(r, feature)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let mut threshold = 0.5 * (w[0] + w[1]);
            if threshold >= w[1] {
                threshold = w[0];
            }
            let left: Vec<f64> = rows
                .iter()
                .filter(|&&r| x.at(r, feature) <= threshold)
                .map(|&r| residuals[r])
                .collect();
            let right: Vec<f64> = rows
                .iter()
                .filter(|&&r| x.at(r, feature) > threshold)
                .map(|&r| residuals[r])
                .collect();
            if left.len() < min_samples_leaf || right.len() < min_samples_leaf {
                continue;
            }
            let sse = |vals: &[f64]| -> f64 {
                let m = mean(vals);
                vals.iter().map(|v| (v - m) * (v - m)).sum()
            };
            let score = sse(&left) + sse(&right);
            if best.map(|b| score < b.2).unwrap_or(true) {
                best = Some((feature, threshold, score));
            }
        }
    }
    best
}
