//! Two-step augmented-class forest.
//!
//! Step I grows `m` shallow exploration trees on labeled plus unlabeled data
//! with the augmented Gini criterion under the γ node-mass constraints.
//! Their averaged augmented score ranks the unlabeled pool; the top
//! `⌊θ·n_u⌋` instances receive the augmented label. Step II keeps splitting
//! every exploration leaf with plain Gini over labeled plus pseudo-labeled
//! rows until leaves are pure, and prediction sums the refined trees' leaf
//! class distributions.
//!
//! Tree `i` draws from seed streams `2i` (Step I) and `2i + 1` (Step II) of
//! the master seed, so training is reproducible under any thread count.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, LabeledSet, Manifest, UnlabeledSet};
use crate::error::{Error, Result};
use crate::impurity::{best_gini_split, best_split, vartheta_vector, NodeRows, SplitGlobals, SplitOptions};
use crate::rng;

pub const MODEL_VERSION: u32 = 1;
pub const LACFOREST_MODEL_TYPE: &str = "lacforest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    /// `theta` is the exploration estimate over κ+1 classes; `dist` the
    /// refined empirical distribution (empty on exploration trees).
    Leaf { theta: Vec<f64>, dist: Vec<f64> },
}

impl TreeNode {
    pub fn leaf(&self, x: &[f64]) -> (&[f64], &[f64]) {
        let mut node = self;
        loop {
            match node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
                TreeNode::Leaf { theta, dist } => return (theta, dist),
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => left.num_leaves() + right.num_leaves(),
            TreeNode::Leaf { .. } => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    /// Root-to-leaf paths as `(feature, threshold, went_left)` steps.
    pub fn leaf_paths(&self) -> Vec<Vec<(usize, f64, bool)>> {
        fn walk(node: &TreeNode, prefix: &mut Vec<(usize, f64, bool)>, out: &mut Vec<Vec<(usize, f64, bool)>>) {
            match node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    prefix.push((*feature, *threshold, true));
                    walk(left, prefix, out);
                    prefix.pop();
                    prefix.push((*feature, *threshold, false));
                    walk(right, prefix, out);
                    prefix.pop();
                }
                TreeNode::Leaf { .. } => out.push(prefix.clone()),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }
}

/// ϑ_aug of the leaf containing `x`.
pub fn tree_augmented_score(tree: &TreeNode, x: &[f64]) -> f64 {
    let (theta, _) = tree.leaf(x);
    theta.last().copied().unwrap_or(0.0)
}

/// Mean of [`tree_augmented_score`] over the exploration trees.
pub fn forest_augmented_score(trees: &[TreeNode], x: &[f64]) -> f64 {
    if trees.is_empty() {
        return 0.0;
    }
    trees.iter().map(|t| tree_augmented_score(t, x)).sum::<f64>() / trees.len() as f64
}

/// `max(1, ⌊√d⌋)`.
pub fn default_tau(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

/// `⌊θ·n_u⌋`, absorbing representation error in θ (0.29·100 is 28.999…).
pub fn pseudo_label_count(theta: f64, n_u: usize) -> usize {
    ((theta * n_u as f64 + 1e-9).floor() as usize).min(n_u)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    /// Indices into the unlabeled set, ascending.
    pub indices: Vec<usize>,
}

/// Marks the `⌊θ·n_u⌋` highest-scoring unlabeled instances as augmented;
/// equal scores keep the lower index.
pub fn pseudo_label(exploration_trees: &[TreeNode], unlabeled: &UnlabeledSet, theta: f64) -> PseudoLabeledSet {
    let scores: Vec<f64> = unlabeled
        .features
        .par_iter()
        .map(|x| forest_augmented_score(exploration_trees, x))
        .collect();
    select_top(&scores, pseudo_label_count(theta, unlabeled.len()))
}

pub(crate) fn select_top(scores: &[f64], n: usize) -> PseudoLabeledSet {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut indices = order[..n].to_vec();
    indices.sort_unstable();
    PseudoLabeledSet { indices }
}

fn sample_features(d: usize, tau: usize, rng: &mut rng::Rng) -> Vec<usize> {
    index::sample(rng, d, tau).into_vec()
}

fn split_rows<'a, T: Copy>(rows: &[T], x_of: impl Fn(T) -> &'a [f64], feature: usize, threshold: f64) -> (Vec<T>, Vec<T>) {
    rows.iter().partition(|&&r| x_of(r)[feature] <= threshold)
}

/// Grows one Step-I tree. Splits whenever a feasible split exists among a
/// fresh random `tau`-subset of features; leaves carry the node's ϑ vector.
pub fn grow_exploration_tree(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    theta: f64,
    opts: &SplitOptions,
    tau: usize,
    rng: &mut rng::Rng,
) -> TreeNode {
    let globals = SplitGlobals {
        n_l: labeled.len() as u64,
        n_u: unlabeled.len() as u64,
        theta,
        num_known: labeled.num_classes,
    };
    let d = labeled.dim().max(unlabeled.dim());
    let rows = NodeRows {
        labeled: labeled
            .features
            .iter()
            .zip(&labeled.labels)
            .map(|(x, &y)| (x.as_slice(), y))
            .collect(),
        unlabeled: unlabeled.features.iter().map(Vec::as_slice).collect(),
    };
    grow_exploration(rows, &globals, opts, d, tau.clamp(1, d.max(1)), rng)
}

fn grow_exploration(
    rows: NodeRows<'_>,
    globals: &SplitGlobals,
    opts: &SplitOptions,
    d: usize,
    tau: usize,
    rng: &mut rng::Rng,
) -> TreeNode {
    let features = sample_features(d, tau, rng);
    match best_split(&rows, &features, opts, globals) {
        Some(decision) => {
            let (f, a) = (decision.feature, decision.threshold);
            let (ll, rl) = split_rows(&rows.labeled, |r| r.0, f, a);
            let (lu, ru) = split_rows(&rows.unlabeled, |r| r, f, a);
            let left = grow_exploration(NodeRows { labeled: ll, unlabeled: lu }, globals, opts, d, tau, rng);
            let right = grow_exploration(NodeRows { labeled: rl, unlabeled: ru }, globals, opts, d, tau, rng);
            TreeNode::Internal {
                feature: f,
                threshold: a,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
        None => TreeNode::Leaf {
            theta: vartheta_vector(&rows.stats(globals)).0,
            dist: Vec::new(),
        },
    }
}

/// Continues every leaf of `exploration` with plain-Gini splits over
/// `rows` (labels `1..=num_classes`, pseudo-labeled rows included).
pub fn refine_tree(
    exploration: &TreeNode,
    rows: &[(&[f64], usize)],
    num_classes: usize,
    dim: usize,
    tau: usize,
    rng: &mut rng::Rng,
) -> TreeNode {
    match exploration {
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            let (lr, rr) = split_rows(rows, |r| r.0, *feature, *threshold);
            let left = refine_tree(left, &lr, num_classes, dim, tau, rng);
            let right = refine_tree(right, &rr, num_classes, dim, tau, rng);
            TreeNode::Internal {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
        TreeNode::Leaf { theta, .. } => grow_gini(rows, theta, num_classes, dim, tau.clamp(1, dim.max(1)), rng),
    }
}

fn class_distribution(rows: &[(&[f64], usize)], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &(_, y) in rows {
        counts[y - 1] += 1.0;
    }
    let total = (rows.len() as f64).max(1.0);
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

fn grow_gini(
    rows: &[(&[f64], usize)],
    theta: &[f64],
    num_classes: usize,
    dim: usize,
    tau: usize,
    rng: &mut rng::Rng,
) -> TreeNode {
    let leaf = || TreeNode::Leaf {
        theta: theta.to_vec(),
        dist: class_distribution(rows, num_classes),
    };
    if rows.len() < 2 {
        return leaf();
    }
    let first = rows[0];
    if rows.iter().all(|r| r.1 == first.1) || rows.iter().all(|r| r.0 == first.0) {
        return leaf();
    }
    let features = sample_features(dim, tau, rng);
    // A τ-subset without any useful feature falls back to all features.
    let split = best_gini_split(rows, &features, num_classes).or_else(|| {
        if tau < dim {
            let all: Vec<usize> = (0..dim).collect();
            best_gini_split(rows, &all, num_classes)
        } else {
            None
        }
    });
    let Some(split) = split else {
        return leaf();
    };
    let (lr, rr) = split_rows(rows, |r| r.0, split.feature, split.threshold);
    let left = grow_gini(&lr, theta, num_classes, dim, tau, rng);
    let right = grow_gini(&rr, theta, num_classes, dim, tau, rng);
    TreeNode::Internal {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub m: usize,
    /// Features tried per node; `None` means `⌊√d⌋`.
    pub tau: Option<usize>,
    pub gamma: f64,
    pub theta: f64,
    pub seed: u64,
    #[serde(default)]
    pub min_reduction: Option<f64>,
}

impl ForestParams {
    pub fn new(theta: f64) -> Self {
        Self {
            m: 100,
            tau: None,
            gamma: 0.01,
            theta,
            seed: 0,
            min_reduction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LACForestModel {
    pub model_type: String,
    pub version: u32,
    #[serde(rename = "kappa")]
    pub num_known: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    pub theta: f64,
    pub gamma: f64,
    pub tau: usize,
    pub m: usize,
    pub seed: u64,
    pub min_reduction: Option<f64>,
    pub manifest: Option<Manifest>,
    pub exploration_trees: Vec<TreeNode>,
    pub refined_trees: Vec<TreeNode>,
}

fn check_training_inputs(labeled: &LabeledSet, unlabeled: &UnlabeledSet) -> Result<usize> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled set".into()));
    }
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled set".into()));
    }
    let d = labeled.dim();
    if unlabeled.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: unlabeled.dim(),
        });
    }
    Ok(d)
}

pub fn train_lacforest(labeled: &LabeledSet, unlabeled: &UnlabeledSet, params: &ForestParams) -> Result<LACForestModel> {
    let d = check_training_inputs(labeled, unlabeled)?;
    if params.m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    if !(params.theta > 0.0 && params.theta < 1.0) {
        return Err(Error::invalid("theta must lie in (0, 1)"));
    }
    if !(params.gamma > 0.0 && params.gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1)"));
    }
    let tau = params.tau.unwrap_or_else(|| default_tau(d));
    if tau == 0 || tau > d {
        return Err(Error::invalid(format!("tau must lie in 1..={d}")));
    }
    let opts = SplitOptions {
        gamma: params.gamma,
        min_reduction: params.min_reduction,
    };

    let exploration_trees: Vec<TreeNode> = (0..params.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(params.seed, 2 * i as u64);
            grow_exploration_tree(labeled, unlabeled, params.theta, &opts, tau, &mut rng)
        })
        .collect();

    let pseudo = pseudo_label(&exploration_trees, unlabeled, params.theta);
    let kappa = labeled.num_classes;
    let rows: Vec<(&[f64], usize)> = labeled
        .features
        .iter()
        .zip(&labeled.labels)
        .map(|(x, &y)| (x.as_slice(), y))
        .chain(pseudo.indices.iter().map(|&i| (unlabeled.features[i].as_slice(), kappa + 1)))
        .collect();

    let refined_trees: Vec<TreeNode> = exploration_trees
        .par_iter()
        .enumerate()
        .map(|(i, tree)| {
            let mut rng = rng::stream(params.seed, 2 * i as u64 + 1);
            refine_tree(tree, &rows, kappa + 1, d, tau, &mut rng)
        })
        .collect();

    Ok(LACForestModel {
        model_type: LACFOREST_MODEL_TYPE.into(),
        version: MODEL_VERSION,
        num_known: kappa,
        dim: d,
        theta: params.theta,
        gamma: params.gamma,
        tau,
        m: params.m,
        seed: params.seed,
        min_reduction: params.min_reduction,
        manifest: None,
        exploration_trees,
        refined_trees,
    })
}

/// Index of the largest score; the first one wins ties.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl LACForestModel {
    pub fn num_classes(&self) -> usize {
        self.num_known + 1
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Σ_i T_{i,k}(x)` over the refined trees.
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut scores = vec![0.0; self.num_classes()];
        for tree in &self.refined_trees {
            let (_, dist) = tree.leaf(x);
            for (s, p) in scores.iter_mut().zip(dist) {
                *s += p;
            }
        }
        Ok(scores)
    }

    /// 1-based label in `1..=κ+1`.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_scores(x)?) + 1)
    }

    /// Averaged exploration score, used for detection ranking.
    pub fn augmented_score(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(forest_augmented_score(&self.exploration_trees, x))
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn augmented_scores(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.augmented_score(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.model_type != LACFOREST_MODEL_TYPE {
            return Err(Error::invalid(format!("not a {LACFOREST_MODEL_TYPE} model: {}", model.model_type)));
        }
        if model.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", model.version)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Plain-Gini forest trained on labeled data only. It can never output
/// the augmented class, which makes it the contrast baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniForest {
    pub num_known: usize,
    pub dim: usize,
    pub trees: Vec<TreeNode>,
}

pub fn train_gini_forest(labeled: &LabeledSet, m: usize, tau: Option<usize>, seed: u64) -> Result<GiniForest> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled set".into()));
    }
    let d = labeled.dim();
    let tau = tau.unwrap_or_else(|| default_tau(d)).clamp(1, d);
    let rows: Vec<(&[f64], usize)> = labeled
        .features
        .iter()
        .zip(&labeled.labels)
        .map(|(x, &y)| (x.as_slice(), y))
        .collect();
    let root_theta = vec![0.0; labeled.num_classes + 1];
    let trees = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, 2 * i as u64 + 1);
            grow_gini(&rows, &root_theta, labeled.num_classes, d, tau, &mut rng)
        })
        .collect();
    Ok(GiniForest {
        num_known: labeled.num_classes,
        dim: d,
        trees,
    })
}

impl GiniForest {
    /// Scores over κ+1 classes; the augmented entry is always 0.
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut scores = vec![0.0; self.num_known + 1];
        for tree in &self.trees {
            for (s, p) in scores.iter_mut().zip(tree.leaf(x).1) {
                *s += p;
            }
        }
        Ok(scores)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_scores(x)?) + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(theta: Vec<f64>, dist: Vec<f64>) -> TreeNode {
        TreeNode::Leaf { theta, dist }
    }

    #[test]
    fn single_leaf_scores_everywhere() {
        let t = leaf(vec![0.7, 0.3], vec![]);
        for x in [[0.0], [0.5], [1.0]] {
            assert_eq!(tree_augmented_score(&t, &x), 0.3);
        }
        let trees = vec![leaf(vec![0.8, 0.2], vec![]), leaf(vec![0.4, 0.6], vec![])];
        assert!((forest_augmented_score(&trees, &[0.1]) - 0.4).abs() < 1e-15);
        assert_eq!(forest_augmented_score(&[t.clone(), t], &[0.9]), 0.3);
    }

    #[test]
    fn threshold_value_routes_left() {
        let t = TreeNode::Internal {
            feature: 0,
            threshold: 0.5,
            left: Box::new(leaf(vec![1.0, 0.0], vec![])),
            right: Box::new(leaf(vec![0.0, 1.0], vec![])),
        };
        assert_eq!(tree_augmented_score(&t, &[0.5]), 0.0);
        assert_eq!(tree_augmented_score(&t, &[0.5000001]), 1.0);
    }

    #[test]
    fn pseudo_label_examples() {
        let sel = select_top(&[0.9, 0.1, 0.8, 0.2], pseudo_label_count(0.5, 4));
        assert_eq!(sel.indices, vec![0, 2]);
        let sel = select_top(&[0.5; 6], pseudo_label_count(0.5, 6));
        assert_eq!(sel.indices, vec![0, 1, 2]);
        assert_eq!(pseudo_label_count(0.3, 3), 0);
        assert_eq!(pseudo_label_count(0.29, 100), 29);
        let u = UnlabeledSet::new(vec![vec![0.0]; 3]).unwrap();
        assert!(pseudo_label(&[leaf(vec![0.5, 0.5], vec![])], &u, 0.2).indices.is_empty());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn homogeneous_leaf_is_kept() {
        let xs = [vec![0.1], vec![0.2], vec![0.9]];
        let rows: Vec<(&[f64], usize)> = xs.iter().map(|x| (x.as_slice(), 2)).collect();
        let mut rng = rng::from_seed(0);
        let t = refine_tree(&leaf(vec![0.2, 0.7, 0.1], vec![]), &rows, 3, 1, 1, &mut rng);
        assert_eq!(t, leaf(vec![0.2, 0.7, 0.1], vec![0.0, 1.0, 0.0]));
    }

    #[test]
    fn empty_leaf_gets_zero_distribution() {
        let mut rng = rng::from_seed(0);
        let t = refine_tree(&leaf(vec![0.0, 1.0], vec![]), &[], 2, 1, 1, &mut rng);
        assert_eq!(t, leaf(vec![0.0, 1.0], vec![0.0, 0.0]));
    }

    #[test]
    fn duplicate_conflicting_rows_terminate() {
        let x = vec![0.4, 0.4];
        let rows: Vec<(&[f64], usize)> = vec![(&x, 1), (&x, 2), (&x, 1)];
        let mut rng = rng::from_seed(0);
        let t = refine_tree(&leaf(vec![0.0; 3], vec![]), &rows, 3, 2, 1, &mut rng);
        match t {
            TreeNode::Leaf { dist, .. } => {
                assert!((dist[0] - 2.0 / 3.0).abs() < 1e-15);
                assert!((dist[1] - 1.0 / 3.0).abs() < 1e-15);
            }
            _ => panic!("expected a leaf"),
        }
    }

    #[test]
    fn model_prediction_conventions() {
        let model = LACForestModel {
            model_type: LACFOREST_MODEL_TYPE.into(),
            version: MODEL_VERSION,
            num_known: 2,
            dim: 1,
            theta: 0.5,
            gamma: 0.01,
            tau: 1,
            m: 1,
            seed: 0,
            min_reduction: None,
            manifest: None,
            exploration_trees: vec![leaf(vec![0.0, 0.0, 1.0], vec![])],
            refined_trees: vec![leaf(vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0])],
        };
        assert_eq!(model.predict(&[0.3]).unwrap(), 2);
        assert!(matches!(model.predict(&[0.3, 0.1]), Err(Error::Dimension { .. })));
        let mut zero = model.clone();
        zero.refined_trees = vec![leaf(vec![0.0; 3], vec![0.0; 3])];
        assert_eq!(zero.predict(&[0.3]).unwrap(), 1);
        let back = LACForestModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
