//! Augmented Gini impurity and the constrained split search.
//!
//! A node's statistics are its labeled and unlabeled counts together with
//! the global sample sizes and the mixture proportion θ. From them we
//! estimate the class-probability vector ϑ over the κ known classes plus
//! the augmented class: the augmented component compares the share of
//! unlabeled mass in the node with the share of labeled mass,
//!
//! ```text
//! ϑ_aug = 1[n_node_u > 0] · (1 − (1−θ)·n_u·n_node_l / (n_l·max(1, n_node_u)))_+
//! ϑ_k   = (1 − ϑ_aug) · count_k / max(1, n_node_l)
//! G     = 1 − Σ ϑ²
//! ```
//!
//! Splits are scored by the drop in `G`, with children weighted by their
//! share of the node's *unlabeled* instances, and are only feasible when
//! both children keep at least `γ·n_l` labeled and `γ·n_u` unlabeled rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sufficient statistics of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Total labeled sample size.
    pub n_l: u64,
    /// Total unlabeled sample size.
    pub n_u: u64,
    /// Labeled rows inside the node.
    pub node_l: u64,
    /// Unlabeled rows inside the node.
    pub node_u: u64,
    /// Labeled rows per known class inside the node (length κ).
    pub class_counts: Vec<u64>,
    pub theta: f64,
}

impl NodeStats {
    pub fn num_known(&self) -> usize {
        self.class_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_l > self.n_l || self.node_u > self.n_u {
            return Err(Error::invalid("node counts exceed totals"));
        }
        if self.class_counts.iter().sum::<u64>() != self.node_l {
            return Err(Error::invalid("class counts do not sum to the labeled node count"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::invalid("theta outside [0, 1]"));
        }
        Ok(())
    }
}

/// Probability estimates over κ+1 classes; the last entry is the augmented class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThetaVector(pub Vec<f64>);

impl ThetaVector {
    pub fn augmented(&self) -> f64 {
        *self.0.last().expect("theta vector is never empty")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn augmented_estimate(n_l: u64, n_u: u64, node_l: u64, node_u: u64, theta: f64) -> f64 {
    if node_u == 0 {
        return 0.0;
    }
    // n_l = 0 only arises for degenerate inputs; keep the ratio finite.
    let ratio = (1.0 - theta) * n_u as f64 * node_l as f64 / (n_l.max(1) as f64 * node_u as f64);
    (1.0 - ratio).max(0.0)
}

pub fn vartheta_augmented(stats: &NodeStats) -> f64 {
    augmented_estimate(stats.n_l, stats.n_u, stats.node_l, stats.node_u, stats.theta)
}

pub fn vartheta_vector(stats: &NodeStats) -> ThetaVector {
    let aug = vartheta_augmented(stats);
    let denom = stats.node_l.max(1) as f64;
    let mut v: Vec<f64> = stats
        .class_counts
        .iter()
        .map(|&c| (1.0 - aug) * c as f64 / denom)
        .collect();
    v.push(aug);
    ThetaVector(v)
}

/// `1 − Σ p²`.
pub fn gini_from_probabilities(p: &[f64]) -> f64 {
    1.0 - p.iter().map(|x| x * x).sum::<f64>()
}

pub fn augmented_gini(stats: &NodeStats) -> f64 {
    gini_from_probabilities(vartheta_vector(stats).as_slice())
}

/// Plain Gini impurity of a count vector; 0 for an empty node.
pub fn standard_gini(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn weighted_drop(g_parent: f64, parent_w: u64, g_left: f64, left_w: u64, g_right: f64, right_w: u64) -> f64 {
    let p = parent_w as f64;
    g_parent - (left_w as f64 / p) * g_left - (right_w as f64 / p) * g_right
}

/// Drop in augmented Gini impurity, children weighted by unlabeled share.
pub fn split_reduction(parent: &NodeStats, left: &NodeStats, right: &NodeStats) -> Result<f64> {
    if parent.node_u == 0 {
        return Err(Error::invalid("split reduction undefined for a node without unlabeled rows"));
    }
    let partitions = left.node_l + right.node_l == parent.node_l
        && left.node_u + right.node_u == parent.node_u
        && left.class_counts.len() == parent.class_counts.len()
        && right.class_counts.len() == parent.class_counts.len()
        && parent
            .class_counts
            .iter()
            .zip(left.class_counts.iter().zip(&right.class_counts))
            .all(|(&p, (&l, &r))| l + r == p);
    if !partitions {
        return Err(Error::invalid("child statistics do not partition the parent"));
    }
    Ok(weighted_drop(
        augmented_gini(parent),
        parent.node_u,
        augmented_gini(left),
        left.node_u,
        augmented_gini(right),
        right.node_u,
    ))
}

/// Dataset-wide quantities every node shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitGlobals {
    pub n_l: u64,
    pub n_u: u64,
    pub theta: f64,
    pub num_known: usize,
}

impl SplitGlobals {
    pub fn stats(&self, node_l: u64, node_u: u64, class_counts: Vec<u64>) -> NodeStats {
        NodeStats {
            n_l: self.n_l,
            n_u: self.n_u,
            node_l,
            node_u,
            class_counts,
            theta: self.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub gamma: f64,
    /// When set, candidates must reduce impurity by strictly more than this.
    pub min_reduction: Option<f64>,
}

impl SplitOptions {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            min_reduction: None,
        }
    }

    pub fn feasible(&self, globals: &SplitGlobals, left: &NodeStats, right: &NodeStats) -> bool {
        let min_l = self.gamma * globals.n_l as f64;
        let min_u = self.gamma * globals.n_u as f64;
        left.node_l.min(right.node_l) as f64 >= min_l && left.node_u.min(right.node_u) as f64 >= min_u
    }

    pub fn accepts(&self, reduction: f64) -> bool {
        self.min_reduction.is_none_or(|m| reduction > m)
    }
}

/// Rows that fall in one node. Labels are 1-based known classes.
#[derive(Debug, Clone, Default)]
pub struct NodeRows<'a> {
    pub labeled: Vec<(&'a [f64], usize)>,
    pub unlabeled: Vec<&'a [f64]>,
}

impl NodeRows<'_> {
    pub fn stats(&self, globals: &SplitGlobals) -> NodeStats {
        let mut counts = vec![0u64; globals.num_known];
        for &(_, y) in &self.labeled {
            counts[y - 1] += 1;
        }
        globals.stats(self.labeled.len() as u64, self.unlabeled.len() as u64, counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub feature: usize,
    pub threshold: f64,
    pub reduction: f64,
    pub left_stats: NodeStats,
    pub right_stats: NodeStats,
}

/// Threshold strictly separating `lo < hi`: their midpoint, or `lo` when
/// the midpoint rounds up to `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

#[derive(Clone, Copy)]
enum RowKind {
    Labeled(usize),
    Unlabeled,
}

/// Best feasible `(feature, threshold)` over `features`, by a single sorted
/// sweep per feature. Ties go to the lower feature index, then the lower
/// threshold. `None` when no candidate is feasible.
pub fn best_split(
    rows: &NodeRows<'_>,
    features: &[usize],
    opts: &SplitOptions,
    globals: &SplitGlobals,
) -> Option<SplitDecision> {
    let parent = rows.stats(globals);
    if parent.node_u == 0 {
        return None;
    }
    let g_parent = augmented_gini(&parent);
    let mut ordered: Vec<usize> = features.to_vec();
    ordered.sort_unstable();
    ordered.dedup();

    let mut best: Option<SplitDecision> = None;
    let mut column: Vec<(f64, RowKind)> = Vec::with_capacity(rows.labeled.len() + rows.unlabeled.len());
    for &j in &ordered {
        column.clear();
        column.extend(rows.labeled.iter().map(|&(x, y)| (x[j], RowKind::Labeled(y - 1))));
        column.extend(rows.unlabeled.iter().map(|&x| (x[j], RowKind::Unlabeled)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_counts = vec![0u64; globals.num_known];
        let (mut left_l, mut left_u) = (0u64, 0u64);
        let mut i = 0;
        while i < column.len() {
            let v = column[i].0;
            while i < column.len() && column[i].0 == v {
                match column[i].1 {
                    RowKind::Labeled(k) => {
                        left_counts[k] += 1;
                        left_l += 1;
                    }
                    RowKind::Unlabeled => left_u += 1,
                }
                i += 1;
            }
            if i == column.len() {
                break;
            }
            let right_counts: Vec<u64> = parent
                .class_counts
                .iter()
                .zip(&left_counts)
                .map(|(p, l)| p - l)
                .collect();
            let left = globals.stats(left_l, left_u, left_counts.clone());
            let right = globals.stats(parent.node_l - left_l, parent.node_u - left_u, right_counts);
            if !opts.feasible(globals, &left, &right) {
                continue;
            }
            let reduction = weighted_drop(
                g_parent,
                parent.node_u,
                augmented_gini(&left),
                left.node_u,
                augmented_gini(&right),
                right.node_u,
            );
            if !opts.accepts(reduction) {
                continue;
            }
            if best.as_ref().is_none_or(|b| reduction > b.reduction) {
                best = Some(SplitDecision {
                    feature: j,
                    threshold: midpoint(v, column[i].0),
                    reduction,
                    left_stats: left,
                    right_stats: right,
                });
            }
        }
    }
    best
}

/// Result of a plain-Gini split search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GiniSplit {
    pub feature: usize,
    pub threshold: f64,
    pub reduction: f64,
}

/// Best plain-Gini split over `features` for rows labeled `1..=num_classes`,
/// children weighted by row share. Only strictly positive reductions count.
pub fn best_gini_split(rows: &[(&[f64], usize)], features: &[usize], num_classes: usize) -> Option<GiniSplit> {
    let mut parent_counts = vec![0u64; num_classes];
    for &(_, y) in rows {
        parent_counts[y - 1] += 1;
    }
    let n = rows.len() as u64;
    let g_parent = standard_gini(&parent_counts);
    let mut ordered: Vec<usize> = features.to_vec();
    ordered.sort_unstable();
    ordered.dedup();

    let mut best: Option<GiniSplit> = None;
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for &j in &ordered {
        column.clear();
        column.extend(rows.iter().map(|&(x, y)| (x[j], y - 1)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = vec![0u64; num_classes];
        let mut left_n = 0u64;
        let mut i = 0;
        while i < column.len() {
            let v = column[i].0;
            while i < column.len() && column[i].0 == v {
                left[column[i].1] += 1;
                left_n += 1;
                i += 1;
            }
            if i == column.len() {
                break;
            }
            let right: Vec<u64> = parent_counts.iter().zip(&left).map(|(p, l)| p - l).collect();
            let reduction = weighted_drop(
                g_parent,
                n,
                standard_gini(&left),
                left_n,
                standard_gini(&right),
                n - left_n,
            );
            if reduction > 0.0 && best.is_none_or(|b| reduction > b.reduction) {
                best = Some(GiniSplit {
                    feature: j,
                    threshold: midpoint(v, column[i].0),
                    reduction,
                });
            }
        }
    }
    best
}
