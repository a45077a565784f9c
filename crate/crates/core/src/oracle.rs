//! Reference computations used to check the rest of the crate: a numeric
//! minimizer of the expected squared loss on the simplex, an exhaustive
//! split search, and Monte-Carlo convergence curves for the hard and soft
//! ϑ estimators.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impurity::{midpoint, split_reduction, vartheta_vector, NodeRows, NodeStats, SplitDecision, SplitGlobals, SplitOptions};
use crate::neural::{vartheta_soft, SoftGlobals, SoftTree, DEFAULT_EPS};
use crate::rng;

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|&x| (x - shift).max(0.0)).collect()
}

/// `E‖w - ỹ‖²` when `ỹ` is one-hot with class distribution `p`.
pub fn expected_squared_loss(w: &[f64], p: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let dist: f64 = w
                .iter()
                .enumerate()
                .map(|(j, &wj)| {
                    let e = if j == k { 1.0 } else { 0.0 };
                    (wj - e) * (wj - e)
                })
                .sum();
            pk * dist
        })
        .sum()
}

fn grid_minimum(p: &[f64], steps: u32) -> f64 {
    // ‖w‖² - 2 w·p + 1, accumulated one coordinate at a time
    fn walk(p: &[f64], k: usize, remaining: u32, steps: u32, sq: f64, dot: f64, best: &mut f64) {
        let h = 1.0 / steps as f64;
        if k + 1 == p.len() {
            let w = remaining as f64 * h;
            let loss = sq + w * w - 2.0 * (dot + w * p[k]) + 1.0;
            if loss < *best {
                *best = loss;
            }
            return;
        }
        for c in 0..=remaining {
            let w = c as f64 * h;
            walk(p, k + 1, remaining - c, steps, sq + w * w, dot + w * p[k], best);
        }
    }
    let mut best = f64::INFINITY;
    walk(p, 0, steps, steps, 0.0, 0.0, &mut best);
    best
}

fn projected_gradient_minimum(p: &[f64], iterations: usize) -> f64 {
    let k = p.len();
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..iterations {
        // gradient is 2(w - p); step 1/4
        let step: Vec<f64> = w.iter().zip(p).map(|(wi, pi)| 0.5 * wi + 0.5 * pi).collect();
        w = project_simplex(&step);
    }
    expected_squared_loss(&w, p)
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("point must be a probability vector"));
    }
    Ok(())
}

/// Numeric minimum of `E‖w - ỹ‖²` over the simplex: projected gradient
/// descent from the centroid plus a 0.01 grid sweep, whichever is lower.
pub fn optimal_squared_loss_bruteforce(p: &[f64]) -> Result<f64> {
    check_simplex(p)?;
    Ok(projected_gradient_minimum(p, 200).min(grid_minimum(p, 100)))
}

/// `1 - Σ p_k²`.
pub fn closed_form_loss(p: &[f64]) -> f64 {
    1.0 - p.iter().map(|v| v * v).sum::<f64>()
}

/// Every feature and every midpoint, statistics recounted from the rows.
/// Same feasibility, acceptance and tie rules as [`crate::impurity::best_split`].
pub fn exhaustive_best_split(
    rows: &NodeRows<'_>,
    features: &[usize],
    opts: &SplitOptions,
    globals: &SplitGlobals,
) -> Option<SplitDecision> {
    let parent = rows.stats(globals);
    if parent.node_u == 0 {
        return None;
    }
    let mut ordered = features.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut best: Option<SplitDecision> = None;
    for &j in &ordered {
        let mut values: Vec<f64> = rows
            .labeled
            .iter()
            .map(|r| r.0[j])
            .chain(rows.unlabeled.iter().map(|x| x[j]))
            .collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let a = midpoint(pair[0], pair[1]);
            let side = |left: bool| -> NodeStats {
                let keep = |x: &[f64]| (x[j] <= a) == left;
                let mut counts = vec![0u64; globals.num_known];
                let mut nl = 0;
                for &(x, y) in &rows.labeled {
                    if keep(x) {
                        counts[y - 1] += 1;
                        nl += 1;
                    }
                }
                let nu = rows.unlabeled.iter().filter(|x| keep(x)).count() as u64;
                globals.stats(nl, nu, counts)
            };
            let (left, right) = (side(true), side(false));
            if !opts.feasible(globals, &left, &right) {
                continue;
            }
            let reduction = split_reduction(&parent, &left, &right).expect("children partition the parent");
            if !opts.accepts(reduction) {
                continue;
            }
            if best.as_ref().is_none_or(|b| reduction > b.reduction) {
                best = Some(SplitDecision {
                    feature: j,
                    threshold: a,
                    reduction,
                    left_stats: left,
                    right_stats: right,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub median: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub points: Vec<CurvePoint>,
}

impl ConvergenceCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "median", "q95"])?;
        for p in &self.points {
            w.write_record([p.n.to_string(), p.median.to_string(), p.q95.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("convergence curve", e))?;
        Ok(())
    }

    /// Number of consecutive grid points where the median error grows.
    pub fn inversions(&self) -> usize {
        self.points.windows(2).filter(|w| w[1].median > w[0].median).count()
    }

    /// `median(n_i) / median(n_{i+1})` for consecutive grid points.
    pub fn ratios(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[0].median / w[1].median).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_grid(n_grid: &[usize], trials: usize) -> Result<()> {
    if trials == 0 || n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_grid must be positive and strictly increasing, trials at least 1"));
    }
    Ok(())
}

fn run_curve(n_grid: &[usize], trials: usize, seed: u64, trial: impl Fn(usize, &mut rng::Rng) -> f64 + Sync) -> Result<ConvergenceCurve> {
    check_grid(n_grid, trials)?;
    let points = n_grid
        .iter()
        .enumerate()
        .map(|(gi, &n)| {
            let base = rng::derive_seed(seed, gi as u64);
            let mut errors: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|t| trial(n, &mut rng::stream(base, t as u64)))
                .collect();
            errors.sort_by(f64::total_cmp);
            CurvePoint {
                n,
                median: quantile(&errors, 0.5),
                q95: quantile(&errors, 0.95),
            }
        })
        .collect();
    Ok(ConvergenceCurve { points })
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    fn overlap_volume(&self, other: &Region) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .map(|((a0, a1), (b0, b1))| (a1.min(*b1) - a0.max(*b0)).max(0.0))
            .product()
    }

    fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).max(0.0)).product()
    }

    fn sample(&self, rng: &mut rng::Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| rng.random_range(l..=h)).collect()
    }
}

/// Known classes spread uniformly (and equiprobably) over `known_support`;
/// the augmented class uniform over `augmented_support`; unlabeled data is
/// the θ-mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPopulation {
    pub num_known: usize,
    pub theta: f64,
    pub known_support: Region,
    pub augmented_support: Region,
}

impl BoxPopulation {
    /// Known classes on the unit square, augmented on its right half,
    /// θ = 1/3. The right half then holds 2/3 of the unlabeled mass and
    /// half of it is augmented.
    pub fn reference() -> Self {
        Self {
            num_known: 2,
            theta: 1.0 / 3.0,
            known_support: Region {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0],
            },
            augmented_support: Region {
                lo: vec![0.5, 0.0],
                hi: vec![1.0, 1.0],
            },
        }
    }

    fn known_mass(&self, region: &Region) -> f64 {
        region.overlap_volume(&self.known_support) / self.known_support.volume()
    }

    fn augmented_mass(&self, region: &Region) -> f64 {
        region.overlap_volume(&self.augmented_support) / self.augmented_support.volume()
    }

    /// Unlabeled probability mass of `region`.
    pub fn unlabeled_mass(&self, region: &Region) -> f64 {
        self.theta * self.augmented_mass(region) + (1.0 - self.theta) * self.known_mass(region)
    }

    /// `Pr[y = κ+1 | x ∈ region]` under the unlabeled mixture.
    pub fn augmented_posterior(&self, region: &Region) -> f64 {
        let mass = self.unlabeled_mass(region);
        if mass == 0.0 {
            0.0
        } else {
            self.theta * self.augmented_mass(region) / mass
        }
    }

    /// Node statistics of `region` for `n` labeled and `n` unlabeled draws.
    pub fn sample_region_stats(&self, region: &Region, n: usize, rng: &mut rng::Rng) -> NodeStats {
        let mut counts = vec![0u64; self.num_known];
        let mut node_l = 0;
        for _ in 0..n {
            let x = self.known_support.sample(rng);
            let y = rng.random_range(0..self.num_known);
            if region.contains(&x) {
                counts[y] += 1;
                node_l += 1;
            }
        }
        let mut node_u = 0;
        for _ in 0..n {
            let x = if rng.random::<f64>() < self.theta {
                self.augmented_support.sample(rng)
            } else {
                self.known_support.sample(rng)
            };
            if region.contains(&x) {
                node_u += 1;
            }
        }
        NodeStats {
            n_l: n as u64,
            n_u: n as u64,
            node_l,
            node_u,
            class_counts: counts,
            theta: self.theta,
        }
    }
}

/// `|ϑ̂_aug(region) - Pr[y = κ+1 | region]|` over Monte-Carlo trials with
/// `n` labeled and `n` unlabeled draws.
pub fn vartheta_convergence_experiment(
    population: &BoxPopulation,
    region: &Region,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConvergenceCurve> {
    let truth = population.augmented_posterior(region);
    run_curve(n_grid, trials, seed, |n, rng| {
        let stats = population.sample_region_stats(region, n, rng);
        (vartheta_vector(&stats).augmented() - truth).abs()
    })
}

/// Finite population of atoms. Known atoms carry a class; sampling picks
/// atoms by weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomPopulation {
    pub num_known: usize,
    pub theta: f64,
    /// `(x, class, weight)` with 1-based class.
    pub known: Vec<(Vec<f64>, usize, f64)>,
    /// `(x, weight)`.
    pub augmented: Vec<(Vec<f64>, f64)>,
}

impl AtomPopulation {
    /// Five atoms on a line: class 1 at 0.1 and 0.3, class 2 at 0.5 and
    /// 0.7, augmented at 0.7 and 0.9, θ = 0.3.
    pub fn reference() -> Self {
        Self {
            num_known: 2,
            theta: 0.3,
            known: vec![
                (vec![0.1], 1, 0.25),
                (vec![0.3], 1, 0.25),
                (vec![0.5], 2, 0.25),
                (vec![0.7], 2, 0.25),
            ],
            augmented: vec![(vec![0.7], 0.5), (vec![0.9], 0.5)],
        }
    }

    fn normalized(weights: impl Iterator<Item = f64>) -> Vec<f64> {
        let w: Vec<f64> = weights.collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    /// Population ϑ of a leaf: the limit of the soft estimator as both
    /// sample sizes grow.
    pub fn true_vartheta(&self, tree: &SoftTree, leaf: usize) -> Vec<f64> {
        let kw = Self::normalized(self.known.iter().map(|a| a.2));
        let aw = Self::normalized(self.augmented.iter().map(|a| a.1));
        let mut class_mass = vec![0.0; self.num_known];
        for (a, w) in self.known.iter().zip(&kw) {
            class_mass[a.1 - 1] += (1.0 - self.theta) * w * tree.route(&a.0)[leaf];
        }
        let aug: f64 = self.augmented.iter().zip(&aw).map(|(a, w)| self.theta * w * tree.route(&a.0)[leaf]).sum();
        let total = aug + class_mass.iter().sum::<f64>();
        let mut out: Vec<f64> = class_mass.iter().map(|m| m / total).collect();
        out.push(aug / total);
        out
    }

    /// Largest component error of the soft ϑ of `leaf` for one sample of
    /// `n` labeled and `n` unlabeled draws.
    pub fn sample_error(&self, tree: &SoftTree, leaf: usize, n: usize, rng: &mut rng::Rng) -> f64 {
        let known_idx = WeightedIndex::new(self.known.iter().map(|a| a.2)).expect("known weights");
        let aug_idx = WeightedIndex::new(self.augmented.iter().map(|a| a.1)).expect("augmented weights");
        let mu_known: Vec<f64> = self.known.iter().map(|a| tree.route(&a.0)[leaf]).collect();
        let mu_aug: Vec<f64> = self.augmented.iter().map(|a| tree.route(&a.0)[leaf]).collect();
        let mut class_mass = vec![0.0; self.num_known];
        let mut leaf_l = 0.0;
        for _ in 0..n {
            let i = known_idx.sample(rng);
            class_mass[self.known[i].1 - 1] += mu_known[i];
            leaf_l += mu_known[i];
        }
        let mut leaf_u = 0.0;
        for _ in 0..n {
            leaf_u += if rng.random::<f64>() < self.theta {
                mu_aug[aug_idx.sample(rng)]
            } else {
                mu_known[known_idx.sample(rng)]
            };
        }
        let g = SoftGlobals {
            n_l: n as f64,
            n_u: n as f64,
            theta: self.theta,
            eps: DEFAULT_EPS,
        };
        let est = vartheta_soft(leaf_l, leaf_u, &class_mass, &g);
        est.iter()
            .zip(self.true_vartheta(tree, leaf))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Depth-3 tree on one input with soft thresholds at 0.6, then 0.4 and
/// 0.8, and routing slope `sharpness`. Leaf 0 sees only class-1 atoms.
pub fn reference_soft_tree(sharpness: f64) -> SoftTree {
    SoftTree {
        depth: 3,
        input_dim: 1,
        weight: vec![-sharpness; 3],
        bias: vec![0.6 * sharpness, 0.4 * sharpness, 0.8 * sharpness],
    }
}

/// Soft counterpart of [`vartheta_convergence_experiment`] for a frozen
/// tree and one of its leaves.
pub fn soft_vartheta_convergence_experiment(
    population: &AtomPopulation,
    tree: &SoftTree,
    leaf: usize,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConvergenceCurve> {
    if leaf >= tree.num_leaves() {
        return Err(Error::invalid("leaf index out of range"));
    }
    run_curve(n_grid, trials, seed, |n, rng| population.sample_error(tree, leaf, n, rng))
}
