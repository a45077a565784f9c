//! Soft-routing trees over a small encoder, trained with the soft augmented
//! Gini loss plus an auxiliary cross-entropy head.
//!
//! Trees use heap layout: internal node `i` has children `2i+1` (left) and
//! `2i+2` (right). A depth-`l` tree has `t = 2^(l-1) - 1` internal nodes and
//! `t + 1` leaves stored at nodes `t..=2t`. Internal node `i` sends an
//! encoded input left with probability `f_i = sigmoid(w_i·h + b_i)`.
//!
//! Per leaf `B`, over a labeled batch of size `n_l` and unlabeled batch of
//! size `n_u`, with soft counts `n_{B,l}`, `n_{B,u}` and class masses `s_k`:
//!
//! ```text
//! ϑ_aug = (1 - (1-θ)·n_u·n_{B,l} / (n_l·max(ε, n_{B,u})))_+
//! ϑ_k   = (1 - ϑ_aug)·s_k / max(ε, n_{B,l})
//! G_B   = 1 - Σ ϑ²
//! L_ag  = Σ_B (n_{B,u}/n_u)·G_B
//! L     = w_ag·(1/m)·Σ_trees L_ag + λ_ce·L_ce
//! ```
//!
//! Gradients are analytic. The clamp uses subgradient 0 at and below the
//! kink, and floored denominators pass no gradient while the floor is active.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, LabeledSet, Manifest, UnlabeledSet};
use crate::error::{Error, Result};
use crate::forest::argmax;
use crate::impurity::gini_from_probabilities;
use crate::rng;

pub const NEURAL_MODEL_TYPE: &str = "neural_lacforest";
pub const NEURAL_MODEL_VERSION: u32 = 1;
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Logistic,
    Rectifier,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Logistic => sigmoid(z),
            Activation::Rectifier => z.max(0.0),
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Logistic => a * (1.0 - a),
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine map `W x + b` with `W` stored row-major, `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `±1/√inputs`, biases zero.
    pub fn random(inputs: usize, outputs: usize, rng: &mut rng::Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut d = Self::zeros(dim, dim);
        for i in 0..dim {
            d.weight[i * dim + i] = 1.0;
        }
        d
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients for output gradient `dz` at input
    /// `x` and returns the input gradient.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Encoded width; `None` keeps the input dimension.
    #[serde(default)]
    pub output_dim: Option<usize>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            output_dim: None,
            hidden_dim: None,
            activation: Activation::Identity,
        }
    }
}

/// One or two dense layers, each followed by `activation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl EncoderParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Dense::identity(dim)],
            activation: Activation::Identity,
        }
    }

    pub fn random(input_dim: usize, cfg: &EncoderConfig, rng: &mut rng::Rng) -> Self {
        let out = cfg.output_dim.unwrap_or(input_dim);
        let layers = match cfg.hidden_dim {
            Some(h) => vec![Dense::random(input_dim, h, rng), Dense::random(h, out, rng)],
            None => vec![Dense::random(input_dim, out, rng)],
        };
        Self {
            layers,
            activation: cfg.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward(x).h().to_vec())
    }

    fn forward(&self, x: &[f64]) -> EncoderTrace {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.forward(inputs.last().unwrap());
            inputs.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            pre.push(z);
        }
        EncoderTrace { inputs, pre }
    }

    fn backward(&self, trace: &EncoderTrace, dh: Vec<f64>, grad: &mut EncoderParams) {
        let mut da = dh;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = da
                .iter()
                .zip(&trace.pre[k])
                .zip(&trace.inputs[k + 1])
                .map(|((g, &z), &a)| g * self.activation.derivative(z, a))
                .collect();
            da = layer.backward(&trace.inputs[k], &dz, &mut grad.layers[k]);
        }
    }
}

struct EncoderTrace {
    /// `inputs[0]` is x, `inputs[k+1]` the output of layer k.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl EncoderTrace {
    fn h(&self) -> &[f64] {
        self.inputs.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTree {
    pub depth: usize,
    pub input_dim: usize,
    /// Routing weights, one row of `input_dim` per internal node.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftTree {
    pub fn zeros(depth: usize, input_dim: usize) -> Self {
        let t = internal_count(depth);
        Self {
            depth,
            input_dim,
            weight: vec![0.0; t * input_dim],
            bias: vec![0.0; t],
        }
    }

    pub fn random(depth: usize, input_dim: usize, rng: &mut rng::Rng) -> Self {
        let t = internal_count(depth);
        let d = Dense::random(input_dim, t, rng);
        Self {
            depth,
            input_dim,
            weight: d.weight,
            bias: d.bias,
        }
    }

    pub fn num_internal(&self) -> usize {
        internal_count(self.depth)
    }

    pub fn num_leaves(&self) -> usize {
        self.num_internal() + 1
    }

    /// Left-routing probabilities of the internal nodes.
    pub fn gates(&self, h: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        (0..self.num_internal())
            .map(|i| {
                let row = &self.weight[i * d..(i + 1) * d];
                sigmoid(self.bias[i] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>())
            })
            .collect()
    }

    fn node_mass(&self, gates: &[f64]) -> Vec<f64> {
        let t = gates.len();
        let mut mu = vec![0.0; 2 * t + 1];
        mu[0] = 1.0;
        for (i, &f) in gates.iter().enumerate() {
            mu[2 * i + 1] = mu[i] * f;
            mu[2 * i + 2] = mu[i] * (1.0 - f);
        }
        mu
    }

    /// Leaf reach probabilities μ for an encoded input.
    pub fn route(&self, h: &[f64]) -> Vec<f64> {
        let t = self.num_internal();
        self.node_mass(&self.gates(h))[t..].to_vec()
    }
}

/// `2^(depth-1) - 1`.
pub fn internal_count(depth: usize) -> usize {
    (1usize << (depth - 1)) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralParams {
    pub encoder: EncoderParams,
    pub trees: Vec<SoftTree>,
    /// Auxiliary softmax head over the κ known classes.
    pub head: Dense,
}

impl NeuralParams {
    pub fn random(input_dim: usize, num_known: usize, num_trees: usize, depth: usize, enc: &EncoderConfig, rng: &mut rng::Rng) -> Self {
        let encoder = EncoderParams::random(input_dim, enc, rng);
        let h = encoder.output_dim();
        let trees = (0..num_trees).map(|_| SoftTree::random(depth, h, rng)).collect();
        let head = Dense::random(h, num_known, rng);
        Self { encoder, trees, head }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_slice_mut(|s| s.fill(0.0));
        z
    }

    pub fn num_known(&self) -> usize {
        self.head.outputs
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for l in &mut self.encoder.layers {
            f(&mut l.weight);
            f(&mut l.bias);
        }
        for t in &mut self.trees {
            f(&mut t.weight);
            f(&mut t.bias);
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.encoder.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for t in &self.trees {
            out.push(&t.weight);
            out.push(&t.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    /// All parameters in a fixed order: encoder layers, trees, head.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.for_each_slice_mut(|s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// A labeled and an unlabeled mini-batch. Labels are 1-based known classes.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub labeled: Vec<(&'a [f64], usize)>,
    pub unlabeled: Vec<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn full(labeled: &'a LabeledSet, unlabeled: &'a UnlabeledSet) -> Self {
        Self {
            labeled: labeled
                .features
                .iter()
                .zip(&labeled.labels)
                .map(|(x, &y)| (x.as_slice(), y))
                .collect(),
            unlabeled: unlabeled.features.iter().map(Vec::as_slice).collect(),
        }
    }
}

/// Soft leaf statistics of one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLeafStats {
    pub labeled: Vec<f64>,
    pub unlabeled: Vec<f64>,
    /// `class_mass[leaf][k]` for known class `k+1`.
    pub class_mass: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftGlobals {
    pub n_l: f64,
    pub n_u: f64,
    pub theta: f64,
    pub eps: f64,
}

impl SoftGlobals {
    pub fn of(batch: &Batch<'_>, theta: f64, eps: f64) -> Self {
        Self {
            n_l: batch.labeled.len() as f64,
            n_u: batch.unlabeled.len() as f64,
            theta,
            eps,
        }
    }
}

/// Per-tree soft counts of a batch. Every labeled and unlabeled row
/// contributes its leaf reach probabilities.
pub fn soft_counts(params: &NeuralParams, batch: &Batch<'_>) -> Result<Vec<SoftLeafStats>> {
    let kappa = params.num_known();
    let mut stats: Vec<SoftLeafStats> = params
        .trees
        .iter()
        .map(|t| SoftLeafStats {
            labeled: vec![0.0; t.num_leaves()],
            unlabeled: vec![0.0; t.num_leaves()],
            class_mass: vec![vec![0.0; kappa]; t.num_leaves()],
        })
        .collect();
    for &(x, y) in &batch.labeled {
        let h = params.encoder.encode(x)?;
        for (tree, s) in params.trees.iter().zip(stats.iter_mut()) {
            for (j, mu) in tree.route(&h).into_iter().enumerate() {
                s.labeled[j] += mu;
                s.class_mass[j][y - 1] += mu;
            }
        }
    }
    for &x in &batch.unlabeled {
        let h = params.encoder.encode(x)?;
        for (tree, s) in params.trees.iter().zip(stats.iter_mut()) {
            for (j, mu) in tree.route(&h).into_iter().enumerate() {
                s.unlabeled[j] += mu;
            }
        }
    }
    Ok(stats)
}

/// Soft ϑ over κ+1 classes for one leaf.
pub fn vartheta_soft(leaf_l: f64, leaf_u: f64, class_mass: &[f64], g: &SoftGlobals) -> Vec<f64> {
    let r = (1.0 - g.theta) * g.n_u * leaf_l / (g.n_l * leaf_u.max(g.eps));
    let a = (1.0 - r).max(0.0);
    let dl = leaf_l.max(g.eps);
    let mut out: Vec<f64> = class_mass.iter().map(|s| (1.0 - a) * s / dl).collect();
    out.push(a);
    out
}

pub fn soft_augmented_gini(vartheta: &[f64]) -> f64 {
    gini_from_probabilities(vartheta)
}

/// `Σ_B ω_B·G_B` for one tree.
pub fn loss_ag(stats: &SoftLeafStats, g: &SoftGlobals) -> f64 {
    (0..stats.labeled.len())
        .map(|j| {
            let v = vartheta_soft(stats.labeled[j], stats.unlabeled[j], &stats.class_mass[j], g);
            stats.unlabeled[j] / g.n_u * soft_augmented_gini(&v)
        })
        .sum()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of the auxiliary head on the labeled batch.
pub fn loss_ce(params: &NeuralParams, labeled: &[(&[f64], usize)], eps: f64) -> Result<f64> {
    if labeled.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(x, y) in labeled {
        let p = softmax(&params.head.forward(&params.encoder.encode(x)?));
        total -= p[y - 1].max(eps).ln();
    }
    Ok(total / labeled.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ag: f64,
    pub ce: f64,
}

impl LossWeights {
    pub fn with_ce(lambda_ce: f64) -> Self {
        Self { ag: 1.0, ce: lambda_ce }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    /// Mean over trees of the soft augmented Gini loss.
    pub ag: f64,
    pub ce: f64,
    pub total: f64,
}

pub fn total_loss(params: &NeuralParams, batch: &Batch<'_>, theta: f64, w: LossWeights, eps: f64) -> Result<LossParts> {
    let g = SoftGlobals::of(batch, theta, eps);
    let stats = soft_counts(params, batch)?;
    let ag = if params.trees.is_empty() {
        0.0
    } else {
        stats.iter().map(|s| loss_ag(s, &g)).sum::<f64>() / params.trees.len() as f64
    };
    let ce = loss_ce(params, &batch.labeled, eps)?;
    Ok(LossParts {
        ag,
        ce,
        total: w.ag * ag + w.ce * ce,
    })
}

/// Loss derivatives with respect to one tree's leaf soft counts.
struct LeafGrads {
    d_labeled: Vec<f64>,
    d_unlabeled: Vec<f64>,
    d_mass: Vec<Vec<f64>>,
}

fn leaf_grads(stats: &SoftLeafStats, g: &SoftGlobals, scale: f64) -> (f64, LeafGrads) {
    let leaves = stats.labeled.len();
    let c = (1.0 - g.theta) * g.n_u / g.n_l;
    let mut loss = 0.0;
    let mut out = LeafGrads {
        d_labeled: vec![0.0; leaves],
        d_unlabeled: vec![0.0; leaves],
        d_mass: vec![Vec::new(); leaves],
    };
    for j in 0..leaves {
        let (nl, nu, mass) = (stats.labeled[j], stats.unlabeled[j], &stats.class_mass[j]);
        let du = nu.max(g.eps);
        let dl = nl.max(g.eps);
        let r = c * nl / du;
        let a = (1.0 - r).max(0.0);
        let v: Vec<f64> = mass.iter().map(|s| (1.0 - a) * s / dl).collect();
        let gini = 1.0 - a * a - v.iter().map(|t| t * t).sum::<f64>();
        let omega = nu / g.n_u;
        loss += omega * gini;

        let dg_da = -2.0 * a + 2.0 * v.iter().zip(mass).map(|(t, s)| t * s / dl).sum::<f64>();
        let da_dr = if 1.0 - r > 0.0 { -1.0 } else { 0.0 };
        let dg_dr = dg_da * da_dr;
        let mut d_nl = dg_dr * c / du;
        if nl > g.eps {
            d_nl += 2.0 * v.iter().map(|t| t * t).sum::<f64>() / dl;
        }
        let mut d_nu_gini = 0.0;
        if nu > g.eps {
            d_nu_gini = dg_dr * (-r / du);
        }
        out.d_labeled[j] = scale * omega * d_nl;
        out.d_unlabeled[j] = scale * (gini / g.n_u + omega * d_nu_gini);
        out.d_mass[j] = v.iter().map(|t| scale * omega * (-2.0 * t * (1.0 - a) / dl)).collect();
    }
    (loss, out)
}

/// Backpropagates leaf-mass gradients through one tree for an encoded
/// input, accumulating into `grad` and returning the gradient w.r.t. `h`.
fn tree_backward(tree: &SoftTree, h: &[f64], d_leaf: &[f64], grad: &mut SoftTree, dh: &mut [f64]) {
    let gates = tree.gates(h);
    let mu = tree.node_mass(&gates);
    let t = gates.len();
    let d = tree.input_dim;
    let mut d_node = vec![0.0; 2 * t + 1];
    d_node[t..].copy_from_slice(d_leaf);
    for i in (0..t).rev() {
        let (gl, gr) = (d_node[2 * i + 1], d_node[2 * i + 2]);
        let f = gates[i];
        d_node[i] = f * gl + (1.0 - f) * gr;
        let dz = mu[i] * (gl - gr) * f * (1.0 - f);
        if dz == 0.0 {
            continue;
        }
        grad.bias[i] += dz;
        let row = i * d;
        for k in 0..d {
            grad.weight[row + k] += dz * h[k];
            dh[k] += dz * tree.weight[row + k];
        }
    }
}

/// Loss parts and the analytic gradient of `w.ag·L_ag_mean + w.ce·L_ce`.
pub fn gradients(params: &NeuralParams, batch: &Batch<'_>, theta: f64, w: LossWeights, eps: f64) -> Result<(LossParts, NeuralParams)> {
    if batch.labeled.is_empty() || batch.unlabeled.is_empty() {
        return Err(Error::Empty("mini-batch".into()));
    }
    let g = SoftGlobals::of(batch, theta, eps);
    let m = params.trees.len().max(1) as f64;
    let stats = soft_counts(params, batch)?;
    let mut ag = 0.0;
    let leaf = stats
        .iter()
        .map(|s| {
            let (l, lg) = leaf_grads(s, &g, w.ag / m);
            ag += l;
            lg
        })
        .collect::<Vec<_>>();
    ag /= m;

    let mut grad = params.zeros_like();
    let n_l = batch.labeled.len() as f64;
    let mut ce = 0.0;
    for &(x, y) in &batch.labeled {
        let trace = params.encoder.forward(x);
        let h = trace.h();
        let mut dh = vec![0.0; h.len()];
        for (ti, tree) in params.trees.iter().enumerate() {
            let lg = &leaf[ti];
            let d_leaf: Vec<f64> = (0..tree.num_leaves()).map(|j| lg.d_labeled[j] + lg.d_mass[j][y - 1]).collect();
            tree_backward(tree, h, &d_leaf, &mut grad.trees[ti], &mut dh);
        }
        let p = softmax(&params.head.forward(h));
        ce -= p[y - 1].max(eps).ln();
        if p[y - 1] > eps && w.ce != 0.0 {
            let dz: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, &pk)| w.ce * (pk - if k == y - 1 { 1.0 } else { 0.0 }) / n_l)
                .collect();
            let back = params.head.backward(h, &dz, &mut grad.head);
            dh.iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
        params.encoder.backward(&trace, dh, &mut grad.encoder);
    }
    ce /= n_l;
    for &x in &batch.unlabeled {
        let trace = params.encoder.forward(x);
        let h = trace.h();
        let mut dh = vec![0.0; h.len()];
        for (ti, tree) in params.trees.iter().enumerate() {
            tree_backward(tree, h, &leaf[ti].d_unlabeled, &mut grad.trees[ti], &mut dh);
        }
        params.encoder.backward(&trace, dh, &mut grad.encoder);
    }
    let parts = LossParts {
        ag,
        ce,
        total: w.ag * ag + w.ce * ce,
    };
    if !parts.total.is_finite() || grad.flatten().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok((parts, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub num_trees: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lambda_ce: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_trees: 3,
            depth: 6,
            epochs: 500,
            batch_labeled: 512,
            batch_unlabeled: 512,
            lambda_ce: 1.0,
            lr_initial: 1e-2,
            lr_final: 1e-3,
            weight_decay: 5e-3,
            eps: DEFAULT_EPS,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::invalid("num_trees must be at least 1"));
        }
        if !(2..=20).contains(&self.depth) {
            return Err(Error::invalid("depth must lie in 2..=20"));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        if !(self.lambda_ce > 0.0) {
            return Err(Error::invalid("lambda_ce must be positive"));
        }
        for (name, v) in [
            ("lr_initial", self.lr_initial),
            ("lr_final", self.lr_final),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if self.encoder.output_dim == Some(0) || self.encoder.hidden_dim == Some(0) {
            return Err(Error::invalid("encoder widths must be at least 1"));
        }
        Ok(())
    }

    /// Cosine schedule from `lr_initial` at epoch 0 towards `lr_final`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let t = self.epochs.max(1) as f64;
        self.lr_final + 0.5 * (self.lr_initial - self.lr_final) * (1.0 + (PI * epoch as f64 / t).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_ag: f64,
    pub loss_ce: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn write_epoch_csv<W: Write>(out: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "L_ag", "L_ce", "total", "lr"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.loss_ag.to_string(),
            e.loss_ce.to_string(),
            e.total.to_string(),
            e.lr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("epoch log", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralForestModel {
    pub model_type: String,
    pub version: u32,
    #[serde(rename = "kappa")]
    pub num_known: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    pub theta: f64,
    pub config: TrainConfig,
    pub params: NeuralParams,
    /// `frozen_theta[tree][leaf]` over κ+1 classes.
    pub frozen_theta: Vec<Vec<Vec<f64>>>,
    pub manifest: Option<Manifest>,
}

/// Index batches for one epoch. The stream needing more batches sets the
/// count; the other one cycles through its permutation.
fn epoch_batches(perm_l: &[usize], perm_u: &[usize], bl: usize, bu: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let (nl, nu) = (perm_l.len(), perm_u.len());
    let (bl, bu) = (bl.min(nl), bu.min(nu));
    let count_l = nl.div_ceil(bl);
    let count_u = nu.div_ceil(bu);
    let count = count_l.max(count_u);
    let take = |perm: &[usize], b: usize, own: usize, i: usize| -> Vec<usize> {
        let n = perm.len();
        if own == count {
            perm[i * b..((i + 1) * b).min(n)].to_vec()
        } else {
            (0..b).map(|j| perm[(i * b + j) % n]).collect()
        }
    };
    (0..count)
        .map(|i| (take(perm_l, bl, count_l, i), take(perm_u, bu, count_u, i)))
        .collect()
}

/// Frozen per-leaf ϑ from soft counts over the full data.
pub fn freeze_vartheta(params: &NeuralParams, labeled: &LabeledSet, unlabeled: &UnlabeledSet, theta: f64, eps: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    let batch = Batch::full(labeled, unlabeled);
    let g = SoftGlobals::of(&batch, theta, eps);
    Ok(soft_counts(params, &batch)?
        .iter()
        .map(|s| {
            (0..s.labeled.len())
                .map(|j| vartheta_soft(s.labeled[j], s.unlabeled[j], &s.class_mass[j], &g))
                .collect()
        })
        .collect())
}

/// Plain SGD with weight decay over paired mini-batches. Also returns the
/// per-epoch mean batch losses.
pub fn train_neural_with_log(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    theta: f64,
    cfg: &TrainConfig,
) -> Result<(NeuralForestModel, Vec<EpochLog>)> {
    train_neural_inner(labeled, unlabeled, theta, cfg, |_, _| {})
}

pub fn train_neural(labeled: &LabeledSet, unlabeled: &UnlabeledSet, theta: f64, cfg: &TrainConfig) -> Result<NeuralForestModel> {
    Ok(train_neural_with_log(labeled, unlabeled, theta, cfg)?.0)
}

/// Same as [`train_neural_with_log`] but calls `on_step(step, params)`
/// after every parameter update.
pub fn train_neural_inner(
    labeled: &LabeledSet,
    unlabeled: &UnlabeledSet,
    theta: f64,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &NeuralParams),
) -> Result<(NeuralForestModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::invalid("theta must lie in [0, 1)"));
    }
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
    let kappa = labeled.num_classes;
    let mut init_rng = rng::stream(cfg.seed, 0);
    let mut params = NeuralParams::random(d, kappa, cfg.num_trees, cfg.depth, &cfg.encoder, &mut init_rng);
    let mut shuffle_rng = rng::stream(cfg.seed, 1);
    let weights = LossWeights::with_ce(cfg.lambda_ce);
    let mut perm_l: Vec<usize> = (0..labeled.len()).collect();
    let mut perm_u: Vec<usize> = (0..unlabeled.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        perm_l.shuffle(&mut shuffle_rng);
        perm_u.shuffle(&mut shuffle_rng);
        let batches = epoch_batches(&perm_l, &perm_u, cfg.batch_labeled, cfg.batch_unlabeled);
        let mut sum = LossParts::default();
        for (b, (il, iu)) in batches.iter().enumerate() {
            let batch = Batch {
                labeled: il.iter().map(|&i| (labeled.features[i].as_slice(), labeled.labels[i])).collect(),
                unlabeled: iu.iter().map(|&i| unlabeled.features[i].as_slice()).collect(),
            };
            let (parts, grad) = gradients(&params, &batch, theta, weights, cfg.eps)
                .map_err(|e| Error::NonFinite(format!("epoch {}, batch {}: {e}", epoch + 1, b + 1)))?;
            let g = grad.flatten();
            let mut p = params.flatten();
            for (pv, gv) in p.iter_mut().zip(&g) {
                *pv -= lr * (gv + cfg.weight_decay * *pv);
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("epoch {}, batch {}: parameters", epoch + 1, b + 1)));
            }
            params.set_flat(&p);
            step += 1;
            on_step(step, &params);
            sum.ag += parts.ag;
            sum.ce += parts.ce;
            sum.total += parts.total;
        }
        let n = batches.len() as f64;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss_ag: sum.ag / n,
            loss_ce: sum.ce / n,
            total: sum.total / n,
            lr,
        });
    }

    let frozen_theta = freeze_vartheta(&params, labeled, unlabeled, theta, cfg.eps)?;
    Ok((
        NeuralForestModel {
            model_type: NEURAL_MODEL_TYPE.into(),
            version: NEURAL_MODEL_VERSION,
            num_known: kappa,
            dim: d,
            theta,
            config: cfg.clone(),
            params,
            frozen_theta,
            manifest: None,
        },
        log,
    ))
}

impl NeuralForestModel {
    pub fn num_classes(&self) -> usize {
        self.num_known + 1
    }

    /// Per-tree class scores `DT_{i,k}(x) = Σ_leaf μ·ϑ_k`.
    pub fn tree_scores(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let h = self.params.encoder.encode(x)?;
        Ok(self
            .params
            .trees
            .iter()
            .zip(&self.frozen_theta)
            .map(|(tree, table)| {
                let mut s = vec![0.0; self.num_classes()];
                for (mu, v) in tree.route(&h).iter().zip(table) {
                    for (sk, vk) in s.iter_mut().zip(v) {
                        *sk += mu * vk;
                    }
                }
                s
            })
            .collect())
    }

    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.num_classes()];
        for s in self.tree_scores(x)? {
            total.iter_mut().zip(s).for_each(|(t, v)| *t += v);
        }
        Ok(total)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_scores(x)?) + 1)
    }

    /// Augmented-class score averaged over trees.
    pub fn augmented_score(&self, x: &[f64]) -> Result<f64> {
        let s = self.predict_scores(x)?;
        Ok(s[self.num_known] / self.params.trees.len().max(1) as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.model_type != NEURAL_MODEL_TYPE {
            return Err(Error::invalid(format!("not a {NEURAL_MODEL_TYPE} model: {}", model.model_type)));
        }
        if model.version != NEURAL_MODEL_VERSION {
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
