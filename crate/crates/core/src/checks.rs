//! Self-checks behind `lacforest check`: each one runs an oracle or a
//! numerical comparison and reports measured values against thresholds.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::impurity::{best_split, NodeRows, SplitGlobals, SplitOptions};
use crate::neural::{gradients, total_loss, Activation, Batch, EncoderConfig, LossWeights, NeuralParams, DEFAULT_EPS};
use crate::oracle::{
    closed_form_loss, exhaustive_best_split, optimal_squared_loss_bruteforce, reference_soft_tree,
    soft_vartheta_convergence_experiment, vartheta_convergence_experiment, AtomPopulation, BoxPopulation,
    ConvergenceCurve, Region,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition, e.g. `< 1e-4`.
    pub condition: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub passed: bool,
    pub measurements: Vec<Measurement>,
}

impl CheckReport {
    fn new(check: &str, measurements: Vec<Measurement>) -> Self {
        Self {
            check: check.into(),
            passed: measurements.iter().all(|m| m.passed),
            measurements,
        }
    }
}

fn below(name: impl Into<String>, value: f64, limit: f64) -> Measurement {
    Measurement {
        name: name.into(),
        value,
        condition: format!("< {limit:e}"),
        passed: value < limit,
    }
}

fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Measurement {
    Measurement {
        name: name.into(),
        value,
        condition: format!("in [{lo}, {hi}]"),
        passed: (lo..=hi).contains(&value),
    }
}

/// Brute-force minimum expected squared loss against `1 − Σp²`.
pub fn simplex_lemma(points: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::from_seed(seed);
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let k = 1 + i % 5;
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(2)).collect();
        let s: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let head: f64 = p[..k - 1].iter().sum();
        p[k - 1] = (1.0 - head).max(0.0);
        worst = worst.max((optimal_squared_loss_bruteforce(&p)? - closed_form_loss(&p)).abs());
    }
    Ok(CheckReport::new("simplex-lemma", vec![below("max abs error", worst, 1e-3)]))
}

/// Threshold scan against exhaustive enumeration on random nodes.
pub fn oracle_splits(nodes: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng::from_seed(seed);
    let mut mismatches = 0;
    let mut with_split = 0;
    for _ in 0..nodes {
        let d = rng.random_range(1..=5);
        let kappa = rng.random_range(1..=4);
        let n_lab = rng.random_range(0..=100);
        let n_unl = rng.random_range(1..=100);
        let levels = [3, 6, 11, 1000][rng.random_range(0..4)];
        let value = |rng: &mut rng::Rng| rng.random_range(0..levels) as f64 / (levels - 1) as f64;
        let lx: Vec<Vec<f64>> = (0..n_lab).map(|_| (0..d).map(|_| value(&mut rng)).collect()).collect();
        let ly: Vec<usize> = (0..n_lab).map(|_| rng.random_range(1..=kappa)).collect();
        let ux: Vec<Vec<f64>> = (0..n_unl).map(|_| (0..d).map(|_| value(&mut rng)).collect()).collect();
        let rows = NodeRows {
            labeled: lx.iter().zip(&ly).map(|(x, &y)| (x.as_slice(), y)).collect(),
            unlabeled: ux.iter().map(Vec::as_slice).collect(),
        };
        let globals = SplitGlobals {
            n_l: (n_lab + rng.random_range(0..60)).max(1) as u64,
            n_u: (n_unl + rng.random_range(0..60)) as u64,
            theta: rng.random_range(0.05..0.95),
            num_known: kappa,
        };
        let opts = SplitOptions {
            gamma: [0.0, 0.01, 0.05, 0.1, 0.25][rng.random_range(0..5)],
            min_reduction: None,
        };
        let features: Vec<usize> = (0..rng.random_range(1..=d)).map(|_| rng.random_range(0..d)).collect();
        let fast = best_split(&rows, &features, &opts, &globals);
        if fast != exhaustive_best_split(&rows, &features, &opts, &globals) {
            mismatches += 1;
        }
        with_split += fast.is_some() as usize;
    }
    Ok(CheckReport::new(
        "oracle-splits",
        vec![
            below("mismatched nodes", mismatches as f64, 0.5),
            Measurement {
                name: "nodes with a feasible split".into(),
                value: with_split as f64,
                condition: "informational".into(),
                passed: true,
            },
        ],
    ))
}

/// Worst relative error between analytic and central-difference gradients,
/// one measurement per parameter group. `inject` is added to every
/// analytic component, which makes the check fail on purpose.
pub fn gradient_check(configs: usize, seed: u64, inject: f64) -> Result<CheckReport> {
    let mut rng = rng::from_seed(seed);
    let mut worst = [0.0f64; 3];
    let h = 1e-5;
    for cfg in 0..configs {
        let d = rng.random_range(1..=5);
        let kappa = rng.random_range(1..=3);
        let enc = EncoderConfig {
            output_dim: Some(rng.random_range(1..=4)),
            hidden_dim: if rng.random_bool(0.5) { Some(rng.random_range(1..=4)) } else { None },
            activation: [Activation::Identity, Activation::Logistic, Activation::Rectifier][cfg % 3],
        };
        let mut params = NeuralParams::random(d, kappa, 1, 3, &enc, &mut rng);
        let mut flat = params.flatten();
        for v in flat.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        params.set_flat(&flat);
        let theta = rng.random_range(0.05..0.95);
        let nl = rng.random_range(2..=16);
        let nu = rng.random_range(2..=16);
        let lx: Vec<Vec<f64>> = (0..nl).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ly: Vec<usize> = (0..nl).map(|_| rng.random_range(1..=kappa)).collect();
        let ux: Vec<Vec<f64>> = (0..nu).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch = Batch {
            labeled: lx.iter().zip(&ly).map(|(x, &y)| (x.as_slice(), y)).collect(),
            unlabeled: ux.iter().map(Vec::as_slice).collect(),
        };
        let w = LossWeights::with_ce(1.0);
        let analytic: Vec<f64> = gradients(&params, &batch, theta, w, DEFAULT_EPS)?.1.flatten().iter().map(|g| g + inject).collect();
        let encoder_len: usize = params.encoder.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        let tree_len: usize = params.trees.iter().map(|t| t.weight.len() + t.bias.len()).sum();
        let mut q = params.clone();
        for (i, &base) in flat.iter().enumerate() {
            let mut v = flat.clone();
            v[i] = base + h;
            q.set_flat(&v);
            let up = total_loss(&q, &batch, theta, w, DEFAULT_EPS)?.total;
            v[i] = base - h;
            q.set_flat(&v);
            let down = total_loss(&q, &batch, theta, w, DEFAULT_EPS)?.total;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-4);
            let group = if i < encoder_len {
                0
            } else if i < encoder_len + tree_len {
                1
            } else {
                2
            };
            worst[group] = worst[group].max(rel);
        }
    }
    let names = ["encoder", "routing", "head"];
    Ok(CheckReport::new(
        "gradients",
        names
            .iter()
            .zip(worst)
            .map(|(n, e)| below(format!("{n} max relative error"), e, 1e-4))
            .collect(),
    ))
}

fn curve_measurements(prefix: &str, curve: &ConvergenceCurve, at_large: f64, out: &mut Vec<Measurement>) {
    for (w, r) in curve.points.windows(2).zip(curve.ratios()) {
        out.push(within(format!("{prefix} median ratio n={} to n={}", w[0].n, w[1].n), r, 1.4, 3.0));
    }
    out.push(below(format!("{prefix} median error at n=10000"), at_large, 0.05));
}

/// Monte Carlo error of ϑ̂ on the reference box population (hard) and atom
/// population with a frozen depth-3 soft tree (soft).
pub fn convergence(trials: usize, seed: u64) -> Result<(CheckReport, ConvergenceCurve, ConvergenceCurve)> {
    let grid = [100, 400, 1600, 6400];
    let pop = BoxPopulation::reference();
    let region = Region {
        lo: vec![0.5, 0.0],
        hi: vec![1.0, 1.0],
    };
    let hard = vartheta_convergence_experiment(&pop, &region, &grid, trials, seed)?;
    let hard_large = vartheta_convergence_experiment(&pop, &region, &[10_000], trials, seed + 1)?.points[0].median;
    let atoms = AtomPopulation::reference();
    let tree = reference_soft_tree(8.0);
    let soft = soft_vartheta_convergence_experiment(&atoms, &tree, 2, &grid, trials, seed + 2)?;
    let soft_large = soft_vartheta_convergence_experiment(&atoms, &tree, 2, &[10_000], trials, seed + 3)?.points[0].median;
    let mut m = Vec::new();
    curve_measurements("hard", &hard, hard_large, &mut m);
    curve_measurements("soft", &soft, soft_large, &mut m);
    Ok((CheckReport::new("convergence", m), hard, soft))
}
