//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails.
//!
//! Run a subset by number: `cargo test -p lacforest --test acceptance -- 3 6`.

use std::path::Path;
use std::time::{Duration, Instant};

use lacforest::dataset::{
    generate_synthetic, load_csv, make_shift_split, split_by_roles, LabeledSet, LoadedCsv, ShiftSplit, ShiftSplitConfig,
    SyntheticSpec, UnlabeledSet,
};
use lacforest::forest::{
    forest_augmented_score, grow_exploration_tree, pseudo_label, pseudo_label_count, train_gini_forest, train_lacforest,
    ForestParams, TreeNode,
};
use lacforest::impurity::{best_split, vartheta_vector, NodeRows, NodeStats, SplitGlobals, SplitOptions};
use lacforest::metrics::{accuracy, detection_auc, AucTies};
use lacforest::neural::{
    gradients, soft_counts, total_loss, train_neural_with_log, vartheta_soft, Activation, Batch, EncoderConfig,
    LossWeights, NeuralParams, SoftGlobals, SoftTree, TrainConfig, DEFAULT_EPS,
};
use lacforest::oracle::{
    closed_form_loss, exhaustive_best_split, optimal_squared_loss_bruteforce, reference_soft_tree,
    soft_vartheta_convergence_experiment, vartheta_convergence_experiment, AtomPopulation, BoxPopulation,
    ConvergenceCurve, Region,
};
use lacforest::rng;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

type Check = fn() -> Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    gating: bool,
    run: Check,
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion {
            id: 1,
            name: "simplex lemma oracle",
            limit: Duration::from_secs(60),
            gating: true,
            run: simplex_lemma,
        },
        Criterion {
            id: 2,
            name: "split search equals exhaustive search",
            limit: Duration::from_secs(120),
            gating: true,
            run: split_oracle,
        },
        Criterion {
            id: 3,
            name: "vartheta convergence rate",
            limit: Duration::from_secs(300),
            gating: true,
            run: convergence,
        },
        Criterion {
            id: 4,
            name: "analytic gradients vs finite differences",
            limit: Duration::from_secs(60),
            gating: true,
            run: gradient_check,
        },
        Criterion {
            id: 5,
            name: "structural invariants",
            limit: Duration::from_secs(300),
            gating: true,
            run: structural_invariants,
        },
        Criterion {
            id: 6,
            name: "synthetic benchmark, forest",
            limit: Duration::from_secs(180),
            gating: true,
            run: forest_benchmark,
        },
        Criterion {
            id: 7,
            name: "synthetic benchmark, neural",
            limit: Duration::from_secs(600),
            gating: true,
            run: neural_benchmark,
        },
        Criterion {
            id: 8,
            name: "determinism across thread counts",
            limit: Duration::from_secs(300),
            gating: true,
            run: determinism,
        },
        Criterion {
            id: 9,
            name: "digits directional check (non-gating)",
            limit: Duration::from_secs(600),
            gating: false,
            run: digits_directional,
        },
    ];

    let mut failed = false;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let timing = format!("{:.1}s of {}s", elapsed.as_secs_f64(), c.limit.as_secs());
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {}: {} | {detail} | {timing}", c.id, c.name);
        if !ok && c.gating {
            failed = true;
        }
    }
    if failed {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 -------------------------------------------------------------------------

fn simplex_lemma() -> Result<String, String> {
    let mut rng = rng::from_seed(1);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let k = 1 + i % 5;
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(2)).collect();
        let s: f64 = raw.iter().sum();
        let mut p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let tail: f64 = p[..k - 1].iter().sum();
        p[k - 1] = (1.0 - tail).max(0.0);
        let brute = optimal_squared_loss_bruteforce(&p).map_err(|e| e.to_string())?;
        worst = worst.max((brute - closed_form_loss(&p)).abs());
    }
    ensure(worst < 1e-3, format!("max |brute - closed form| = {worst:.2e} over 500 points (< 1e-3)"))
}

// 2 -------------------------------------------------------------------------

fn split_oracle() -> Result<String, String> {
    let mut rng = rng::from_seed(2);
    let mut found = 0;
    for node in 0..1000 {
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
            min_reduction: if rng.random_bool(0.3) { Some(0.0) } else { None },
        };
        let features: Vec<usize> = (0..rng.random_range(1..=d + 1)).map(|_| rng.random_range(0..d)).collect();
        let fast = best_split(&rows, &features, &opts, &globals);
        let slow = exhaustive_best_split(&rows, &features, &opts, &globals);
        if fast != slow {
            return Err(format!("node {node} differs: {fast:?} vs {slow:?}"));
        }
        found += fast.is_some() as usize;
    }
    Ok(format!("1000 nodes identical ({found} with a split, {} without)", 1000 - found))
}

// 3 -------------------------------------------------------------------------

fn curve_summary(curve: &ConvergenceCurve) -> String {
    curve
        .points
        .iter()
        .map(|p| format!("n={} med={:.4}", p.n, p.median))
        .collect::<Vec<_>>()
        .join(", ")
}

fn rate_ok(curve: &ConvergenceCurve) -> bool {
    curve.ratios().iter().all(|r| (1.4..=3.0).contains(r))
}

fn clamp_fraction(pop: &BoxPopulation, region: &Region, n: usize, trials: usize) -> f64 {
    let mut rng = rng::from_seed(9);
    let hits = (0..trials)
        .filter(|_| vartheta_vector(&pop.sample_region_stats(region, n, &mut rng)).augmented() == 0.0)
        .count();
    hits as f64 / trials as f64
}

fn convergence() -> Result<String, String> {
    let grid = [100, 400, 1600, 6400];
    let trials = 200;
    let pop = BoxPopulation::reference();
    let c_region = Region {
        lo: vec![0.5, 0.0],
        hi: vec![1.0, 1.0],
    };
    let zero_region = Region {
        lo: vec![0.0, 0.0],
        hi: vec![0.5, 1.0],
    };
    let err = |e: lacforest::Error| e.to_string();
    let hard = vartheta_convergence_experiment(&pop, &c_region, &grid, trials, 3).map_err(err)?;
    let at_1e4 = vartheta_convergence_experiment(&pop, &c_region, &[10_000], trials, 4).map_err(err)?.points[0].median;
    let hard_zero = vartheta_convergence_experiment(&pop, &zero_region, &grid, trials, 5).map_err(err)?;

    let atoms = AtomPopulation::reference();
    let soft_tree = reference_soft_tree(8.0);
    let soft = soft_vartheta_convergence_experiment(&atoms, &soft_tree, 2, &grid, trials, 6).map_err(err)?;
    let soft_at_1e4 = soft_vartheta_convergence_experiment(&atoms, &soft_tree, 2, &[10_000], trials, 7).map_err(err)?.points[0].median;
    let saturated = reference_soft_tree(1e4);
    let soft_zero = soft_vartheta_convergence_experiment(&atoms, &saturated, 0, &grid, trials, 8).map_err(err)?;

    // at θ_C = 0 the clamp zeroes about half the estimates, so the median
    // hops between 0 and small values; the tail must still shrink
    let zero_ok = |c: &ConvergenceCurve| {
        let q95_inversions = c.points.windows(2).filter(|w| w[1].q95 > w[0].q95).count();
        q95_inversions <= 1 && c.points.last().unwrap().median < 0.01
    };
    let clamped = clamp_fraction(&pop, &zero_region, 1600, trials);
    let checks = [
        ("hard median at 1e4 < 0.05", at_1e4 < 0.05),
        ("hard ratios in [1.4, 3.0]", rate_ok(&hard)),
        ("hard monotone", hard.inversions() <= 1),
        ("hard zero-mass region", zero_ok(&hard_zero)),
        ("clamp activates", clamped > 0.0),
        ("soft median at 1e4 < 0.05", soft_at_1e4 < 0.05),
        ("soft ratios in [1.4, 3.0]", rate_ok(&soft)),
        ("soft monotone", soft.inversions() <= 1),
        ("soft zero-mass leaf", zero_ok(&soft_zero)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let ratio_text = |c: &ConvergenceCurve| c.ratios().iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join("/");
    let detail = format!(
        "hard [{}] ratios {} med@1e4={at_1e4:.4}; zero [{}] clamp active in {:.0}% at n=1600; soft [{}] ratios {} med@1e4={soft_at_1e4:.4}; soft zero [{}]{}",
        curve_summary(&hard),
        ratio_text(&hard),
        curve_summary(&hard_zero),
        100.0 * clamped,
        curve_summary(&soft),
        ratio_text(&soft),
        curve_summary(&soft_zero),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    ensure(failed.is_empty(), detail)
}

// 4 -------------------------------------------------------------------------

/// Worst relative error per parameter group (encoder layers, trees, head).
fn finite_difference_errors(p: &NeuralParams, batch: &Batch<'_>, theta: f64, w: LossWeights) -> Vec<(String, f64)> {
    let (_, grad) = gradients(p, batch, theta, w, DEFAULT_EPS).unwrap();
    let analytic = grad.flatten();
    let base = p.flatten();
    let mut groups: Vec<(String, usize)> = Vec::new();
    for (i, l) in p.encoder.layers.iter().enumerate() {
        groups.push((format!("encoder{i}"), l.weight.len() + l.bias.len()));
    }
    for (i, t) in p.trees.iter().enumerate() {
        groups.push((format!("tree{i}"), t.weight.len() + t.bias.len()));
    }
    groups.push(("head".into(), p.head.weight.len() + p.head.bias.len()));
    let h = 1e-5;
    let mut out = Vec::new();
    let mut at = 0;
    for (name, len) in groups {
        let mut worst: f64 = 0.0;
        for i in at..at + len {
            let mut q = p.clone();
            let mut v = base.clone();
            v[i] = base[i] + h;
            q.set_flat(&v);
            let up = total_loss(&q, batch, theta, w, DEFAULT_EPS).unwrap().total;
            v[i] = base[i] - h;
            q.set_flat(&v);
            let down = total_loss(&q, batch, theta, w, DEFAULT_EPS).unwrap().total;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        at += len;
        out.push((name, worst));
    }
    out
}

fn gradient_check() -> Result<String, String> {
    let mut rng = rng::from_seed(4);
    let mut worst: f64 = 0.0;
    let mut worst_group = String::new();
    let mut clamped_leaves = 0;
    for cfg in 0..20 {
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
        let g = SoftGlobals::of(&batch, theta, DEFAULT_EPS);
        for s in soft_counts(&params, &batch).unwrap() {
            for j in 0..s.labeled.len() {
                if vartheta_soft(s.labeled[j], s.unlabeled[j], &s.class_mass[j], &g).last() == Some(&0.0) {
                    clamped_leaves += 1;
                }
            }
        }
        for (name, e) in finite_difference_errors(&params, &batch, theta, LossWeights::with_ce(1.0)) {
            if e > worst {
                worst = e;
                worst_group = format!("config {cfg} {name}");
            }
        }
    }
    ensure(
        worst < 1e-4,
        format!("max relative error {worst:.2e} ({worst_group}); {clamped_leaves} leaves with active clamp"),
    )
}

// 5 -------------------------------------------------------------------------

fn run_property<S: Strategy>(name: &str, cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

/// Routes rows down an exploration tree and checks every non-root node.
fn node_masses_ok(tree: &TreeNode, lab: &[&[f64]], unl: &[&[f64]], min_l: f64, min_u: f64, root: bool) -> bool {
    if !root && ((lab.len() as f64) < min_l || (unl.len() as f64) < min_u) {
        return false;
    }
    match tree {
        TreeNode::Leaf { .. } => true,
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            let (ll, lr): (Vec<&[f64]>, Vec<&[f64]>) = lab.iter().partition(|x| x[*feature] <= *threshold);
            let (ul, ur): (Vec<&[f64]>, Vec<&[f64]>) = unl.iter().partition(|x| x[*feature] <= *threshold);
            node_masses_ok(left, &ll, &ul, min_l, min_u, false) && node_masses_ok(right, &lr, &ur, min_l, min_u, false)
        }
    }
}

fn random_sets(seed: u64, nl: usize, nu: usize, d: usize, kappa: usize) -> (LabeledSet, UnlabeledSet) {
    let mut rng = rng::from_seed(seed);
    let lx = (0..nl).map(|_| (0..d).map(|_| rng.random_range(0..20) as f64 / 19.0).collect()).collect();
    let ly = (0..nl).map(|_| rng.random_range(1..=kappa)).collect();
    let ux = (0..nu).map(|_| (0..d).map(|_| rng.random_range(0..20) as f64 / 19.0).collect()).collect();
    (LabeledSet::new(lx, ly, kappa).unwrap(), UnlabeledSet::new(ux).unwrap())
}

fn structural_invariants() -> Result<String, String> {
    run_property("partition of unity", 10_000, (any::<u64>(), 2usize..7, prop::collection::vec(-4.0f64..4.0, 3)), |(seed, depth, h)| {
        let mut tree = SoftTree::random(depth, 3, &mut rng::from_seed(seed));
        tree.weight.iter_mut().for_each(|w| *w *= 6.0);
        let mu = tree.route(&h);
        prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Ok(())
    })?;

    run_property(
        "hard vartheta simplex",
        2000,
        (1u64..200, 1u64..200, prop::collection::vec(0u64..50, 1..5), 0.0f64..1.0),
        |(n_l, n_u, counts, theta)| {
            let node_l: u64 = counts.iter().sum();
            prop_assume!(node_l >= 1 && node_l <= n_l);
            let stats = NodeStats {
                n_l,
                n_u,
                node_l,
                node_u: n_u / 2 + 1,
                class_counts: counts,
                theta,
            };
            let v = vartheta_vector(&stats);
            prop_assert!(v.0.iter().all(|&p| p >= 0.0));
            prop_assert!((v.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            Ok(())
        },
    )?;

    run_property(
        "soft vartheta simplex",
        2000,
        (1e-9f64..100.0, 1e-9f64..100.0, 0.0f64..1.0, 0.0f64..1.0),
        |(nl, nu, split, theta)| {
            let g = SoftGlobals {
                n_l: 120.0,
                n_u: 150.0,
                theta,
                eps: DEFAULT_EPS,
            };
            let v = vartheta_soft(nl, nu, &[nl * split, nl * (1.0 - split)], &g);
            prop_assert!(v.iter().all(|&p| p >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            Ok(())
        },
    )?;

    run_property(
        "exploration node masses",
        64,
        (any::<u64>(), 20usize..150, 20usize..200, 1usize..4, 1usize..4, 0.01f64..0.2),
        |(seed, nl, nu, d, kappa, gamma)| {
            let (l, u) = random_sets(seed, nl, nu, d, kappa);
            let mut rng = rng::from_seed(seed ^ 0xabc);
            let tree = grow_exploration_tree(&l, &u, 0.4, &SplitOptions::new(gamma), d.min(2), &mut rng);
            let lab: Vec<&[f64]> = l.features.iter().map(Vec::as_slice).collect();
            let unl: Vec<&[f64]> = u.features.iter().map(Vec::as_slice).collect();
            prop_assert!(node_masses_ok(&tree, &lab, &unl, gamma * nl as f64, gamma * nu as f64, true));
            Ok(())
        },
    )?;

    run_property(
        "pseudo-label count",
        48,
        (any::<u64>(), 10usize..80, 1usize..300, 0.01f64..0.99),
        |(seed, nl, nu, theta)| {
            let (l, u) = random_sets(seed, nl, nu, 2, 2);
            let mut rng = rng::from_seed(seed);
            let trees: Vec<TreeNode> = (0..3)
                .map(|_| grow_exploration_tree(&l, &u, theta, &SplitOptions::new(0.05), 1, &mut rng))
                .collect();
            let sel = pseudo_label(&trees, &u, theta);
            prop_assert_eq!(sel.indices.len(), pseudo_label_count(theta, nu));
            prop_assert_eq!(sel.indices.len(), (theta * nu as f64 + 1e-9).floor() as usize);
            let chosen_min = sel.indices.iter().map(|&i| forest_augmented_score(&trees, &u.features[i])).fold(f64::INFINITY, f64::min);
            for i in (0..nu).filter(|i| !sel.indices.contains(i)) {
                prop_assert!(forest_augmented_score(&trees, &u.features[i]) <= chosen_min);
            }
            Ok(())
        },
    )?;

    run_property("omega sums to one", 500, (any::<u64>(), 2usize..6, 1usize..40), |(seed, depth, nu)| {
        let mut rng = rng::from_seed(seed);
        let params = NeuralParams::random(3, 2, 2, depth, &EncoderConfig::default(), &mut rng);
        let ux: Vec<Vec<f64>> = (0..nu).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let batch = Batch {
            labeled: Vec::new(),
            unlabeled: ux.iter().map(Vec::as_slice).collect(),
        };
        for s in soft_counts(&params, &batch).unwrap() {
            let omega: f64 = s.unlabeled.iter().map(|v| v / nu as f64).sum();
            prop_assert!((omega - 1.0).abs() < 1e-9);
        }
        Ok(())
    })?;

    Ok("partition of unity (10^4), hard and soft simplex, exploration node masses, |pseudo| = floor(theta n_u), omega sum".into())
}

// 6, 7 ----------------------------------------------------------------------

fn benchmark_split(seed: u64) -> ShiftSplit {
    let full = generate_synthetic(&SyntheticSpec::four_cluster_benchmark(1500, seed)).unwrap();
    let cfg = ShiftSplitConfig {
        augmented_class_fraction: 0.25,
        theta: 0.5,
        n_l: 500,
        n_u: 1000,
        n_test: 400,
        seed,
    };
    split_by_roles(&full, &[4], &cfg).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn forest_benchmark() -> Result<String, String> {
    let mut accs = Vec::new();
    let mut aucs = Vec::new();
    let mut baseline_aug = 0;
    for seed in 0..10 {
        let s = benchmark_split(seed);
        let kappa = s.num_known();
        let params = ForestParams {
            m: 100,
            tau: Some(1),
            gamma: 0.01,
            theta: 0.5,
            seed,
            min_reduction: None,
        };
        let model = train_lacforest(&s.labeled, &s.unlabeled, &params).map_err(|e| e.to_string())?;
        let preds = model.predict_batch(&s.test.features).unwrap();
        accs.push(accuracy(&preds, &s.test.labels).unwrap());
        let scores = model.augmented_scores(&s.test.features).unwrap();
        aucs.push(detection_auc(&scores, &s.test.labels, kappa, AucTies::Half).unwrap().unwrap_or(0.0));
        let baseline = train_gini_forest(&s.labeled, 100, Some(1), seed).unwrap();
        baseline_aug += s.test.features.iter().filter(|x| baseline.predict(x).unwrap() == kappa + 1).count();
    }
    let (acc, auc) = (median(accs.clone()), median(aucs));
    ensure(
        acc >= 0.90 && auc >= 0.95 && baseline_aug == 0,
        format!(
            "median accuracy {acc:.4} (>= 0.90), median AUC {auc:.4} (>= 0.95), baseline augmented predictions {baseline_aug} (== 0); per-seed acc {:?}",
            accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn neural_run(seed: u64, lr: Option<(f64, f64)>) -> Result<(f64, bool), String> {
    let s = benchmark_split(seed);
    let mut cfg = TrainConfig {
        num_trees: 3,
        depth: 4,
        epochs: 200,
        batch_labeled: 128,
        batch_unlabeled: 128,
        lambda_ce: 1.0,
        seed,
        ..TrainConfig::default()
    };
    if let Some((initial, last)) = lr {
        cfg.lr_initial = initial;
        cfg.lr_final = last;
    }
    let (model, log) = train_neural_with_log(&s.labeled, &s.unlabeled, 0.5, &cfg).map_err(|e| e.to_string())?;
    let preds: Vec<usize> = s.test.features.iter().map(|x| model.predict(x).unwrap()).collect();
    Ok((accuracy(&preds, &s.test.labels).unwrap(), log.last().unwrap().total <= log[0].total))
}

/// Runs with a 0.5 -> 0.05 cosine schedule; the 1e-2 -> 1e-3 default is
/// reported alongside for contrast.
fn neural_benchmark() -> Result<String, String> {
    let mut accs = Vec::new();
    let mut default_accs = Vec::new();
    let mut improved = 0;
    for seed in 0..5 {
        let (acc, better) = neural_run(seed, Some((0.5, 0.05)))?;
        accs.push(acc);
        improved += better as usize;
        default_accs.push(neural_run(seed, None)?.0);
    }
    let acc = median(accs.clone());
    ensure(
        acc >= 0.85 && improved >= 4,
        format!(
            "lr 0.5->0.05: median accuracy {acc:.4} (>= 0.85), final loss <= first-epoch loss in {improved}/5 seeds (>= 4); per-seed acc {:?}; default lr 1e-2->1e-3 median accuracy {:.4}",
            accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
            median(default_accs)
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn determinism() -> Result<String, String> {
    let s = benchmark_split(11);
    let params = ForestParams {
        m: 40,
        tau: None,
        gamma: 0.01,
        theta: 0.5,
        seed: 11,
        min_reduction: None,
    };
    let run = |threads| {
        with_threads(threads, || {
            let model = train_lacforest(&s.labeled, &s.unlabeled, &params).unwrap();
            let preds = model.predict_batch(&s.test.features).unwrap();
            (model.to_json().unwrap(), preds)
        })
    };
    let reference = run(1);
    for threads in [2, 4, 8] {
        if run(threads) != reference {
            return Err(format!("forest output differs with {threads} threads"));
        }
    }
    let cfg = TrainConfig {
        depth: 3,
        epochs: 5,
        batch_labeled: 64,
        batch_unlabeled: 64,
        seed: 11,
        ..TrainConfig::default()
    };
    let neural = |threads| {
        with_threads(threads, || {
            let (m, _) = train_neural_with_log(&s.labeled, &s.unlabeled, 0.5, &cfg).unwrap();
            m.to_json().unwrap()
        })
    };
    let neural_ref = neural(1);
    if neural(4) != neural_ref {
        return Err("neural model differs across thread counts".into());
    }
    Ok(format!(
        "forest JSON ({} bytes) and predictions identical for 1/2/4/8 threads; neural JSON identical for 1/4",
        reference.0.len()
    ))
}

// 9 -------------------------------------------------------------------------

fn digits_directional() -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits.csv");
    let LoadedCsv::Labeled { set, .. } = load_csv(&path, Some("label")).map_err(|e| e.to_string())? else {
        return Err("digits fixture has no labels".into());
    };
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let cfg = ShiftSplitConfig {
            augmented_class_fraction: 0.5,
            theta: 0.5,
            n_l: 300,
            n_u: 600,
            n_test: 100,
            seed,
        };
        let s = make_shift_split(&set, &cfg).map_err(|e| e.to_string())?;
        let mut params = ForestParams::new(0.5);
        params.seed = seed;
        let model = train_lacforest(&s.labeled, &s.unlabeled, &params).map_err(|e| e.to_string())?;
        let baseline = train_gini_forest(&s.labeled, 100, None, seed).map_err(|e| e.to_string())?;
        let ours = accuracy(&model.predict_batch(&s.test.features).unwrap(), &s.test.labels).unwrap();
        let base_preds: Vec<usize> = s.test.features.iter().map(|x| baseline.predict(x).unwrap()).collect();
        let base = accuracy(&base_preds, &s.test.labels).unwrap();
        if ours > base {
            wins += 1;
        }
        pairs.push(format!("{ours:.2}/{base:.2}"));
    }
    ensure(
        wins >= 8,
        format!("LACForest beats known-only forest in {wins}/10 seeds (n_l=300, n_u=600); ours/baseline {}", pairs.join(" ")),
    )
}
