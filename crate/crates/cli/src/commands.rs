use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lacforest::checks::{self, CheckReport};
use lacforest::dataset::{generate_synthetic, split_by_roles, LabelMap, LabeledSet, Manifest, ShiftSplitConfig, SyntheticSpec};
use lacforest::forest::{train_lacforest, ForestParams};
use lacforest::metrics::{AucTies, EvalReport};
use lacforest::model::Model;
use lacforest::neural::{train_neural_with_log, write_epoch_csv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_json, Axis, Mode, RunConfig};
use crate::data::{self, csv_err, label_name, Prepared, AUGMENTED_NAME};
use crate::error::CliError;

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    tool_version: &'a str,
    config_sha256: String,
    seed: u64,
    config: &'a C,
    artifacts: Vec<String>,
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::data(format!("{}: {e}", out.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Records what produced the files in `out`. Artifact paths are relative
/// to `out`.
fn write_run_manifest<C: Serialize>(out: &Path, command: &str, config: &C, seed: u64, mut artifacts: Vec<String>) -> Result<(), CliError> {
    artifacts.push("run_manifest.json".into());
    let manifest = RunManifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_json(config),
        seed,
        config,
        artifacts,
    };
    write_json(&out.join("run_manifest.json"), &manifest)
}

// synth -----------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSplit {
    pub theta: f64,
    pub n_l: usize,
    pub n_u: usize,
    pub n_test: usize,
}

impl Default for SynthSplit {
    fn default() -> Self {
        Self {
            theta: 0.5,
            n_l: 500,
            n_u: 1000,
            n_test: 100,
        }
    }
}

/// Input of `lacforest synth`: the cluster layout plus how to sample the
/// three sets from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDoc {
    pub generator: SyntheticSpec,
    #[serde(default)]
    pub split: SynthSplit,
}

fn write_split_files(
    out: &Path,
    feature_names: &[String],
    split: &lacforest::dataset::ShiftSplit,
    known_names: &LabelMap,
) -> Result<Vec<String>, CliError> {
    let name = |y: usize| {
        known_names
            .get_index(y - 1)
            .map(|(n, _)| n.clone())
            .unwrap_or_else(|| AUGMENTED_NAME.into())
    };
    data::write_named_csv(&out.join("labeled.csv"), feature_names, &split.labeled, name)?;
    data::write_unlabeled(&out.join("unlabeled.csv"), feature_names, &split.unlabeled)?;
    data::write_named_csv(&out.join("test.csv"), feature_names, &split.test, name)?;
    Ok(vec!["labeled.csv".into(), "unlabeled.csv".into(), "test.csv".into()])
}

pub fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let text = fs::read_to_string(spec_path).map_err(|e| CliError::config(format!("{}: {e}", spec_path.display())))?;
    let mut doc: SynthDoc = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", spec_path.display())))?;
    if let Some(s) = seed {
        doc.generator.seed = s;
    }
    doc.generator.validate().map_err(|e| CliError::config(e.to_string()))?;
    let theta = doc.split.theta;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(CliError::config("split.theta must lie in (0, 1)"));
    }
    let full = generate_synthetic(&doc.generator)?;
    let kappa = doc.generator.num_known();
    let cfg = ShiftSplitConfig {
        augmented_class_fraction: 0.5,
        theta,
        n_l: doc.split.n_l,
        n_u: doc.split.n_u,
        n_test: doc.split.n_test,
        seed: doc.generator.seed,
    };
    let split = split_by_roles(&full, &[kappa + 1], &cfg).map_err(|e| CliError::config(format!("split: {e}")))?;
    let feature_names = lacforest::dataset::default_feature_names(doc.generator.dim);
    let known: LabelMap = (1..=kappa).map(|k| (k.to_string(), k)).collect();
    create_dir(out)?;
    let mut artifacts = write_split_files(out, &feature_names, &split, &known)?;
    Manifest::new(feature_names, known, None).save(&out.join("manifest.json"))?;
    artifacts.push("manifest.json".into());
    write_run_manifest(out, "synth", &doc, doc.generator.seed, artifacts)?;
    say!(
        "wrote {} labeled, {} unlabeled, {} test rows to {}",
        split.labeled.len(),
        split.unlabeled.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

// split -----------------------------------------------------------------------

#[derive(Serialize)]
struct SplitSettings<'a> {
    source: &'a Path,
    label_column: &'a str,
    #[serde(flatten)]
    split: &'a ShiftSplitConfig,
}

#[derive(Serialize)]
struct SplitSummary<'a> {
    known_classes: Vec<&'a String>,
    augmented_classes: &'a [String],
    realized_unlabeled_augmented_fraction: f64,
    n_l: usize,
    n_u: usize,
    n_test: usize,
}

pub fn split(source: &Path, label_column: &str, cfg: &ShiftSplitConfig, out: &Path) -> Result<(), CliError> {
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        return Err(CliError::config("theta must lie in (0, 1)"));
    }
    let f = cfg.augmented_class_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(CliError::config("augmented class fraction must lie in (0, 1)"));
    }
    let s = data::split_source(source, label_column, cfg)?;
    create_dir(out)?;
    let mut artifacts = write_split_files(out, &s.feature_names, &s.split, &s.known_names)?;
    let summary = SplitSummary {
        known_classes: s.known_names.keys().collect(),
        augmented_classes: &s.augmented_names,
        realized_unlabeled_augmented_fraction: s.split.realized_unlabeled_augmented_fraction,
        n_l: s.split.labeled.len(),
        n_u: s.split.unlabeled.len(),
        n_test: s.split.test.len(),
    };
    write_json(&out.join("split.json"), &summary)?;
    artifacts.push("split.json".into());
    let settings = SplitSettings {
        source,
        label_column,
        split: cfg,
    };
    write_run_manifest(out, "split", &settings, cfg.seed, artifacts)?;
    say!(
        "known classes {:?}, augmented classes {:?}, realized fraction {:.3}",
        summary.known_classes, summary.augmented_classes, summary.realized_unlabeled_augmented_fraction
    );
    Ok(())
}

// train -----------------------------------------------------------------------

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.out.clone().ok_or_else(|| CliError::config("an output directory is required (--out or \"out\")"))
}

/// Fits the configured model on prepared data; the epoch log is empty for
/// forests.
fn fit(cfg: &RunConfig, p: &Prepared, theta: f64, seed: u64) -> Result<(Model, Vec<lacforest::neural::EpochLog>), CliError> {
    let (mut model, log) = match cfg.mode {
        Mode::Forest => {
            let params = ForestParams {
                m: cfg.m,
                tau: cfg.tau,
                gamma: cfg.gamma,
                theta,
                seed,
                min_reduction: cfg.min_reduction,
            };
            (Model::Forest(train_lacforest(&p.labeled, &p.unlabeled, &params)?), Vec::new())
        }
        Mode::Neural => {
            let (m, log) = train_neural_with_log(&p.labeled, &p.unlabeled, theta, &cfg.neural.train_config(seed))?;
            (Model::Neural(m), log)
        }
    };
    model.set_manifest(p.manifest.clone());
    Ok((model, log))
}

pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn evaluate(model: &Model, test: &LabeledSet, ties: AucTies) -> Result<Evaluation, CliError> {
    if test.dim() != model.dim() {
        return Err(CliError::data(format!("test data has {} features, model expects {}", test.dim(), model.dim())));
    }
    let predictions = test
        .features
        .par_iter()
        .map(|x| model.predict(x))
        .collect::<lacforest::Result<Vec<_>>>()?;
    let scores = test
        .features
        .par_iter()
        .map(|x| model.augmented_score(x))
        .collect::<lacforest::Result<Vec<_>>>()?;
    let report = EvalReport::compute(&predictions, &test.labels, &scores, model.num_known(), ties)?;
    Ok(Evaluation {
        report,
        predictions,
        scores,
    })
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model_type: &'a str,
    n_test: usize,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn write_eval(out: &Path, model: &Model, eval: &Evaluation) -> Result<Vec<String>, CliError> {
    let output = EvalOutput {
        model_type: model.model_type(),
        n_test: eval.predictions.len(),
        report: &eval.report,
    };
    write_json(&out.join("report.json"), &output)?;
    let mut w = csv::Writer::from_writer(create(&out.join("predictions.csv"))?);
    w.write_record(["prediction", "label", "augmented_score"]).map_err(csv_err)?;
    for (&p, s) in eval.predictions.iter().zip(&eval.scores) {
        w.write_record([p.to_string(), label_name(model.manifest(), p), s.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))?;
    Ok(vec!["report.json".into(), "predictions.csv".into()])
}

fn print_report(r: &EvalReport) {
    let auc = r.detection_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    say!("accuracy {:.4}  macro_f1 {:.4}  detection_auc {auc}", r.accuracy, r.macro_f1);
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let out = out_dir(cfg)?;
    let p = data::prepare(cfg, cfg.theta(), None, cfg.seed)?;
    let (model, log) = fit(cfg, &p, cfg.theta(), cfg.seed)?;
    create_dir(&out)?;
    model.save(&out.join("model.json"))?;
    let mut artifacts = vec!["model.json".to_string()];
    if cfg.mode == Mode::Neural {
        write_epoch_csv(create(&out.join("training_log.csv"))?, &log)?;
        artifacts.push("training_log.csv".into());
    }
    if let Some(test) = &p.test {
        let eval = evaluate(&model, test, AucTies::Half)?;
        artifacts.extend(write_eval(&out, &model, &eval)?);
        print_report(&eval.report);
    }
    write_run_manifest(&out, "train", cfg, cfg.seed, artifacts)?;
    say!("model written to {}", out.join("model.json").display());
    Ok(())
}

pub fn show_config(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::config(e.to_string()))?;
    say!("{text}");
    Ok(())
}

// eval ------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalSettings<'a> {
    model: &'a Path,
    test: &'a Path,
    label_column: &'a str,
    strict_ties: bool,
}

pub fn eval(model_path: &Path, test_path: &Path, label_column: &str, out: Option<&Path>, strict_ties: bool) -> Result<(), CliError> {
    let model = Model::load(model_path).map_err(|e| CliError::data(format!("{}: {e}", model_path.display())))?;
    let kappa = model.num_known();
    let fallback: LabelMap;
    let label_map = match model.manifest() {
        Some(m) => &m.label_map,
        None => {
            fallback = (1..=kappa).map(|k| (k.to_string(), k)).collect();
            &fallback
        }
    };
    let mut test = data::load_test(test_path, label_column, label_map)?;
    if test.dim() != model.dim() {
        return Err(CliError::data(format!("test data has {} features, model expects {}", test.dim(), model.dim())));
    }
    if let Some(m) = model.manifest() {
        let norm = lacforest::dataset::Normalization {
            ranges: m.normalization.clone(),
        };
        norm.apply(&mut test.features);
    }
    let ties = if strict_ties { AucTies::Strict } else { AucTies::Half };
    let eval = evaluate(&model, &test, ties)?;
    let output = EvalOutput {
        model_type: model.model_type(),
        n_test: test.len(),
        report: &eval.report,
    };
    say!("{}", serde_json::to_string_pretty(&output).map_err(|e| CliError::data(e.to_string()))?);
    if let Some(out) = out {
        create_dir(out)?;
        let artifacts = write_eval(out, &model, &eval)?;
        let settings = EvalSettings {
            model: model_path,
            test: test_path,
            label_column,
            strict_ties,
        };
        write_run_manifest(out, "eval", &settings, 0, artifacts)?;
    }
    Ok(())
}

// sweep -----------------------------------------------------------------------

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let block = cfg.sweep.clone().ok_or_else(|| CliError::config("sweep settings are required (--axis/--grid or \"sweep\")"))?;
    cfg.validate()?;
    if cfg.source.is_none() && cfg.test.is_none() {
        return Err(CliError::config("sweep needs test data (test path or source)"));
    }
    let out = out_dir(cfg)?;
    create_dir(&out)?;
    let mut w = csv::Writer::from_writer(create(&out.join("sweep.csv"))?);
    w.write_record(["axis", "value", "seed", "accuracy", "macro_f1", "detection_auc"])
        .map_err(csv_err)?;
    for &value in &block.grid {
        let mut point = cfg.clone();
        let mut theta = cfg.theta();
        let mut n_u = None;
        match block.axis {
            Axis::Theta => theta = value,
            Axis::NU => n_u = Some(value as usize),
            Axis::LambdaCe => point.neural.lambda_ce = value,
            Axis::Depth => point.neural.depth = value as usize,
        }
        for i in 0..block.seeds {
            let seed = cfg.seed + i as u64;
            let p = data::prepare(&point, theta, n_u, seed)?;
            let (model, _) = fit(&point, &p, theta, seed)?;
            let test = p.test.as_ref().ok_or_else(|| CliError::data("split produced no test rows"))?;
            let r = evaluate(&model, test, AucTies::Half)?.report;
            w.write_record([
                block.axis.name().to_string(),
                block.axis.format(value),
                seed.to_string(),
                r.accuracy.to_string(),
                r.macro_f1.to_string(),
                r.detection_auc.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
            say!(
                "{}={} seed={seed} accuracy={:.4} macro_f1={:.4}",
                block.axis.name(),
                block.axis.format(value),
                r.accuracy,
                r.macro_f1
            );
        }
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))?;
    write_run_manifest(&out, "sweep", cfg, cfg.seed, vec!["sweep.csv".into()])
}

// check -----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    Gradients,
    Convergence,
    OracleSplits,
    SimplexLemma,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSettings {
    pub which: Which,
    pub seed: u64,
    pub trials: usize,
    pub points: usize,
    pub nodes: usize,
    pub configs: usize,
    pub inject_gradient_error: f64,
}

pub fn check(s: &CheckSettings, out: Option<&Path>) -> Result<(), CliError> {
    let run = |w: Which| s.which == w || s.which == Which::All;
    let mut reports: Vec<CheckReport> = Vec::new();
    let mut curves = Vec::new();
    if run(Which::SimplexLemma) {
        reports.push(checks::simplex_lemma(s.points, s.seed)?);
    }
    if run(Which::OracleSplits) {
        reports.push(checks::oracle_splits(s.nodes, s.seed)?);
    }
    if run(Which::Gradients) {
        reports.push(checks::gradient_check(s.configs, s.seed, s.inject_gradient_error)?);
    }
    if run(Which::Convergence) {
        let (report, hard, soft) = checks::convergence(s.trials, s.seed)?;
        reports.push(report);
        curves.push(("convergence_hard.csv", hard));
        curves.push(("convergence_soft.csv", soft));
    }
    for r in &reports {
        for m in &r.measurements {
            let verdict = if m.passed { "PASS" } else { "FAIL" };
            say!("{verdict} {}: {} = {:.6e} ({})", r.check, m.name, m.value, m.condition);
        }
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_json(&out.join("check_report.json"), &reports)?;
        let mut artifacts = vec!["check_report.json".to_string()];
        for (name, curve) in &curves {
            curve.write_csv(create(&out.join(name))?)?;
            artifacts.push((*name).into());
        }
        write_run_manifest(out, "check", s, s.seed, artifacts)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::check(format!("failed checks: {}", failed.join(", "))))
    }
}
