use std::path::{Path, PathBuf};

use lacforest::neural::{Activation, EncoderConfig, TrainConfig};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Two-step random forest.
    #[default]
    Forest,
    /// Soft trees trained by gradient descent.
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, clap::ValueEnum)]
pub enum Axis {
    #[serde(rename = "theta")]
    #[value(name = "theta")]
    Theta,
    #[serde(rename = "n_u")]
    #[value(name = "n_u")]
    NU,
    #[serde(rename = "lambda_ce")]
    #[value(name = "lambda_ce")]
    LambdaCe,
    #[serde(rename = "depth")]
    #[value(name = "depth")]
    Depth,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::NU => "n_u",
            Axis::LambdaCe => "lambda_ce",
            Axis::Depth => "depth",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Axis::NU | Axis::Depth)
    }

    pub fn format(self, v: f64) -> String {
        if self.is_integer() {
            format!("{}", v as u64)
        } else {
            v.to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    #[default]
    Identity,
    Logistic,
    Rectifier,
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Self {
        match a {
            ActivationName::Identity => Activation::Identity,
            ActivationName::Logistic => Activation::Logistic,
            ActivationName::Rectifier => Activation::Rectifier,
        }
    }
}

/// Encoder in front of the soft trees: one affine layer, or two when
/// `hidden_dim` is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EncoderBlock {
    /// Width of the encoded representation; defaults to the input width.
    #[serde(default)]
    pub output_dim: Option<usize>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub activation: ActivationName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralBlock {
    /// Number of soft trees.
    pub num_trees: usize,
    /// Tree depth l; each tree has 2^l leaves.
    pub depth: usize,
    /// Epoch count T.
    pub epochs: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub lambda_ce: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    /// Floor inside logarithms and ratios.
    pub eps: f64,
    pub encoder: EncoderBlock,
}

impl Default for NeuralBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            num_trees: t.num_trees,
            depth: t.depth,
            epochs: t.epochs,
            batch_labeled: t.batch_labeled,
            batch_unlabeled: t.batch_unlabeled,
            lambda_ce: t.lambda_ce,
            lr_initial: t.lr_initial,
            lr_final: t.lr_final,
            weight_decay: t.weight_decay,
            eps: t.eps,
            encoder: EncoderBlock::default(),
        }
    }
}

impl NeuralBlock {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            num_trees: self.num_trees,
            depth: self.depth,
            epochs: self.epochs,
            batch_labeled: self.batch_labeled,
            batch_unlabeled: self.batch_unlabeled,
            lambda_ce: self.lambda_ce,
            lr_initial: self.lr_initial,
            lr_final: self.lr_final,
            weight_decay: self.weight_decay,
            eps: self.eps,
            seed,
            encoder: EncoderConfig {
                output_dim: self.encoder.output_dim,
                hidden_dim: self.encoder.hidden_dim,
                activation: self.encoder.activation.into(),
            },
        }
    }
}

/// Class-shift sampling applied to `source`. The mixture proportion is the
/// top-level `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SplitBlock {
    pub augmented_class_fraction: f64,
    pub n_l: usize,
    pub n_u: usize,
    pub n_test: usize,
}

impl Default for SplitBlock {
    fn default() -> Self {
        Self {
            augmented_class_fraction: 0.5,
            n_l: 500,
            n_u: 1000,
            n_test: 100,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: Axis,
    pub grid: Vec<f64>,
    /// Seeds `seed, seed + 1, …` evaluated per grid value.
    #[serde(default = "one")]
    pub seeds: usize,
}

fn default_label_column() -> String {
    "label".into()
}

fn default_m() -> usize {
    100
}

fn default_gamma() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

/// Settings shared by `train` and `sweep`. Data comes either from the
/// `labeled`/`unlabeled`/`test` CSVs or from a `source` CSV split on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub labeled: Option<PathBuf>,
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitBlock,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    /// Augmented-class proportion in the unlabeled data. Required.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Number of trees.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Features tried per node; defaults to floor(sqrt(d)).
    #[serde(default)]
    pub tau: Option<usize>,
    /// Minimum labeled and unlabeled fraction per child.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub min_reduction: Option<f64>,
    /// Rescale features into [0, 1] using ranges fitted on training data.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default)]
    pub neural: NeuralBlock,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config")
    }
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::config(msg))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn theta(&self) -> f64 {
        self.theta.expect("validated")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let theta = self.theta.ok_or_else(|| CliError::config("theta is required"))?;
        check(theta > 0.0 && theta < 1.0, "theta must lie in (0, 1)")?;
        check(self.m >= 1, "m must be at least 1")?;
        check(self.tau != Some(0), "tau must be at least 1")?;
        check(self.gamma > 0.0 && self.gamma < 0.5, "gamma must lie in (0, 0.5)")?;
        if let Some(r) = self.min_reduction {
            check(r.is_finite(), "min_reduction must be finite")?;
        }
        match (&self.source, &self.labeled, &self.unlabeled) {
            (Some(_), None, None) => {
                let f = self.split.augmented_class_fraction;
                check(f > 0.0 && f < 1.0, "split.augmented_class_fraction must lie in (0, 1)")?;
                check(self.split.n_l > 0 && self.split.n_u > 0, "split sizes must be positive")?;
                check(self.test.is_none(), "test cannot be combined with source")?;
            }
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => return Err(CliError::config("use either source or labeled/unlabeled, not both")),
            _ => return Err(CliError::config("labeled and unlabeled paths (or source) are required")),
        }
        if self.mode == Mode::Neural {
            self.neural
                .train_config(self.seed)
                .validate()
                .map_err(|e| CliError::config(format!("neural: {e}")))?;
        }
        if let Some(s) = &self.sweep {
            check(!s.grid.is_empty(), "sweep.grid is empty")?;
            check(s.seeds >= 1, "sweep.seeds must be at least 1")?;
            for &v in &s.grid {
                match s.axis {
                    Axis::Theta => check(v > 0.0 && v < 1.0, format!("theta grid value {v} outside (0, 1)"))?,
                    Axis::NU => check(v >= 1.0 && v.fract() == 0.0, format!("n_u grid value {v} is not a positive integer"))?,
                    Axis::LambdaCe => check(v > 0.0 && v.is_finite(), format!("lambda_ce grid value {v} must be positive"))?,
                    Axis::Depth => check((2.0..=20.0).contains(&v) && v.fract() == 0.0, format!("depth grid value {v} outside 2..=20"))?,
                }
            }
            if matches!(s.axis, Axis::LambdaCe | Axis::Depth) {
                check(self.mode == Mode::Neural, format!("axis {} needs mode neural", s.axis.name()))?;
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of the compact JSON form.
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn schema_json() -> String {
    let schema = schemars::schema_for!(RunConfig);
    let mut text = serde_json::to_string_pretty(&schema).expect("schema serializes");
    text.push('\n');
    text
}
