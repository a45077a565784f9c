//! Python module `pylacforest`: forest and neural models, the augmented
//! Gini impurity, metrics, synthetic data and the self-checks.
//!
//! Feature matrices are lists of rows; labels are 1-based integers with
//! the augmented class at `κ + 1`.

use lacforest::checks;
use lacforest::dataset::{generate_synthetic, make_shift_split, LabeledSet, ShiftSplitConfig, SyntheticSpec, UnlabeledSet};
use lacforest::forest::{train_lacforest, ForestParams, LACForestModel};
use lacforest::impurity::{augmented_gini as gini, vartheta_vector, NodeStats};
use lacforest::metrics::{self, AucTies};
use lacforest::model::Model;
use lacforest::neural::{train_neural_with_log, Activation, EncoderConfig, NeuralForestModel, TrainConfig};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: lacforest::Error) -> PyErr {
    match e {
        lacforest::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn labeled(x: Vec<Vec<f64>>, y: Vec<usize>) -> PyResult<LabeledSet> {
    if y.contains(&0) {
        return Err(PyValueError::new_err("labels are 1-based"));
    }
    let kappa = y.iter().copied().max().unwrap_or(0);
    LabeledSet::new(x, y, kappa).map_err(err)
}

fn not_fitted() -> PyErr {
    PyRuntimeError::new_err("model is not fitted")
}

fn predict_all(model: &Model, x: &[Vec<f64>]) -> PyResult<Vec<usize>> {
    model.predict_batch(x).map_err(err)
}

fn scores_all(model: &Model, x: &[Vec<f64>]) -> PyResult<Vec<Vec<f64>>> {
    x.iter().map(|r| model.predict_scores(r)).collect::<lacforest::Result<_>>().map_err(err)
}

/// Two-step random forest for augmented-class learning.
#[pyclass(name = "LACForest", module = "pylacforest")]
struct PyLACForest {
    params: ForestParams,
    model: Option<Model>,
}

impl PyLACForest {
    fn model(&self) -> PyResult<&Model> {
        self.model.as_ref().ok_or_else(not_fitted)
    }

    fn wrap(m: LACForestModel) -> Self {
        Self {
            params: ForestParams {
                m: m.m,
                tau: Some(m.tau),
                gamma: m.gamma,
                theta: m.theta,
                seed: m.seed,
                min_reduction: m.min_reduction,
            },
            model: Some(Model::Forest(m)),
        }
    }
}

#[pymethods]
impl PyLACForest {
    #[new]
    #[pyo3(signature = (theta, m = 100, tau = None, gamma = 0.01, seed = 0))]
    fn new(theta: f64, m: usize, tau: Option<usize>, gamma: f64, seed: u64) -> Self {
        Self {
            params: ForestParams {
                m,
                tau,
                gamma,
                theta,
                seed,
                min_reduction: None,
            },
            model: None,
        }
    }

    /// Fits on labeled rows (labels `1..=κ`) and unlabeled rows.
    fn fit(&mut self, x_labeled: Vec<Vec<f64>>, y_labeled: Vec<usize>, x_unlabeled: Vec<Vec<f64>>) -> PyResult<()> {
        let l = labeled(x_labeled, y_labeled)?;
        let u = UnlabeledSet::new(x_unlabeled).map_err(err)?;
        self.model = Some(Model::Forest(train_lacforest(&l, &u, &self.params).map_err(err)?));
        Ok(())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        predict_all(self.model()?, &x)
    }

    /// Summed leaf distributions over `κ + 1` classes, one row per input.
    fn predict_scores(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        scores_all(self.model()?, &x)
    }

    fn augmented_score(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.model()?.augmented_scores(&x).map_err(err)
    }

    #[getter]
    fn num_known(&self) -> PyResult<usize> {
        Ok(self.model()?.num_known())
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.params.theta
    }

    fn to_json(&self) -> PyResult<String> {
        self.model()?.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        LACForestModel::from_json(text).map(Self::wrap).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.model()?.save(path.as_ref()).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        LACForestModel::load(path.as_ref()).map(Self::wrap).map_err(err)
    }
}

fn activation(name: &str) -> PyResult<Activation> {
    match name {
        "identity" => Ok(Activation::Identity),
        "logistic" => Ok(Activation::Logistic),
        "rectifier" => Ok(Activation::Rectifier),
        other => Err(PyValueError::new_err(format!("unknown activation '{other}'"))),
    }
}

/// Soft-tree model trained with the augmented Gini and cross-entropy losses.
#[pyclass(name = "NeuralLACForest", module = "pylacforest")]
struct PyNeuralLACForest {
    theta: f64,
    config: TrainConfig,
    model: Option<Model>,
    /// Mean total loss per epoch from the last fit.
    #[pyo3(get)]
    loss_history: Vec<f64>,
}

impl PyNeuralLACForest {
    fn model(&self) -> PyResult<&Model> {
        self.model.as_ref().ok_or_else(not_fitted)
    }

    fn wrap(m: NeuralForestModel) -> Self {
        Self {
            theta: m.theta,
            config: m.config.clone(),
            model: Some(Model::Neural(m)),
            loss_history: Vec::new(),
        }
    }
}

#[pymethods]
impl PyNeuralLACForest {
    #[new]
    #[pyo3(signature = (
        theta, num_trees = 3, depth = 6, epochs = 500, batch_labeled = 512, batch_unlabeled = 512,
        lambda_ce = 1.0, lr_initial = 1e-2, lr_final = 1e-3, weight_decay = 5e-3, seed = 0,
        encoder_output_dim = None, encoder_hidden_dim = None, activation = "identity"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        theta: f64,
        num_trees: usize,
        depth: usize,
        epochs: usize,
        batch_labeled: usize,
        batch_unlabeled: usize,
        lambda_ce: f64,
        lr_initial: f64,
        lr_final: f64,
        weight_decay: f64,
        seed: u64,
        encoder_output_dim: Option<usize>,
        encoder_hidden_dim: Option<usize>,
        activation: &str,
    ) -> PyResult<Self> {
        let config = TrainConfig {
            num_trees,
            depth,
            epochs,
            batch_labeled,
            batch_unlabeled,
            lambda_ce,
            lr_initial,
            lr_final,
            weight_decay,
            seed,
            encoder: EncoderConfig {
                output_dim: encoder_output_dim,
                hidden_dim: encoder_hidden_dim,
                activation: self::activation(activation)?,
            },
            ..TrainConfig::default()
        };
        config.validate().map_err(err)?;
        Ok(Self {
            theta,
            config,
            model: None,
            loss_history: Vec::new(),
        })
    }

    fn fit(&mut self, x_labeled: Vec<Vec<f64>>, y_labeled: Vec<usize>, x_unlabeled: Vec<Vec<f64>>) -> PyResult<()> {
        let l = labeled(x_labeled, y_labeled)?;
        let u = UnlabeledSet::new(x_unlabeled).map_err(err)?;
        let (model, log) = train_neural_with_log(&l, &u, self.theta, &self.config).map_err(err)?;
        self.loss_history = log.iter().map(|e| e.total).collect();
        self.model = Some(Model::Neural(model));
        Ok(())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        predict_all(self.model()?, &x)
    }

    fn predict_scores(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        scores_all(self.model()?, &x)
    }

    fn augmented_score(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.model()?.augmented_scores(&x).map_err(err)
    }

    #[getter]
    fn num_known(&self) -> PyResult<usize> {
        Ok(self.model()?.num_known())
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.theta
    }

    fn to_json(&self) -> PyResult<String> {
        self.model()?.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        NeuralForestModel::from_json(text).map(Self::wrap).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.model()?.save(path.as_ref()).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        NeuralForestModel::load(path.as_ref()).map(Self::wrap).map_err(err)
    }
}

/// Loads either model kind from a JSON file.
#[pyfunction]
fn load_model(py: Python<'_>, path: &str) -> PyResult<Py<PyAny>> {
    Ok(match Model::load(path.as_ref()).map_err(err)? {
        Model::Forest(m) => Py::new(py, PyLACForest::wrap(m))?.into_any(),
        Model::Neural(m) => Py::new(py, PyNeuralLACForest::wrap(m))?.into_any(),
    })
}

fn node_stats(n_l: u64, n_u: u64, node_l: u64, node_u: u64, class_counts: Vec<u64>, theta: f64) -> NodeStats {
    NodeStats {
        n_l,
        n_u,
        node_l,
        node_u,
        class_counts,
        theta,
    }
}

/// Estimated class distribution of a node over `κ + 1` classes.
#[pyfunction]
fn vartheta(n_l: u64, n_u: u64, node_l: u64, node_u: u64, class_counts: Vec<u64>, theta: f64) -> Vec<f64> {
    vartheta_vector(&node_stats(n_l, n_u, node_l, node_u, class_counts, theta)).0
}

#[pyfunction]
fn augmented_gini(n_l: u64, n_u: u64, node_l: u64, node_u: u64, class_counts: Vec<u64>, theta: f64) -> f64 {
    gini(&node_stats(n_l, n_u, node_l, node_u, class_counts, theta))
}

#[pyfunction]
fn accuracy(predictions: Vec<usize>, truths: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&predictions, &truths).map_err(err)
}

#[pyfunction]
fn macro_f1(predictions: Vec<usize>, truths: Vec<usize>, num_known: usize) -> PyResult<f64> {
    metrics::macro_f1(&predictions, &truths, num_known).map_err(err)
}

/// `None` when the truths lack either augmented or known instances.
#[pyfunction]
#[pyo3(signature = (scores, truths, num_known, strict = false))]
fn detection_auc(scores: Vec<f64>, truths: Vec<usize>, num_known: usize, strict: bool) -> PyResult<Option<f64>> {
    let ties = if strict { AucTies::Strict } else { AucTies::Half };
    metrics::detection_auc(&scores, &truths, num_known, ties).map_err(err)
}

/// Three known Gaussian classes and one augmented cluster in 2-D, scaled
/// into the unit square. Returns `(X, y)` with the augmented class as 4.
#[pyfunction]
#[pyo3(signature = (count_per_cluster = 1500, seed = 0))]
fn four_cluster_benchmark(count_per_cluster: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let set = generate_synthetic(&SyntheticSpec::four_cluster_benchmark(count_per_cluster, seed)).map_err(err)?;
    Ok((set.features, set.labels))
}

/// Class-shift split of a labeled source.
#[pyfunction]
#[pyo3(signature = (x, y, theta = 0.5, n_l = 500, n_u = 1000, n_test = 100, augmented_class_fraction = 0.5, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn shift_split<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    theta: f64,
    n_l: usize,
    n_u: usize,
    n_test: usize,
    augmented_class_fraction: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let full = labeled(x, y)?;
    let cfg = ShiftSplitConfig {
        augmented_class_fraction,
        theta,
        n_l,
        n_u,
        n_test,
        seed,
    };
    let s = make_shift_split(&full, &cfg).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("x_labeled", s.labeled.features)?;
    d.set_item("y_labeled", s.labeled.labels)?;
    d.set_item("x_unlabeled", s.unlabeled.features)?;
    d.set_item("y_unlabeled", s.unlabeled_truth)?;
    d.set_item("x_test", s.test.features)?;
    d.set_item("y_test", s.test.labels)?;
    d.set_item("known_classes", s.known_source_classes)?;
    d.set_item("augmented_classes", s.augmented_source_classes)?;
    d.set_item("realized_fraction", s.realized_unlabeled_augmented_fraction)?;
    Ok(d)
}

/// Runs one self-check and returns `(passed, report_json)`.
#[pyfunction]
#[pyo3(signature = (name, seed = 0))]
fn run_check(name: &str, seed: u64) -> PyResult<(bool, String)> {
    let report = match name {
        "simplex-lemma" => checks::simplex_lemma(500, seed),
        "oracle-splits" => checks::oracle_splits(1000, seed),
        "gradients" => checks::gradient_check(20, seed, 0.0),
        "convergence" => checks::convergence(200, seed).map(|r| r.0),
        other => return Err(PyValueError::new_err(format!("unknown check '{other}'"))),
    }
    .map_err(err)?;
    let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((report.passed, text))
}

#[pymodule]
pub fn pylacforest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLACForest>()?;
    m.add_class::<PyNeuralLACForest>()?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(vartheta, m)?)?;
    m.add_function(wrap_pyfunction!(augmented_gini, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(detection_auc, m)?)?;
    m.add_function(wrap_pyfunction!(four_cluster_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(shift_split, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    Ok(())
}
