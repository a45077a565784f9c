//! Either trained model kind behind one interface, dispatched on the
//! `model_type` field of the serialized JSON.

use std::path::Path;

use serde::Deserialize;

use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::forest::{LACForestModel, LACFOREST_MODEL_TYPE};
use crate::neural::{NeuralForestModel, NEURAL_MODEL_TYPE};

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(LACForestModel),
    Neural(NeuralForestModel),
}

#[derive(Deserialize)]
struct Header {
    model_type: String,
}

impl Model {
    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)?;
        match header.model_type.as_str() {
            LACFOREST_MODEL_TYPE => Ok(Self::Forest(LACForestModel::from_json(text)?)),
            NEURAL_MODEL_TYPE => Ok(Self::Neural(NeuralForestModel::from_json(text)?)),
            other => Err(Error::invalid(format!("unknown model_type '{other}'"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::Forest(m) => m.save(path),
            Self::Neural(m) => m.save(path),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Self::Forest(m) => m.to_json(),
            Self::Neural(m) => m.to_json(),
        }
    }

    pub fn model_type(&self) -> &str {
        match self {
            Self::Forest(m) => &m.model_type,
            Self::Neural(m) => &m.model_type,
        }
    }

    pub fn num_known(&self) -> usize {
        match self {
            Self::Forest(m) => m.num_known,
            Self::Neural(m) => m.num_known,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Forest(m) => m.dim,
            Self::Neural(m) => m.dim,
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            Self::Forest(m) => m.theta,
            Self::Neural(m) => m.theta,
        }
    }

    pub fn manifest(&self) -> Option<&Manifest> {
        match self {
            Self::Forest(m) => m.manifest.as_ref(),
            Self::Neural(m) => m.manifest.as_ref(),
        }
    }

    pub fn set_manifest(&mut self, manifest: Manifest) {
        match self {
            Self::Forest(m) => m.manifest = Some(manifest),
            Self::Neural(m) => m.manifest = Some(manifest),
        }
    }

    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Forest(m) => m.predict_scores(x),
            Self::Neural(m) => m.predict_scores(x),
        }
    }

    /// 1-based label in `1..=κ+1`.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        match self {
            Self::Forest(m) => m.predict(x),
            Self::Neural(m) => m.predict(x),
        }
    }

    pub fn augmented_score(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Forest(m) => m.augmented_score(x),
            Self::Neural(m) => m.augmented_score(x),
        }
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn augmented_scores(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.augmented_score(x)).collect()
    }
}
