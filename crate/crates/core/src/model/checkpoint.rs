use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MatchingModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamKind, Scalar, Tensor};

const FORMAT: &str = "advrank-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamRecord<T> {
    name: String,
    kind: ParamKind,
    trainable: bool,
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BufferRecord<T> {
    name: String,
    data: Vec<T>,
}

/// Self-describing JSON archive of a [`MatchingModel`].
///
/// Floats are written in shortest round-trip form, so save → load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    format: String,
    version: u32,
    scalar: String,
    pub config: ModelConfig,
    pub seed: u64,
    params: Vec<ParamRecord<T>>,
    buffers: Vec<BufferRecord<T>>,
    /// Token list indexed by id, when the model was trained against a known vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &MatchingModel<T>, vocabulary: Option<Vec<String>>) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            scalar: T::NAME.to_string(),
            config: model.config.clone(),
            seed: model.seed,
            params: model
                .params
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    kind: p.kind,
                    trainable: p.tensor.requires_grad(),
                    shape: p.tensor.shape().to_vec(),
                    data: p.tensor.data().to_vec(),
                })
                .collect(),
            buffers: model
                .buffers()
                .into_iter()
                .map(|(name, data)| BufferRecord {
                    name,
                    data: data.to_vec(),
                })
                .collect(),
            vocabulary,
        }
    }

    /// Rebuilds the model; every parameter and buffer must be present with its configured shape.
    pub fn to_model(&self) -> Result<MatchingModel<T>> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported archive {} v{}",
                self.format, self.version
            )));
        }
        if self.scalar != T::NAME {
            return Err(Error::Checkpoint(format!(
                "archive holds {} values, expected {}",
                self.scalar,
                T::NAME
            )));
        }
        let mut model = MatchingModel::new(self.config.clone(), self.seed)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, archive has {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for rec in &self.params {
            let id = model
                .params
                .find(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", rec.name)))?;
            let p = model.params.get_mut(id);
            if p.tensor.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    rec.name,
                    rec.shape,
                    p.tensor.shape()
                )));
            }
            let mut t = Tensor::new(rec.shape.clone(), rec.data.clone())?;
            t.set_requires_grad(rec.trainable);
            p.tensor = t;
            p.kind = rec.kind;
        }
        for rec in &self.buffers {
            let buf = model
                .buffer_mut(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown buffer {}", rec.name)))?;
            if buf.len() != rec.data.len() {
                return Err(Error::Checkpoint(format!("buffer {} has wrong length", rec.name)));
            }
            buf.copy_from_slice(&rec.data);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl<T: Scalar> MatchingModel<T> {
    pub fn save(&self, path: impl AsRef<Path>, vocabulary: Option<Vec<String>>) -> Result<()> {
        Checkpoint::from_model(self, vocabulary).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.to_model()
    }
}
