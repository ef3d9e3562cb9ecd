//! Model checkpoints: a versioned JSON document holding the architecture
//! config and every named parameter blob.
//!
//! ```json
//! { "version": 1, "kind": "classifier", "config": { ... },
//!   "params": [ { "name": "conv1.weight", "shape": [8, 3, 3, 3], "data": [ ... ] } ] }
//! ```

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Classifier,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub params: Vec<ParamBlob>,
}

impl ModelCheckpoint {
    pub fn new<C: Serialize>(kind: ModelKind, config: &C, params: &ParamSet) -> Result<Self> {
        Ok(ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            kind,
            config: serde_json::to_value(config)?,
            params: params
                .iter()
                .map(|(name, t)| ParamBlob {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        })
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config does not match {:?} model: {e}", self.kind)))
    }

    /// Copies blobs into `params` by name; every parameter must be present
    /// with a matching shape.
    pub fn load_into(&self, params: &mut ParamSet) -> Result<()> {
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                names.len()
            )));
        }
        for name in names {
            let id = params.find(&name).expect("name taken from the set");
            let blob = self
                .params
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let target = params.get_mut(id);
            if blob.shape != target.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    blob.shape,
                    target.shape()
                )));
            }
            let t = Tensor::new(blob.shape.clone(), blob.data.clone())?;
            target.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: ModelCheckpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
