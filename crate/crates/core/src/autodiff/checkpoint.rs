//! JSON-wrapped parameter checkpoints.
//!
//! Each tensor is stored as its name, shape and a base64 payload of
//! little-endian `f64` values.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default = "default_true")]
    pub requires_grad: bool,
    pub data: String,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub parameters: Vec<EncodedTensor>,
}

impl Checkpoint {
    pub fn from_parameters(params: &ParameterSet) -> Self {
        let parameters = params
            .iter()
            .map(|e| {
                let mut bytes = Vec::with_capacity(e.tensor.len() * 8);
                for v in e.tensor.values() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                EncodedTensor {
                    name: e.name.clone(),
                    shape: e.tensor.shape().to_vec(),
                    requires_grad: e.tensor.requires_grad(),
                    data: STANDARD.encode(bytes),
                }
            })
            .collect();
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            parameters,
        }
    }

    pub fn into_parameters(self) -> Result<ParameterSet> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let mut set = ParameterSet::new();
        for p in self.parameters {
            let bytes = STANDARD
                .decode(p.data.as_bytes())
                .map_err(|e| Error::Checkpoint(format!("`{}`: bad base64: {e}", p.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::Checkpoint(format!(
                    "`{}`: payload of {} bytes is not a whole number of f64",
                    p.name,
                    bytes.len()
                )));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let mut t = Tensor::new(p.shape, values)
                .map_err(|e| Error::Checkpoint(format!("`{}`: {e}", p.name)))?;
            t.set_requires_grad(p.requires_grad);
            set.push(p.name, t)?;
        }
        Ok(set)
    }
}

pub fn encode_checkpoint(params: &ParameterSet) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Checkpoint::from_parameters(params))?)
}

pub fn decode_checkpoint(text: &str) -> Result<ParameterSet> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    ck.into_parameters()
}
