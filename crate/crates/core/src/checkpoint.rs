//! JSON checkpoints shared by the classifier and the generator.
//!
//! `serde_json` renders `f64` with the shortest representation that parses
//! back to the same value, and the `float_roundtrip` feature makes parsing
//! exact, so a reloaded model is bit-identical to the saved one.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{HasParameters, Matrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format_version: u32,
    pub kind: String,
    pub config: C,
    pub vocab: Vec<String>,
    pub params: BTreeMap<String, ParamRecord>,
}

impl<C: Serialize + DeserializeOwned> Checkpoint<C> {
    pub fn capture<M: HasParameters>(kind: &str, config: C, vocab: Vec<String>, model: &M) -> Self {
        let params = model
            .parameters()
            .into_iter()
            .map(|(name, p)| {
                let (r, c) = p.shape();
                (
                    name,
                    ParamRecord {
                        shape: [r, c],
                        data: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            config,
            vocab,
            params,
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str, expected_kind: &str) -> Result<Self> {
        let ck: Checkpoint<C> = serde_json::from_str(s)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        if ck.kind != expected_kind {
            return Err(Error::Validation(format!(
                "expected a {expected_kind:?} checkpoint, found {:?}",
                ck.kind
            )));
        }
        Ok(ck)
    }

    pub fn read(path: impl AsRef<Path>, expected_kind: &str) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s, expected_kind)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Copies stored values into a freshly built model of the same shape.
    pub fn restore_into<M: HasParameters>(&self, model: &mut M) -> Result<()> {
        let mut seen = 0;
        for (name, p) in model.parameters_mut() {
            let rec = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter {name:?}")))?;
            if rec.shape != [p.value.rows(), p.value.cols()] {
                return Err(Error::Validation(format!(
                    "parameter {name:?} has shape {:?} in the checkpoint but {:?} in the model",
                    rec.shape,
                    p.shape()
                )));
            }
            p.value = Matrix::new(rec.shape[0], rec.shape[1], rec.data.clone())?;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(Error::Validation("checkpoint has parameters the model does not".into()));
        }
        Ok(())
    }
}
