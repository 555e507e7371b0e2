//! Parameter checkpoints: a JSON document holding free-form metadata and a
//! flat list of `(name, shape, row-major values)`. Values are written with
//! shortest round-trip formatting and parsed exactly, so save/load is
//! bit-exact for `f64` and `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

pub const CHECKPOINT_FORMAT: &str = "graphcl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<'a, T: Scalar>(
        metadata: serde_json::Value,
        tensors: impl IntoIterator<Item = (String, &'a Tensor<T>)>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            metadata,
            tensors: tensors
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.to_f64_vec(),
                })
                .collect(),
        }
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let named = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no tensor named {name:?}")))?;
        Tensor::new(named.shape.clone(), named.values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let checkpoint: Self = serde_json::from_str(text)?;
        if checkpoint.format != CHECKPOINT_FORMAT || checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                checkpoint.format, checkpoint.version
            )));
        }
        Ok(checkpoint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let t = Tensor::vector(values.clone());
            let single = Tensor::<f32>::vector(values.iter().map(|&v| v as f32).filter(|v| v.is_finite()).collect());
            let ck = Checkpoint::new(serde_json::json!({"k": 1}), [("w".to_string(), &t)]);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let restored: Tensor<f64> = back.tensor("w").unwrap();
            prop_assert!(restored.data().iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));

            let ck32 = Checkpoint::new(serde_json::Value::Null, [("s".to_string(), &single)]);
            let back32: Tensor<f32> = Checkpoint::from_json(&ck32.to_json().unwrap()).unwrap().tensor("s").unwrap();
            prop_assert!(back32.data().iter().zip(single.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn rejects_foreign_documents() {
        let text = r#"{"format":"other","version":1,"tensors":[]}"#;
        assert!(Checkpoint::from_json(text).is_err());
        let ck = Checkpoint::new::<f64>(serde_json::Value::Null, []);
        assert!(ck.tensor::<f64>("missing").is_err());
    }
}
