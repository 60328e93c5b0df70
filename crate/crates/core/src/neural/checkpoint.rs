//! JSON weight checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Mat;

use super::{Param, Parameterized};

pub const CHECKPOINT_FORMAT: &str = "seqkf-weights";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown checkpoint format {found:?}")]
    Format { found: String },
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn capture<M: Parameterized + ?Sized>(model: &M) -> Checkpoint {
        let tensors = model
            .params()
            .into_iter()
            .map(|(name, p)| {
                let (r, c) = p.shape();
                TensorRecord { name, shape: [r, c], values: p.value.data().to_vec() }
            })
            .collect();
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, tensors }
    }

    /// Copies the stored values into `model`. Optimizer state is reset.
    pub fn restore<M: Parameterized + ?Sized>(&self, model: &mut M) -> Result<(), CheckpointError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format { found: self.format.clone() });
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: self.version });
        }
        let expected: Vec<(String, (usize, usize))> = model.params().into_iter().map(|(n, p)| (n, p.shape())).collect();
        if expected.len() != self.tensors.len() {
            return Err(CheckpointError::Mismatch(format!(
                "model has {} tensors, checkpoint has {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != (t.shape[0], t.shape[1]) || t.values.len() != shape.0 * shape.1 {
                return Err(CheckpointError::Mismatch(format!(
                    "expected {name} {shape:?}, found {} {:?} with {} values",
                    t.name,
                    t.shape,
                    t.values.len()
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Mismatch(format!("{} holds non-finite values", t.name)));
            }
        }
        for (p, t) in model.params_mut().into_iter().zip(&self.tensors) {
            *p = Param::new(Mat::new(t.shape[0], t.shape[1], t.values.clone()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Checkpoint, CheckpointError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Dense, LstmStack};
    use crate::numerics::rng_from_seed;

    #[test]
    fn round_trip_restores_identical_outputs() {
        let net = LstmStack::new(1, 4, 2, 1, &mut rng_from_seed(7));
        let json = Checkpoint::capture(&net).to_json();
        let mut other = LstmStack::new(1, 4, 2, 1, &mut rng_from_seed(8));
        assert_ne!(net, other);
        Checkpoint::from_json(&json).unwrap().restore(&mut other).unwrap();
        let xs: Vec<Mat> = (0..3).map(|t| Mat::from_fn(1, 2, |_, j| (t + 2 * j) as f64)).collect();
        assert_eq!(net.predict(&xs), other.predict(&xs));
    }

    #[test]
    fn rejects_foreign_and_mismatched_checkpoints() {
        let d = Dense::new(2, 3, &mut rng_from_seed(0));
        let mut ck = Checkpoint::capture(&d);
        let mut wrong = Dense::new(3, 3, &mut rng_from_seed(0));
        assert!(matches!(ck.restore(&mut wrong), Err(CheckpointError::Mismatch(_))));
        ck.version = 99;
        let mut same = d.clone();
        assert!(matches!(ck.restore(&mut same), Err(CheckpointError::Version { found: 99 })));
        ck.version = CHECKPOINT_VERSION;
        ck.format = "other".into();
        assert!(matches!(ck.restore(&mut same), Err(CheckpointError::Format { .. })));
    }
}
