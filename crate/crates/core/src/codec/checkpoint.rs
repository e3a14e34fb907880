//! Versioned JSON checkpoint of a [`CodecModel`].
//!
//! ```text
//! {
//!   "format": "qv2x-ckpt/1",
//!   "circuit": <qv2x-desc/1 descriptor of the convolution ansatz>,
//!   "ansatz": {"layers": L},
//!   "latent_wires": [...],
//!   "conv_params": [...],
//!   "head": {"rows", "cols", "weights" (row-major), "bias"},
//!   "decoder": {...},
//!   "metadata": {"seed", "epoch", "hyper": {"lr", "optimizer", "batch_size", "lambda"}}
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{CodecModel, ConvAnsatz, Dense};
use super::train::TrainHyper;
use crate::error::{Error, Result};
use crate::qcore::Descriptor;

pub const CHECKPOINT_FORMAT: &str = "qv2x-ckpt/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub hyper: TrainHyper,
    /// Identifies the run configuration that produced the checkpoint.
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub circuit: Descriptor,
    pub ansatz: ConvAnsatz,
    pub latent_wires: Vec<usize>,
    pub conv_params: Vec<f64>,
    pub head: Dense,
    pub decoder: Dense,
    pub metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: &CodecModel, metadata: CheckpointMeta) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            circuit: Descriptor::from_circuit(&model.ansatz.circuit()),
            ansatz: model.ansatz,
            latent_wires: model.latent_wires.clone(),
            conv_params: model.conv_params.clone(),
            head: model.head.clone(),
            decoder: model.decoder.clone(),
            metadata,
        }
    }

    /// Rebuilds the model, checking the stored circuit against the ansatz.
    pub fn model(&self) -> Result<CodecModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unknown checkpoint format {:?}",
                self.format
            )));
        }
        if self.circuit.to_circuit()? != self.ansatz.circuit() {
            return Err(Error::Integrity(
                "circuit descriptor does not match ansatz".into(),
            ));
        }
        let model = CodecModel {
            ansatz: self.ansatz,
            conv_params: self.conv_params.clone(),
            latent_wires: self.latent_wires.clone(),
            head: self.head.clone(),
            decoder: self.decoder.clone(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
