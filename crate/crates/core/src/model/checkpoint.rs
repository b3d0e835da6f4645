use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, Lsdan, ModelError, NetworkConfig, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "lsdan-checkpoint";

/// JSON checkpoint: the network configuration and, per layer, the
/// `transform`, `score` and `key_transform` tensors as
/// `{rows, cols, data}` with row-major `data`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    pub layers: Vec<LayerParams>,
}

pub fn save_checkpoint(model: &Lsdan, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format: FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        layers: model.layers().to_vec(),
    };
    let json = serde_json::to_string_pretty(&ckpt)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(path, json).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Lsdan> {
    let text = fs::read_to_string(path)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if ckpt.format != FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    for p in &ckpt.layers {
        for t in [&p.transform, &p.score, &p.key_transform] {
            if t.len() != t.rows() * t.cols() {
                return Err(ModelError::Checkpoint("tensor data does not match its shape".into()));
            }
        }
    }
    Lsdan::from_params(ckpt.config, ckpt.layers)
}
