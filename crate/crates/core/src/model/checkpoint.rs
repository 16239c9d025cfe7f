use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub dev_consistency: f64,
    pub config_hash: String,
}

fn ckpt_err(path: &Path, e: impl ToString) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Write `model.json` and `meta.json` into `dir`, creating it if needed.
pub fn save_checkpoint<M: Serialize>(dir: &Path, model: &M, meta: &CheckpointMeta) -> Result<(), ModelError> {
    fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e))?;
    let model_path = dir.join("model.json");
    let body = serde_json::to_vec(model).map_err(|e| ckpt_err(&model_path, e))?;
    fs::write(&model_path, body).map_err(|e| ckpt_err(&model_path, e))?;
    let meta_path = dir.join("meta.json");
    let body = serde_json::to_vec_pretty(meta).map_err(|e| ckpt_err(&meta_path, e))?;
    fs::write(&meta_path, body).map_err(|e| ckpt_err(&meta_path, e))
}

pub fn load_checkpoint<M: DeserializeOwned>(dir: &Path) -> Result<(M, CheckpointMeta), ModelError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| ckpt_err(&path, e))
    };
    let model = serde_json::from_slice(&read("model.json")?).map_err(|e| ckpt_err(dir, e))?;
    let meta = serde_json::from_slice(&read("meta.json")?).map_err(|e| ckpt_err(dir, e))?;
    Ok((model, meta))
}
