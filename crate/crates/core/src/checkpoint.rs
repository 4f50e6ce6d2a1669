//! Single-file safetensors checkpoints.
//!
//! Tensors are keyed by component (`F.backbone.*`, `F.proj.*`, `H.*`, `M.*`,
//! `E_ag.*`, `E_ap.*`, `A.*`) plus `optim.m.*` / `optim.v.*` for the Adam
//! moments. The training config (JSON) and iteration live in the header
//! metadata. Writes go to a sibling temp file that is renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::model::Model;

const FORMAT: &str = "clfa-checkpoint";
const VERSION: &str = "1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Serialized training config.
    pub config_json: String,
    pub tensors: BTreeMap<String, Tensor>,
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("version".to_string(), VERSION.to_string());
    meta.insert("iteration".to_string(), ckpt.iteration.to_string());
    meta.insert("config".to_string(), ckpt.config_json.clone());
    let bytes = safetensors::serialize(ckpt.tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(meta))
        .map_err(|e| Error::Checkpoint(format!("serializing {}: {e}", path.display())))?;

    let tmp = temp_path(path);
    let written = std::fs::write(&tmp, &bytes).and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(&e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    if meta.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(bad("not a checkpoint written by this tool"));
    }
    let iteration = meta
        .get("iteration")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing iteration"))?;
    let config_json = meta.get("config").cloned().ok_or_else(|| bad("missing config"))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?.into_iter().collect();
    Ok(Checkpoint { iteration, config_json, tensors })
}

/// Copies `F.backbone.*` tensors from a safetensors file into `model`.
pub fn load_pretrained_backbone(model: &Model, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors: BTreeMap<String, Tensor> = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?.into_iter().collect();
    let n = model.load_prefixed(&tensors, "F.backbone.")?;
    log::info!("loaded {n} pretrained backbone tensors from {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn sample() -> Checkpoint {
        let mut tensors = BTreeMap::new();
        tensors.insert("H.weight".to_string(), Tensor::arange(0f32, 6.0, &Device::Cpu).unwrap().reshape((2, 3)).unwrap());
        tensors.insert("optim.m.H.weight".to_string(), Tensor::ones(3, DType::F64, &Device::Cpu).unwrap());
        Checkpoint { iteration: 7, config_json: "{\"seed\":3}".into(), tensors }
    }

    #[test]
    fn round_trip_preserves_tensors_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_7");
        save_checkpoint(&path, &sample()).unwrap();
        assert!(!temp_path(&path).exists());
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.config_json, "{\"seed\":3}");
        assert_eq!(back.tensors["H.weight"].to_vec2::<f32>().unwrap(), vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]]);
        assert_eq!(back.tensors["optim.m.H.weight"].dtype(), DType::F64);
    }

    #[test]
    fn unwritable_target_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("ckpt");
        assert!(matches!(save_checkpoint(&path, &sample()), Err(Error::Io { .. })));
        assert!(!temp_path(&path).exists());
    }

    #[test]
    fn foreign_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
