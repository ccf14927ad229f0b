//! Checkpoint files: a JSON header describing the run and the parameter
//! manifest, followed by a flat little-endian f64 payload holding the
//! parameters and both optimizer moment vectors.
//!
//! Layout: `[u64 LE header length][header JSON][params][adam_m][adam_v]`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{ModelError, Result};
use crate::params::ParamEntry;

const MAX_HEADER_BYTES: u64 = 16 * 1024 * 1024;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: NetworkConfig,
    pub manifest: Vec<ParamEntry>,
    /// First epoch a resumed run should execute.
    pub epoch_next: usize,
    /// Completed optimizer updates.
    pub adam_step: u64,
    pub best_val_auc: f64,
    pub best_epoch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Checkpoint {
    fn param_len(&self) -> usize {
        self.meta.manifest.iter().map(|e| e.len).sum()
    }
}

/// Write atomically: the file appears complete or not at all.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let total = ckpt.param_len();
    if ckpt.params.len() != total || ckpt.adam_m.len() != total || ckpt.adam_v.len() != total {
        return Err(ModelError::Checkpoint(format!(
            "manifest covers {total} values but payload has {}/{}/{}",
            ckpt.params.len(),
            ckpt.adam_m.len(),
            ckpt.adam_v.len()
        )));
    }
    let header = serde_json::to_vec(&ckpt.meta)
        .map_err(|e| ModelError::Checkpoint(format!("header encoding: {e}")))?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&(header.len() as u64).to_le_bytes())?;
    tmp.write_all(&header)?;
    for section in [&ckpt.params, &ckpt.adam_m, &ckpt.adam_v] {
        let mut bytes = Vec::with_capacity(section.len() * 8);
        for v in section.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        tmp.write_all(&bytes)?;
    }
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| ModelError::Checkpoint(format!("persisting {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut file = File::open(path)?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| ModelError::Checkpoint(format!("{}: missing header length", path.display())))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(ModelError::Checkpoint(format!(
            "{}: implausible header length {header_len}",
            path.display()
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)
        .map_err(|_| ModelError::Checkpoint(format!("{}: truncated header", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)
        .map_err(|e| ModelError::Checkpoint(format!("{}: header JSON: {e}", path.display())))?;
    let total: usize = meta.manifest.iter().map(|e| e.len).sum();
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != 3 * total * 8 {
        return Err(ModelError::Checkpoint(format!(
            "{}: payload holds {} bytes, expected {} for {total} parameters",
            path.display(),
            payload.len(),
            3 * total * 8
        )));
    }
    let mut sections = payload.chunks_exact(8).map(|c| {
        let mut arr = [0u8; 8];
        arr.copy_from_slice(c);
        f64::from_le_bytes(arr)
    });
    let params: Vec<f64> = sections.by_ref().take(total).collect();
    let adam_m: Vec<f64> = sections.by_ref().take(total).collect();
    let adam_v: Vec<f64> = sections.take(total).collect();
    Ok(Checkpoint { meta, params, adam_m, adam_v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchKind;
    use crate::params::ParamLayout;
    use qvt_core::attention::{NormAxis, NormMode};
    use qvt_core::ortho::LayoutKind;
    use qvt_core::rng::Pcg32;

    fn toy_checkpoint() -> Checkpoint {
        let config = NetworkConfig {
            arch: ArchKind::OrthoTransformer,
            layout: LayoutKind::Pyramid,
            dim: 4,
            layers: 2,
            hidden: 6,
            patch_grid: 2,
            attention_norm: NormMode::Softmax,
            attention_axis: NormAxis::Rows,
            per_token_positional: false,
            dataset: "toy".into(),
            num_classes: 3,
            channels: 1,
            epochs: 10,
            batch_size: 4,
            seed: 9,
        };
        let layout = ParamLayout::new(&config).unwrap();
        let mut rng = Pcg32::new(31, 0);
        let params: Vec<f64> = (0..layout.total).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let adam_m: Vec<f64> = (0..layout.total).map(|_| rng.uniform(-0.1, 0.1)).collect();
        let adam_v: Vec<f64> = (0..layout.total).map(|_| rng.uniform(0.0, 0.01)).collect();
        Checkpoint {
            meta: CheckpointMeta {
                config,
                manifest: layout.entries.clone(),
                epoch_next: 7,
                adam_step: 421,
                best_val_auc: 0.8125,
                best_epoch: 5,
                seed: 9,
            },
            params,
            adam_m,
            adam_v,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = toy_checkpoint();
        save(&path, &ckpt).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.params, ckpt.params);
        assert_eq!(loaded.adam_m, ckpt.adam_m);
        assert_eq!(loaded.adam_v, ckpt.adam_v);
        assert_eq!(loaded.meta.epoch_next, 7);
        assert_eq!(loaded.meta.adam_step, 421);
        assert_eq!(loaded.meta.best_val_auc, 0.8125);
        assert_eq!(loaded.meta.manifest, ckpt.meta.manifest);
        assert_eq!(loaded.meta.config.config_hash(), ckpt.meta.config.config_hash());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &toy_checkpoint()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, u64::MAX.to_le_bytes()).unwrap();
        assert!(matches!(load(&path).unwrap_err(), ModelError::Checkpoint(_)));
        std::fs::write(&path, 4u64.to_le_bytes()).unwrap();
        assert!(matches!(load(&path).unwrap_err(), ModelError::Checkpoint(_)));
    }

    #[test]
    fn mismatched_vector_lengths_refuse_to_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ckpt = toy_checkpoint();
        ckpt.adam_v.pop();
        assert!(matches!(save(&path, &ckpt).unwrap_err(), ModelError::Checkpoint(_)));
        assert!(!path.exists());
    }
}
