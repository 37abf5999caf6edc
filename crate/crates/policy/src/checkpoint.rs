//! Single-file checkpoints: magic, JSON header, raw little-endian tensors.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use visk_nn::{ParamStore, Tensor};

use crate::{NormStats, PolicyConfig, PolicyError};

const MAGIC: &[u8; 8] = b"VISKCKP1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: PolicyConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Everything needed to rebuild a policy.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: PolicyConfig,
    pub params: ParamStore<f32>,
    pub stats: NormStats,
    /// Free-form training provenance (dataset, steps, final loss).
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let io = |source| PolicyError::Io { path: path.to_path_buf(), source };
        let mut tensors: Vec<TensorEntry> =
            self.params.iter().map(|(name, t)| TensorEntry { name: name.into(), shape: t.shape().to_vec() }).collect();
        let stats = self.stats.fields();
        tensors.extend(stats.iter().map(|(name, v)| TensorEntry { name: (*name).into(), shape: vec![v.len()] }));
        let header = Header { config: self.config.clone(), tensors, metadata: self.metadata.clone() };
        let json = serde_json::to_vec(&header).expect("header serialises");

        let mut buf = Vec::with_capacity(16 + json.len() + 4 * (self.params.num_scalars() + 64));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        let values = self.params.iter().flat_map(|(_, t)| t.data().iter()).chain(stats.iter().flat_map(|(_, v)| v.iter()));
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let io = |source| PolicyError::Io { path: path.to_path_buf(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&buf).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let bytes = fs::read(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
        let corrupt = |reason: String| PolicyError::CorruptCheckpoint { path: path.to_path_buf(), reason };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("header length past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start]).map_err(|e| corrupt(e.to_string()))?;
        header.config.validate()?;

        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let body = &bytes[body_start..];
        if body.len() != 4 * total {
            return Err(corrupt(format!("expected {} tensor bytes, found {}", 4 * total, body.len())));
        }
        let mut values = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let mut params = ParamStore::new();
        let mut stats = NormStats::default();
        let mut stats_seen = 0;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let data: Vec<f32> = values.by_ref().take(n).collect();
            if entry.name.starts_with("stats.") {
                if !stats.set_field(&entry.name, &data) {
                    return Err(corrupt(format!("bad statistics tensor `{}`", entry.name)));
                }
                stats_seen += 1;
            } else {
                params.insert(entry.name, Tensor::new(&entry.shape, data));
            }
        }
        if stats_seen != stats.fields().len() {
            return Err(corrupt("missing normalisation statistics".into()));
        }
        check_layout(&header.config, &params)?;
        Ok(Self { config: header.config, params, stats, metadata: header.metadata })
    }
}

/// Verifies `params` matches what `cfg` initialises, name by name.
pub fn check_layout(cfg: &PolicyConfig, params: &ParamStore<f32>) -> Result<(), PolicyError> {
    let expected = crate::model::init_params(cfg)?;
    if expected.len() != params.len() {
        return Err(PolicyError::CheckpointMismatch(format!(
            "{} tensors for this configuration, checkpoint has {}",
            expected.len(),
            params.len()
        )));
    }
    for (name, t) in expected.iter() {
        match params.by_name(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(PolicyError::CheckpointMismatch(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )))
            }
            None => return Err(PolicyError::CheckpointMismatch(format!("missing tensor `{name}`"))),
        }
    }
    Ok(())
}
