//! Binary feature files: 8-byte magic, little-endian `u64` vertex count, then
//! `9 * n` little-endian `f64`. A JSON sidecar `<file>.json` names the reference.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DrFeature, DR_STRIDE};
use crate::error::{Error, Result};

pub const DR_MAGIC: &[u8; 8] = b"DRFEAT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub reference: String,
    pub vertex_count: usize,
    pub layout: String,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_feature(feature: &DrFeature, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + feature.as_slice().len() * 8);
    buf.extend_from_slice(DR_MAGIC);
    buf.extend_from_slice(&(feature.vertex_count() as u64).to_le_bytes());
    for v in feature.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let meta = FeatureMeta {
        reference: feature.reference().to_string(),
        vertex_count: feature.vertex_count(),
        layout: "rotation_vector3+stretch_sym6".into(),
    };
    let mp = meta_path(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))
}

pub fn load_feature(path: impl AsRef<Path>) -> Result<DrFeature> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != DR_MAGIC {
        return Err(Error::Format(format!("{}: not a DR feature file", path.display())));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = 16 + n * DR_STRIDE * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes for {n} vertices, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mp = meta_path(path);
    let reference = if mp.exists() {
        let raw = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let meta: FeatureMeta =
            serde_json::from_str(&raw).map_err(|e| Error::Format(format!("{}: {e}", mp.display())))?;
        if meta.vertex_count != n {
            return Err(Error::Format(format!(
                "{}: metadata says {} vertices, data has {n}",
                mp.display(),
                meta.vertex_count
            )));
        }
        meta.reference
    } else {
        String::new()
    };
    DrFeature::from_vec(data, reference)
}
