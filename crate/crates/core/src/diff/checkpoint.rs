//! Parameter checkpoints: a TOML manifest listing `(name, shape, offset)`
//! per tensor, plus a blob of little-endian `f64` values behind an 8-byte
//! magic. Offsets count values, not bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 8] = b"GFPARAM1";
pub const MANIFEST_FILE: &str = "params.toml";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "godeflow-params";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    #[serde(default)]
    meta: toml::Table,
    tensor: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

/// Serializes parameters into manifest text and blob bytes.
pub fn encode(params: &ParamSet, meta: toml::Table) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::with_capacity(8 + 8 * params.num_values());
    blob.extend_from_slice(BLOB_MAGIC);
    let mut tensor = Vec::with_capacity(params.len());
    let mut offset = 0;
    for p in params.iter() {
        tensor.push(Entry {
            name: p.name.clone(),
            shape: p.value.shape(),
            offset,
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value.len();
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        blob: BLOB_FILE.into(),
        meta,
        tensor,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format("checkpoint manifest", MANIFEST_FILE, e))?;
    Ok((text, blob))
}

pub fn decode(manifest: &str, blob: &[u8], origin: &Path) -> Result<(ParamSet, toml::Table)> {
    let bad = |reason: String| Error::format("checkpoint", origin, reason);
    let manifest: Manifest = toml::from_str(manifest).map_err(|e| bad(e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    if blob.len() < 8 || &blob[..8] != BLOB_MAGIC {
        return Err(bad("bad blob magic".into()));
    }
    let body = &blob[8..];
    if !body.len().is_multiple_of(8) {
        return Err(bad("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut params = ParamSet::new();
    for e in manifest.tensor {
        let len = e.shape[0] * e.shape[1];
        let Some(slice) = values.get(e.offset..e.offset + len) else {
            return Err(bad(format!("tensor {} runs past end of blob", e.name)));
        };
        params.push(e.name, Tensor::new(e.shape[0], e.shape[1], slice.to_vec())?);
    }
    if params.num_values() != values.len() {
        return Err(bad(format!(
            "manifest covers {} values, blob holds {}",
            params.num_values(),
            values.len()
        )));
    }
    Ok((params, manifest.meta))
}

pub fn write_checkpoint(dir: &Path, params: &ParamSet, meta: toml::Table) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (text, blob) = encode(params, meta)?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    std::fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<(ParamSet, toml::Table)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)?;
    let blob = std::fs::read(dir.join(BLOB_FILE))?;
    decode(&text, &blob, &manifest_path)
}
