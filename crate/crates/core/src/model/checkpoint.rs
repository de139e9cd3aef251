//! `IFM1` checkpoints: magic, u32 LE manifest length, UTF-8 JSON manifest
//! `[{name, offset, shape}]`, then the little-endian f64 payload.
//!
//! Offsets are byte offsets into the payload. Entries follow parameter
//! creation order and are contiguous, so identical stores encode to
//! identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"IFM1";

/// Field order is alphabetical so the JSON keys come out sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, p) in store.iter() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            offset,
            shape: p.value.shape().to_vec(),
        });
        offset += 8 * p.value.numel();
    }
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Contract(format!("manifest encode: {e}")))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Contract("manifest exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses and validates a checkpoint image. `path` is used for messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest = read_manifest(bytes, path)?;
    let start = 8 + u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[start..];
    let mut out = Vec::with_capacity(manifest.len());
    for e in manifest {
        let data: Vec<f64> = payload[e.offset..e.offset + 8 * e.numel()]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("tensor `{}`: {err}", e.name),
        })?;
        out.push((e.name, t));
    }
    Ok(out)
}

/// Validates header, manifest and payload length; returns the manifest.
pub fn read_manifest(bytes: &[u8], path: &Path) -> Result<Vec<ManifestEntry>> {
    let truncated = |expected| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            return Err(truncated(4));
        }
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "IFM1" });
    }
    if bytes.len() < 8 {
        return Err(truncated(8));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(truncated(8 + len));
    }
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[8..8 + len]).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let bad = |detail: String| Error::Manifest { path: path.to_path_buf(), detail };
    let mut next = 0;
    let mut seen = std::collections::HashSet::new();
    for e in &manifest {
        if !seen.insert(e.name.as_str()) {
            return Err(bad(format!("duplicate tensor `{}`", e.name)));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(bad(format!("tensor `{}` has degenerate shape {:?}", e.name, e.shape)));
        }
        if e.offset != next {
            return Err(bad(format!(
                "tensor `{}` at offset {}, expected {next} (offsets must be increasing and contiguous)",
                e.name, e.offset
            )));
        }
        next += 8 * e.numel();
    }
    let expected = 8 + len + next;
    match bytes.len() {
        n if n < expected => Err(truncated(expected)),
        n if n > expected => Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            expected,
            found: n,
        }),
        _ => Ok(manifest),
    }
}

/// Overwrites every parameter in `store` from `bytes`. Names must match
/// exactly; shapes are checked per tensor.
pub fn restore(store: &mut ParamStore, bytes: &[u8], path: &Path) -> Result<()> {
    let tensors = decode(bytes, path)?;
    let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
    let ids = store.ids();
    for &id in &ids {
        let name = store.get(id).name.clone();
        let Some(t) = by_name.remove(&name) else {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                detail: format!("missing tensor `{name}`"),
            });
        };
        let expected = store.value(id).shape().to_vec();
        if t.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                name,
                expected,
                found: t.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("unexpected tensor `{extra}`"),
        });
    }
    // second pass so a failed load leaves the store untouched
    let tensors = decode(bytes, path)?;
    for (name, t) in tensors {
        let id = store.id(&name).expect("checked above");
        store.get_mut(id).value = t;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = encode(store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(store, &bytes, path)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_manifest(&bytes, path)
}
