//! `IFCUBE` and `IFLBL` rasters.
//!
//! IFCUBE: `"IFC1"`, u32 LE `H W B`, then `H·W·B` f32 LE at
//! `b·H·W + r·W + c`. IFLBL: `"IFL1"`, u32 LE `H W`, then `H·W` i32 LE.

use std::path::Path;

use super::{Cube, LabelMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CUBE_MAGIC: &[u8; 4] = b"IFC1";
pub const LABEL_MAGIC: &[u8; 4] = b"IFL1";

fn header(bytes: &[u8], magic: &'static [u8; 4], fields: usize, path: &Path) -> Result<Vec<usize>> {
    let need = 4 + 4 * fields;
    if bytes.len() >= 4 && &bytes[..4] != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: std::str::from_utf8(magic).unwrap(),
        });
    }
    if bytes.len() < need {
        if bytes.len() < 4 && !magic.starts_with(bytes) {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: std::str::from_utf8(magic).unwrap(),
            });
        }
        return Err(Error::Truncated { path: path.to_path_buf(), expected: need, found: bytes.len() });
    }
    Ok(bytes[4..need]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    match bytes.len() {
        n if n < expected => Err(Error::Truncated { path: path.to_path_buf(), expected, found: n }),
        n if n > expected => Err(Error::TrailingBytes { path: path.to_path_buf(), expected, found: n }),
        _ => Ok(()),
    }
}

fn dims_u32(dims: &[usize], what: &str) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 * dims.len());
    for &d in dims {
        let v = u32::try_from(d).map_err(|_| Error::Contract(format!("{what} dimension {d} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Values are narrowed to f32; cubes read from disk round-trip exactly.
pub fn encode_cube(cube: &Cube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * cube.values.numel());
    out.extend_from_slice(CUBE_MAGIC);
    out.extend(dims_u32(&[cube.height, cube.width, cube.bands], "cube")?);
    for &v in cube.values.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8], path: &Path) -> Result<Cube> {
    let h = header(bytes, CUBE_MAGIC, 3, path)?;
    let (height, width, bands) = (h[0], h[1], h[2]);
    let n = height * width * bands;
    check_len(bytes, 16 + 4 * n, path)?;
    let mut data = Vec::with_capacity(n);
    for (index, c) in bytes[16..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteData { path: path.to_path_buf(), index });
        }
        data.push(f64::from(v));
    }
    if n == 0 {
        return Err(Error::Contract(format!(
            "{}: cube dimensions {height}x{width}x{bands} must all be >= 1",
            path.display()
        )));
    }
    Cube::new(Tensor::new(vec![bands, height, width], data)?)
}

pub fn encode_labels(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * map.labels.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend(dims_u32(&[map.height, map.width], "label map")?);
    for &l in &map.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let h = header(bytes, LABEL_MAGIC, 2, path)?;
    let (height, width) = (h[0], h[1]);
    check_len(bytes, 12 + 4 * height * width, path)?;
    let labels = bytes[12..]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelMap::new(height, width, labels)
}

pub fn read_cube(path: &Path) -> Result<Cube> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes, path)
}

pub fn write_cube(path: &Path, cube: &Cube) -> Result<()> {
    std::fs::write(path, encode_cube(cube)?).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes, path)
}

pub fn write_labels(path: &Path, map: &LabelMap) -> Result<()> {
    std::fs::write(path, encode_labels(map)?).map_err(|e| Error::io(path, e))
}
