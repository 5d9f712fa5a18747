//! Parameter checkpoints.
//!
//! Layout: the magic bytes `MNT1`, a little-endian `u32` manifest length, the
//! JSON manifest, then every parameter as raw little-endian `f32` in manifest
//! order. Manifest offsets count scalars from the start of the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MNT1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    parameters: Vec<ManifestEntry>,
}

pub fn manifest<T: Real>(store: &ParamStore<T>) -> Vec<ManifestEntry> {
    let mut offset = 0;
    store
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry { name: name.to_string(), shape: t.shape().to_vec(), offset };
            offset += t.len();
            e
        })
        .collect()
}

pub fn write_checkpoint<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> std::io::Result<()> {
    let json = serde_json::to_vec(&Manifest { parameters: manifest(store) }).expect("manifest serializes");
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(store.scalar_count() * 4);
    for t in store.tensors() {
        for &v in t.data() {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

/// Parses a checkpoint. `path` is used only in error messages.
pub fn read_checkpoint<T: Real, R: Read>(mut r: R, path: &Path) -> Result<ParamStore<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing MNT1 magic at byte 0"));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if 8 + mlen > bytes.len() {
        return Err(Error::format(
            path,
            format!("manifest claims {} bytes at offset 8 but file has {}", mlen, bytes.len()),
        ));
    }
    let m: Manifest = serde_json::from_slice(&bytes[8..8 + mlen])
        .map_err(|e| Error::format(path, format!("bad manifest at byte {}: {}", 8 + e.column(), e)))?;
    let payload = &bytes[8 + mlen..];
    let total: usize = m.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 4 {
        return Err(Error::format(
            path,
            format!("payload expected {} bytes, found {}", total * 4, payload.len()),
        ));
    }
    let mut store = ParamStore::new();
    for p in m.parameters {
        let n: usize = p.shape.iter().product();
        let start = p.offset * 4;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(Error::format(path, format!("parameter {} overruns payload", p.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let t = Tensor::new(&p.shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        store.add(p.name, t);
    }
    Ok(store)
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let w = std::io::BufWriter::new(f);
    write_checkpoint(store, w).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ParamStore<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f), path)
}
