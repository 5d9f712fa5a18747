use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Volume;

pub const DTYPE: &str = "f32le";
pub const ORDER: &str = "x-major (x slowest, z fastest)";

/// JSON sidecar describing a raw volume payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub dtype: String,
    pub label: Option<usize>,
    pub order: String,
}

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Byte offset of a serde_json error position inside `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + column.saturating_sub(1)
}

/// Writes `path` (the JSON header) and its `.raw` payload beside it.
pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let header = VolumeHeader { dims: v.dims(), dtype: DTYPE.into(), label: v.label, order: ORDER.into() };
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(4 * v.voxel_count());
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let raw = payload_path(path);
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| {
        Error::format(path, format!("corrupt header at byte offset {}: {e}", byte_offset(&text, e.line(), e.column())))
    })?;
    if header.dtype != DTYPE {
        return Err(Error::format(path, format!("unsupported dtype {:?}, expected {DTYPE:?}", header.dtype)));
    }
    if header.order != ORDER {
        return Err(Error::format(path, format!("unsupported voxel order {:?}", header.order)));
    }
    if header.dims.contains(&0) {
        return Err(Error::format(path, format!("zero extent in dims {:?}", header.dims)));
    }
    let raw = payload_path(path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let want = 4 * header.dims.iter().product::<usize>();
    if bytes.len() != want {
        return Err(Error::format(&raw, format!("payload size mismatch: expected {want} bytes, found {}", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Volume::new(header.dims, data, header.label)
}

/// One `path<TAB>label` line per entry; paths relative to the manifest.
pub fn write_manifest(path: &Path, entries: &[(String, Option<usize>)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (p, l) in entries {
        let l = l.map(|l| l.to_string()).unwrap_or_else(|| "null".into());
        writeln!(f, "{p}\t{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, Option<usize>)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (p, l) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {}: expected \"path<TAB>label\"", i + 1)))?;
        let label = match l.trim() {
            "null" => None,
            s => Some(s.parse().map_err(|_| Error::format(path, format!("line {}: bad label {s:?}", i + 1)))?),
        };
        out.push((base.join(p), label));
    }
    Ok(out)
}

/// Loads every volume listed in a manifest; the manifest label wins.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Volume>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|(p, l)| {
            let v = load_volume(&p)?;
            if v.label.is_some() && l.is_some() && v.label != l {
                return Err(Error::format(&p, format!("label {:?} disagrees with manifest label {:?}", v.label, l)));
            }
            let label = l.or(v.label);
            Ok(v.with_label(label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        let v = Volume::from_fn([2, 3, 4], |x, y, z| (x * 12 + y * 4 + z) as f32 * 0.1).with_label(Some(1));
        save_volume(&v, &p).unwrap();
        assert_eq!(load_volume(&p).unwrap(), v);
        let raw = p.with_extension("raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 3]).unwrap();
        let msg = load_volume(&p).unwrap_err().to_string();
        assert!(msg.contains("expected 96 bytes, found 93"), "{msg}");
    }

    #[test]
    fn corrupt_header_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.json");
        fs::write(&p, "{\"dims\": [1,1,1], \"dtype\": }").unwrap();
        let msg = load_volume(&p).unwrap_err().to_string();
        assert!(msg.contains("byte offset 27"), "{msg}");
    }
}
