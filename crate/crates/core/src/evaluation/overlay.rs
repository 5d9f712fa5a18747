use std::fs;
use std::path::{Path, PathBuf};

use crate::data::save_volume;
use crate::error::{config_err, Error, Result};
use crate::tokenizer::Volume;
use crate::transformer::Plane;

/// Black below `lo`, red→yellow across `[lo, hi]` (green ramps with
/// round-half-up), yellow above `hi`.
pub fn overlay_color(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    if v < lo {
        [0, 0, 0]
    } else if v >= hi {
        [255, 255, 0]
    } else {
        // The slack keeps decimal midpoints such as 0.6 in [0.4, 0.8] rounding up.
        let g = (255.0 * (v - lo) / (hi - lo) + 0.5 + 1e-9).floor().clamp(0.0, 255.0);
        [255, g as u8, 0]
    }
}

/// Mid-plane slice as `(width, height, values)`, rows top to bottom.
///
/// Transverse fixes z (image x→right, y→up), coronal fixes y (x→right,
/// z→up), sagittal fixes x (y→right, z→up).
pub fn mid_slice(map: &Volume, plane: Plane) -> (usize, usize, Vec<f32>) {
    let [dx, dy, dz] = map.dims();
    let (w, h) = match plane {
        Plane::Transverse => (dx, dy),
        Plane::Coronal => (dx, dz),
        Plane::Sagittal => (dy, dz),
    };
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let up = h - 1 - r;
        for c in 0..w {
            out.push(match plane {
                Plane::Transverse => map.get(c, up, dz / 2),
                Plane::Coronal => map.get(c, dy / 2, up),
                Plane::Sagittal => map.get(dx / 2, c, up),
            });
        }
    }
    (w, h, out)
}

/// Binary PPM (P6).
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayFiles {
    /// Attribution volume header; its payload sits beside it.
    pub volume: PathBuf,
    /// Transverse, coronal, sagittal.
    pub slices: Vec<PathBuf>,
}

/// Writes `attribution.json`/`.raw` and one PPM per mid-plane into `dir`.
pub fn export_overlay(map: &Volume, dir: &Path, lo: f64, hi: f64) -> Result<OverlayFiles> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(config_err!("overlay thresholds need 0 ≤ lo < hi ≤ 1, got lo={lo}, hi={hi}"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let volume = dir.join("attribution.json");
    save_volume(&map.clone().with_label(None), &volume)?;
    let mut slices = Vec::new();
    for plane in Plane::ALL {
        let (w, h, vals) = mid_slice(map, plane);
        let rgb: Vec<u8> = vals.iter().flat_map(|&v| overlay_color(v as f64, lo, hi)).collect();
        let p = dir.join(format!("{}.ppm", plane.name()));
        write_ppm(&p, w, h, &rgb)?;
        slices.push(p);
    }
    Ok(OverlayFiles { volume, slices })
}
