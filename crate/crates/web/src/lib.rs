//! Browser bindings for three small demos: mid-plane slices of a synthetic
//! volume, the warmup-cosine learning-rate curve, and an attention rollout
//! overlay from an untrained `minit-desk` model.
//!
//! Images come back as RGBA bytes, row-major, ready for `ImageData`.

use minit::data::{generate_synthetic, SyntheticSpec};
use minit::evaluation::{mid_slice, overlay_color, rollout_map};
use minit::models::{preset, Model};
use minit::tokenizer::Volume;
use minit::training::{cosine_warmup_lr, ScheduleConfig};
use minit::transformer::Plane;
use wasm_bindgen::prelude::*;

fn plane(index: u32) -> Result<Plane, String> {
    Plane::ALL.get(index as usize).copied().ok_or_else(|| format!("plane index {index} is not 0, 1 or 2"))
}

fn volume(edge: usize, signal: f64, noise: f64, seed: u64, label: u32) -> Result<Volume, String> {
    if label > 1 {
        return Err(format!("label must be 0 or 1, got {label}"));
    }
    let spec = SyntheticSpec { edge, per_class: 1, signal, noise, seed };
    let mut pair = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    Ok(pair.swap_remove(label as usize))
}

fn gray(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Mid-plane slice of one synthetic volume as an `edge × edge` RGBA image.
pub fn slice_rgba(edge: usize, signal: f64, noise: f64, seed: u64, label: u32, plane_index: u32) -> Result<Vec<u8>, String> {
    let v = volume(edge, signal, noise, seed, label)?;
    Ok(gray(&mid_slice(&v, plane(plane_index)?).2))
}

/// Learning rate at every optimizer step.
pub fn schedule(warmup: usize, epochs: usize, steps_per_epoch: usize, peak: f64, floor: f64) -> Result<Vec<f64>, String> {
    let s = ScheduleConfig { warmup_epochs: warmup, epochs, steps_per_epoch, floor };
    s.validate(peak).map_err(|e| e.to_string())?;
    (0..s.total_steps()).map(|t| cosine_warmup_lr(t, &s, peak).map_err(|e| e.to_string())).collect()
}

/// Rollout heat map blended over the input slice, 32 × 32 RGBA.
pub fn overlay_rgba(model_seed: u64, signal: f64, label: u32, plane_index: u32) -> Result<Vec<u8>, String> {
    let cfg = preset("minit-desk").expect("built-in preset").model;
    let model = Model::<f32>::new(cfg, model_seed).map_err(|e| e.to_string())?;
    let v = volume(cfg.input[0], signal, 0.05, model_seed, label)?;
    let (_, rec) = model.predict_recorded(&v).map_err(|e| e.to_string())?;
    let map = rollout_map(&cfg, &rec).map_err(|e| e.to_string())?;
    let p = plane(plane_index)?;
    let (_, _, heat) = mid_slice(&map, p);
    let (_, _, base) = mid_slice(&v, p);
    let mut out = Vec::with_capacity(4 * heat.len());
    for (&h, &b) in heat.iter().zip(&base) {
        let c = overlay_color(h as f64, 0.0, 1.0);
        let g = b.clamp(0.0, 1.0) * 255.0;
        for ch in c {
            out.push((0.5 * g + 0.5 * ch as f32).round() as u8);
        }
        out.push(255);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn synthetic_slices(edge: usize, signal: f64, noise: f64, seed: u64, label: u32, plane: u32) -> Result<Vec<u8>, JsError> {
    slice_rgba(edge, signal, noise, seed, label, plane).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lr_curve(warmup: usize, epochs: usize, steps_per_epoch: usize, peak: f64, floor: f64) -> Result<Vec<f64>, JsError> {
    schedule(warmup, epochs, steps_per_epoch, peak, floor).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn rollout_overlay(model_seed: u64, signal: f64, label: u32, plane: u32) -> Result<Vec<u8>, JsError> {
    overlay_rgba(model_seed, signal, label, plane).map_err(|e| JsError::new(&e))
}
