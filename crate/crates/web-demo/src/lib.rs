//! WebAssembly bindings for the demo page in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

pub use demo::PHANTOM_SHAPE;

fn js(e: cmc3d::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn panel_width() -> usize {
    PHANTOM_SHAPE.w
}

#[wasm_bindgen]
pub fn panel_height() -> usize {
    PHANTOM_SHAPE.h
}

/// RGBA strip: original | view 1 | view 2.
#[wasm_bindgen]
pub fn augment_views(seed: u32, crop_min: f64, contrast_spread: f64) -> Result<Vec<u8>, JsError> {
    demo::augment_views(seed, crop_min, contrast_spread).map_err(js)
}

#[wasm_bindgen]
pub fn supcon_curve(tau: f64, points: usize) -> Result<Vec<f64>, JsError> {
    demo::supcon_curve(tau, points).map_err(js)
}

#[wasm_bindgen]
pub fn lambda_histogram(
    alpha: f64,
    samples: usize,
    bins: usize,
    seed: u32,
) -> Result<Vec<u32>, JsError> {
    demo::lambda_histogram(alpha, samples, bins, seed).map_err(js)
}

/// RGBA strip: healthy | lesioned | mixed.
#[wasm_bindgen]
pub fn mixup_preview(seed: u32, lambda: f64) -> Result<Vec<u8>, JsError> {
    demo::mixup_preview(seed, lambda).map_err(js)
}
