//! Three interactive operations for the browser page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string, so the page
//! needs nothing beyond `JSON.parse`. The same functions are available to
//! native code through [`demo`].

pub mod demo;

use wasm_bindgen::prelude::*;

fn to_js<T: serde::Serialize>(r: fregmice::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Penalized B-spline smooth of a noisy curve. `log10_lambda` of `None`
/// selects the smoothing parameter by REML.
#[wasm_bindgen]
pub fn smooth(
    seed: u32,
    points: u32,
    noise_sd: f64,
    basis_size: u32,
    log10_lambda: Option<f64>,
) -> Result<String, JsError> {
    to_js(demo::smooth(&demo::SmoothInput {
        seed: seed.into(),
        points: points as usize,
        noise_sd,
        basis_size: basis_size as usize,
        log10_lambda,
    }))
}

/// Principal components of simulated curves and random draws from the fit.
#[wasm_bindgen]
pub fn fpca(seed: u32, curves: u32, pve: f64, draws: u32) -> Result<String, JsError> {
    to_js(demo::fpca(&demo::FpcaInput {
        seed: seed.into(),
        curves: curves as usize,
        pve,
        draws: draws as usize,
    }))
}

/// One simulated dataset with missing values analysed three ways: before
/// masking, complete cases, and pooled multiple imputation.
#[wasm_bindgen]
pub fn impute_and_pool(seed: u32, n: u32, missing: f64, m: u32, iterations: u32) -> Result<String, JsError> {
    to_js(demo::impute_and_pool(&demo::PoolInput {
        seed: seed.into(),
        n: n as usize,
        missing,
        m: m as usize,
        iterations: iterations as usize,
    }))
}
