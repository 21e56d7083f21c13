//! wasm-bindgen bindings for the browser demo in `www/`. Every export
//! returns JSON text; errors come back as `{"error": "..."}`.

pub mod demo;

use d2fel::bottleneck::InSite;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn json<T: Serialize>(r: d2fel::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

/// `site` is `"join"` or `"branch"`.
#[wasm_bindgen]
pub fn style_shift(seed: u32, gain: f64, bias: f64, site: &str) -> String {
    let site = if site == "branch" { InSite::Branch } else { InSite::Join };
    json(demo::style_shift(seed as u64, gain, bias, site))
}

/// `target` of 0 skips the audit.
#[wasm_bindgen]
pub fn jl_audit(seed: u32, points: u32, epsilon: f64, dim: u32, target: u32) -> String {
    let target = (target > 0).then_some(target as usize);
    json(demo::jl_audit(seed as u64, points as usize, epsilon, dim as usize, target))
}

#[wasm_bindgen]
pub fn reduction_curve(seed: u32, dim: u32, rank: u32, identities: u32) -> String {
    json(demo::reduction_curve(seed as u64, dim as usize, rank as usize, identities as usize))
}
