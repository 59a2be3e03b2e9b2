//! Browser bindings: the learning-rate curve, mixture sampling and the
//! round-trip similarity score.
//!
//! The plain functions return `Result<_, String>` so they run in native
//! tests; the `js_*` wrappers are what the page calls.

use seedline_core::curriculum::{lr_at, LrSchedule, MixtureSource, MixtureSpec, SourceKind, SourceSampler};
use seedline_core::reward::{chr_ngram_fscores, SimilarityParams};
use wasm_bindgen::prelude::*;

/// `points` evenly spaced (step, lr) samples over the whole schedule,
/// flattened as [step0, lr0, step1, lr1, ...].
pub fn lr_curve(peak: f64, warmup_steps: u32, total_steps: u32, floor_fraction: f64, points: u32) -> Result<Vec<f64>, String> {
    let sched = LrSchedule { peak, warmup_steps: warmup_steps.into(), total_steps: total_steps.into(), floor_fraction };
    if points < 2 {
        return Err("need at least 2 points".to_string());
    }
    let mut out = Vec::with_capacity(2 * points as usize);
    for i in 0..points as u64 {
        let step = i * sched.total_steps / (points as u64 - 1);
        out.push(step as f64);
        out.push(lr_at(step, &sched).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Draw counts per weight after `draws` seeded samples.
pub fn sample_mixture(weights: &[f64], draws: u32, seed: u32) -> Result<Vec<u32>, String> {
    let spec = MixtureSpec {
        sources: weights.iter().enumerate().map(|(i, &weight)| MixtureSource { id: format!("s{i}"), kind: SourceKind::Mono, weight }).collect(),
        token_budget: draws.into(),
    };
    let mut sampler = SourceSampler::new(&spec, seed.into()).map_err(|e| e.to_string())?;
    let mut counts = vec![0u32; weights.len()];
    for _ in 0..draws {
        counts[sampler.sample_index()] += 1;
    }
    Ok(counts)
}

/// Per-order F scores (orders with no n-grams on either side are NaN)
/// followed by their mean.
pub fn similarity(reference: &str, hypothesis: &str, max_n: u32, beta: f64) -> Result<Vec<f64>, String> {
    let params = SimilarityParams { max_n: max_n as usize, beta };
    let per_n = chr_ngram_fscores(reference, hypothesis, params).map_err(|e| e.to_string())?;
    let present: Vec<f64> = per_n.iter().flatten().copied().collect();
    let mut out: Vec<f64> = per_n.iter().map(|f| f.unwrap_or(f64::NAN)).collect();
    out.push(present.iter().sum::<f64>() / present.len() as f64);
    Ok(out)
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn js_lr_curve(peak: f64, warmup_steps: u32, total_steps: u32, floor_fraction: f64, points: u32) -> Result<Vec<f64>, JsError> {
    lr_curve(peak, warmup_steps, total_steps, floor_fraction, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleMixture)]
pub fn js_sample_mixture(weights: Vec<f64>, draws: u32, seed: u32) -> Result<Vec<u32>, JsError> {
    sample_mixture(&weights, draws, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = similarity)]
pub fn js_similarity(reference: &str, hypothesis: &str, max_n: u32, beta: f64) -> Result<Vec<f64>, JsError> {
    similarity(reference, hypothesis, max_n, beta).map_err(|e| JsError::new(&e))
}
