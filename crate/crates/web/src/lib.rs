//! Browser demo over the core crate. The plain functions carry the logic and
//! are tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use qst_core::povm::pauli4_povm;
use qst_core::states::{distinct_value_count, enumerate_distribution, encode_outcome, sample_outcomes, StateFamily};
use qst_core::training::select_checkpoint;
use wasm_bindgen::prelude::*;

/// Largest system the page offers; 4^6 outcomes keep every operation instant.
pub const MAX_QUBITS: usize = 6;

fn family(state: &str, qubits: usize, state_seed: u64) -> Result<qst_core::StateSpec, String> {
    if qubits == 0 || qubits > MAX_QUBITS {
        return Err(format!("qubits must be in 1..={MAX_QUBITS}"));
    }
    let f = StateFamily::parse(state, state_seed).map_err(|e| e.to_string())?;
    f.build(qubits).map_err(|e| e.to_string())
}

/// All outcome probabilities, largest first.
pub fn sorted_distribution(state: &str, qubits: usize, state_seed: u64) -> Result<Vec<f64>, String> {
    let spec = family(state, qubits, state_seed)?;
    let mut dist = enumerate_distribution(&spec, &pauli4_povm()).map_err(|e| e.to_string())?;
    dist.sort_by(|a, b| b.total_cmp(a));
    Ok(dist)
}

pub fn distinct_values(state: &str, qubits: usize, state_seed: u64, tol: f64) -> Result<usize, String> {
    Ok(distinct_value_count(&sorted_distribution(state, qubits, state_seed)?, tol))
}

/// Total-variation distance between `samples` sampler draws and the exact distribution.
pub fn sampler_distance(state: &str, qubits: usize, state_seed: u64, samples: usize, seed: u64) -> Result<f64, String> {
    if samples == 0 {
        return Err("samples must be positive".into());
    }
    let spec = family(state, qubits, state_seed)?;
    let frame = pauli4_povm();
    let exact = enumerate_distribution(&spec, &frame).map_err(|e| e.to_string())?;
    let data = sample_outcomes(&spec, &frame, samples, seed, state).map_err(|e| e.to_string())?;
    let mut counts = vec![0usize; exact.len()];
    for o in &data.outcomes {
        counts[encode_outcome(o)] += 1;
    }
    Ok(0.5 * exact.iter().zip(&counts).map(|(p, &c)| (p - c as f64 / samples as f64).abs()).sum::<f64>())
}

/// Parses losses separated by commas, whitespace or newlines.
pub fn parse_losses(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: `{t}`")))
        .collect()
}

/// `[selected_epoch, window_start, window_score]` for pasted per-epoch losses.
pub fn selection(text: &str, window: usize) -> Result<Vec<f64>, String> {
    let losses = parse_losses(text)?;
    let s = select_checkpoint(&losses, window).map_err(|e| e.to_string())?;
    Ok(vec![s.epoch as f64, s.window_start as f64, s.window_score])
}

#[wasm_bindgen(js_name = sortedDistribution)]
pub fn sorted_distribution_js(state: &str, qubits: usize, state_seed: u64) -> Result<Vec<f64>, JsValue> {
    sorted_distribution(state, qubits, state_seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = distinctValues)]
pub fn distinct_values_js(state: &str, qubits: usize, state_seed: u64, tol: f64) -> Result<usize, JsValue> {
    distinct_values(state, qubits, state_seed, tol).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = samplerDistance)]
pub fn sampler_distance_js(state: &str, qubits: usize, state_seed: u64, samples: usize, seed: u64) -> Result<f64, JsValue> {
    sampler_distance(state, qubits, state_seed, samples, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = selectCheckpoint)]
pub fn selection_js(text: &str, window: usize) -> Result<Vec<f64>, JsValue> {
    selection(text, window).map_err(|e| JsValue::from_str(&e))
}
