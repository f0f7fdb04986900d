//! Browser demo: belief updates, memory eviction previews and running-mean
//! curves, exported to JavaScript through wasm-bindgen. Every export takes
//! and returns JSON strings; the plain functions are usable natively.

use inquire_core::belief::{
    efficiency, entropy, information_gain, normalized_gain, posterior_update, threshold_label, Belief,
    GraderThresholds, ToyCase,
};
use inquire_core::memory::{keep_score, EvictionConfig, MemoryEntry, MemoryStore};
use inquire_core::metrics::running;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct BeliefStepInput {
    pub case: ToyCase,
    /// Defaults to the case prior.
    #[serde(default)]
    pub belief: Option<Vec<f64>>,
    pub action: String,
    pub outcome: String,
    #[serde(default)]
    pub unsafe_action: bool,
    #[serde(default)]
    pub thresholds: GraderThresholds,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct BeliefStepOutput {
    pub posterior: Vec<f64>,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub information_gain: f64,
    pub efficiency: f64,
    pub normalized_gain: f64,
    pub label: String,
}

pub fn belief_step_json(input: &str) -> Result<String, String> {
    let input: BeliefStepInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    input.case.validate().map_err(|e| e.to_string())?;
    let before = match input.belief {
        Some(p) => Belief::new(p).map_err(|e| e.to_string())?,
        None => input.case.prior.clone(),
    };
    let after = posterior_update(&before, &input.action, &input.outcome, &input.case).map_err(|e| e.to_string())?;
    let cost = input.case.costs.get(&input.action).copied().unwrap_or(0.0);
    let ig = information_gain(&before, &after);
    let h = entropy(&before);
    let eta = efficiency(ig, cost, &input.thresholds);
    let v = normalized_gain(ig, h);
    let out = BeliefStepOutput {
        posterior: after.probabilities().to_vec(),
        entropy_before: h,
        entropy_after: entropy(&after),
        information_gain: ig,
        efficiency: eta,
        normalized_gain: v,
        label: threshold_label(v, eta, input.unsafe_action, &input.thresholds).to_string(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct EvictionInput {
    pub entries: Vec<MemoryEntry>,
    pub now_episode: u32,
    pub config: EvictionConfig,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ScoredEntry {
    pub id: String,
    pub keep_score: f64,
    pub evicted: bool,
}

pub fn eviction_preview_json(input: &str) -> Result<String, String> {
    let input: EvictionInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    input.config.validate().map_err(|e| e.to_string())?;
    let scores: Vec<(String, f64)> = input
        .entries
        .iter()
        .map(|e| (e.id.clone(), keep_score(e, input.now_episode, &input.config)))
        .collect();
    let mut store = MemoryStore::from_entries(input.entries);
    let evicted = store.evict_to_budget(input.now_episode, &input.config);
    let out: Vec<ScoredEntry> = scores
        .into_iter()
        .map(|(id, keep_score)| ScoredEntry {
            evicted: evicted.contains(&id),
            id,
            keep_score,
        })
        .collect();
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CurvePoint {
    pub t: usize,
    pub mean: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// `values` is a JSON array of per-episode numbers (scores or costs).
pub fn running_curves_json(values: &str) -> Result<String, String> {
    let values: Vec<f64> = serde_json::from_str(values).map_err(|e| e.to_string())?;
    if values.is_empty() {
        return Err("no values".into());
    }
    let series = running(&values);
    let points: Vec<CurvePoint> = (0..series.len())
        .map(|i| {
            let band = series.band(i);
            CurvePoint {
                t: i + 1,
                mean: series.mean[i],
                lower: band.map(|b| b.0),
                upper: band.map(|b| b.1),
            }
        })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn belief_step(input: &str) -> Result<String, JsError> {
    belief_step_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn eviction_preview(input: &str) -> Result<String, JsError> {
    eviction_preview_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn running_curves(values: &str) -> Result<String, JsError> {
    running_curves_json(values).map_err(|e| JsError::new(&e))
}
