//! Browser bindings for the extrapolation core.
//!
//! Three operations back the demo page in `www/`: sample a synthetic
//! benchmark trial, extrapolate its curve from the first observed epochs
//! with the embedded pretrained checkpoint, and explore the squashing
//! normalization. Everything returns JSON strings — the page parses and
//! plots, this crate computes.
//!
//! Build for the browser with
//! `wasm-pack build crates/lcgode-web --target web`; the crate also
//! compiles natively so its tests run in the ordinary workspace suite.

use std::sync::OnceLock;

use lcgode::data::{generate_trial, GenerateConfig, Metric};
use lcgode::error::{Error, Result};
use lcgode::eval::mape;
use lcgode::model::Model;
use lcgode::normalize::NormalizationParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Trained on 200 synthetic trials at the same grid the demo samples
/// from (60 epochs, first 10 observed); regenerate with
/// `lcode generate` + `lcode train` as described in the README.
const CHECKPOINT: &str = include_str!("../assets/checkpoint.json");

fn model() -> &'static Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL.get_or_init(|| Model::from_json(CHECKPOINT).expect("embedded checkpoint is valid"))
}

/// The demo pins every sampling range to a point, so one (units, layers,
/// noise, seed) tuple names exactly one trial.
fn pinned_config(units: f64, layers: usize, noise: f64, seed: u64) -> Result<GenerateConfig> {
    if !(4.0..=1024.0).contains(&units) {
        return Err(Error::InvalidInput(format!("units {units} outside [4, 1024]")));
    }
    if !(1..=8).contains(&layers) {
        return Err(Error::InvalidInput(format!("layers {layers} outside [1, 8]")));
    }
    if !(0.0..=0.2).contains(&noise) {
        return Err(Error::InvalidInput(format!("noise {noise} outside [0, 0.2]")));
    }
    let mut config = GenerateConfig::default();
    config.num_trials = 4;
    config.m = 60;
    config.noise = noise;
    config.seed = seed;
    config.ranges.units = (units, units);
    config.ranges.num_layers = (layers, layers);
    Ok(config)
}

fn sample_trial_text(units: f64, layers: usize, noise: f64, seed: u64) -> Result<String> {
    let config = pinned_config(units, layers, noise, seed)?;
    let trial = generate_trial(&config, 0)?;
    let loss = trial.curve(Metric::TestLoss).expect("generator emits a loss curve");
    let acc = trial.curve(Metric::TestAccuracy).expect("generator emits an accuracy curve");
    Ok(serde_json::json!({
        "trial_id": trial.trial_id,
        "units": trial.hyperparams.units_per_layer,
        "layers": trial.hyperparams.num_layers,
        "graph_nodes": trial.graph.num_nodes(),
        "graph_edges": trial.graph.num_effective_edges(),
        "times": loss.times(),
        "loss": loss.values,
        "accuracy": acc.values,
    })
    .to_string())
}

fn extrapolate_text(
    units: f64,
    layers: usize,
    noise: f64,
    seed: u64,
    samples: usize,
) -> Result<String> {
    if !(1..=256).contains(&samples) {
        return Err(Error::InvalidInput(format!("samples {samples} outside [1, 256]")));
    }
    let config = pinned_config(units, layers, noise, seed)?;
    let trial = generate_trial(&config, 0)?;
    let model = model();
    let n = model.config.condition_length;
    let curve = trial.curve(model.config.metric).expect("generator emits this curve");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mean, std) = model.extrapolate(&curve.values[..n], &trial.graph, samples, &mut rng)?;
    let err = mape(&curve.values[n..], &mean)?;
    Ok(serde_json::json!({
        "metric": model.config.metric.name(),
        "times": curve.times(),
        "observed": &curve.values[..n],
        "truth": curve.values,
        "mean": mean,
        "std": std,
        "mape": err.value,
    })
    .to_string())
}

fn normalization_curve_text(
    minimize: bool,
    l_hard: f64,
    u_hard: f64,
    l_soft: f64,
    u_soft: f64,
    points: usize,
) -> Result<String> {
    if !(2..=2000).contains(&points) {
        return Err(Error::InvalidInput(format!("points {points} outside [2, 2000]")));
    }
    let params = NormalizationParams::new(minimize, l_hard, u_hard, l_soft, u_soft)?;
    let mut xs = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for i in 0..points {
        let x = l_hard + (u_hard - l_hard) * i as f64 / (points - 1) as f64;
        xs.push(x);
        ys.push(params.apply(x, i)?);
    }
    Ok(serde_json::json!({
        "xs": xs,
        "ys": ys,
        "a": params.a,
        "b": params.b,
        "c": params.c,
        "d": params.d,
    })
    .to_string())
}

fn to_js(result: Result<String>) -> std::result::Result<String, JsError> {
    result.map_err(|e| JsError::new(&e.to_string()))
}

/// One synthetic trial (both curves plus architecture counts) as JSON.
#[wasm_bindgen]
pub fn sample_trial(
    units: f64,
    layers: u32,
    noise: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(sample_trial_text(units, layers as usize, noise, seed as u64))
}

/// Extrapolation of that trial's curve from its observed prefix, with
/// per-epoch mean and spread over `samples` posterior draws, as JSON.
#[wasm_bindgen]
pub fn extrapolate_trial(
    units: f64,
    layers: u32,
    noise: f64,
    seed: u32,
    samples: u32,
) -> std::result::Result<String, JsError> {
    to_js(extrapolate_text(units, layers as usize, noise, seed as u64, samples as usize))
}

/// The normalization map g on a grid over its hard range, as JSON.
#[wasm_bindgen]
pub fn normalization_curve(
    minimize: bool,
    l_hard: f64,
    u_hard: f64,
    l_soft: f64,
    u_soft: f64,
    points: u32,
) -> std::result::Result<String, JsError> {
    to_js(normalization_curve_text(minimize, l_hard, u_hard, l_soft, u_soft, points as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_trial_has_full_curves() {
        let text = sample_trial_text(32.0, 2, 0.02, 7).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["times"].as_array().unwrap().len(), 60);
        assert_eq!(v["loss"].as_array().unwrap().len(), 60);
        assert_eq!(v["accuracy"].as_array().unwrap().len(), 60);
        assert_eq!(v["layers"], 2);
        assert!(v["accuracy"]
            .as_array()
            .unwrap()
            .iter()
            .all(|y| (0.0..=1.0).contains(&y.as_f64().unwrap())));
    }

    #[test]
    fn same_inputs_same_json() {
        let a = sample_trial_text(48.0, 3, 0.01, 3).unwrap();
        let b = sample_trial_text(48.0, 3, 0.01, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedded_checkpoint_extrapolates() {
        let text = extrapolate_text(32.0, 2, 0.02, 7, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mean = v["mean"].as_array().unwrap();
        let std = v["std"].as_array().unwrap();
        assert_eq!(mean.len(), 50);
        assert_eq!(std.len(), 50);
        // One sample pins the posterior to its mean: zero spread.
        assert!(std.iter().all(|s| s.as_f64() == Some(0.0)));
        let err = v["mape"].as_f64().unwrap();
        assert!(err.is_finite() && err < 0.5, "mape {err}");
    }

    #[test]
    fn spread_appears_with_many_samples() {
        let text = extrapolate_text(32.0, 2, 0.02, 7, 32).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let total: f64 = v["std"].as_array().unwrap().iter().map(|s| s.as_f64().unwrap()).sum();
        assert!(total > 0.0);
    }

    #[test]
    fn normalization_curve_hits_both_ends() {
        let text = normalization_curve_text(false, 0.0, 1.0, 0.0, 1.0, 101).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let ys = v["ys"].as_array().unwrap();
        assert!(ys[0].as_f64().unwrap().abs() < 1e-12);
        assert!((ys[100].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_knobs() {
        assert!(sample_trial_text(2.0, 2, 0.02, 7).is_err());
        assert!(sample_trial_text(32.0, 0, 0.02, 7).is_err());
        assert!(extrapolate_text(32.0, 2, 0.02, 7, 0).is_err());
        assert!(normalization_curve_text(false, 0.0, 1.0, 0.0, 1.0, 1).is_err());
    }
}
