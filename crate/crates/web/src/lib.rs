//! Browser bindings: URL hashing, dwell buckets and a calibration playground.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`.

use clickpred::calibration::{calibration_curve, ece, matrix_scaling_fit, ScalingOptions};
use clickpred::encoding::{bucket_indices, event_strings, hash_buckets, BucketSpec};
use clickpred::model::softmax2;
use clickpred::sessions::{Event, EventType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse_type(t: &str) -> Result<EventType, String> {
    serde_json::from_value(Value::String(t.to_string())).map_err(|_| format!("unknown event type {t:?}"))
}

/// Hashed feature strings of one event and the buckets each one sets.
pub fn hash_event_json(event_type: &str, url: &str, n: usize, salt: &str) -> Result<Value, String> {
    if n == 0 {
        return Err("bucket count must be positive".into());
    }
    let event = Event::new(0, "demo", parse_type(event_type)?).with_url(url);
    let strings = event_strings(&event);
    let v = hash_buckets(strings.iter().map(String::as_str), n, salt);
    let rows: Vec<Value> = strings
        .iter()
        .map(|s| {
            let (a, b) = bucket_indices(s, n, salt);
            json!({"string": s, "buckets": [a, b]})
        })
        .collect();
    Ok(json!({
        "strings": rows,
        "set": v.nonzeros().iter().map(|(i, _)| *i).collect::<Vec<_>>(),
        "zeroFraction": v.zero_fraction(),
        "n": n,
    }))
}

/// Edges of the combined linear then geometric scheme and the slot of `value`.
pub fn dwell_buckets_json(step: f64, linear_cutoff: f64, cutoff: f64, total: usize, value: f64) -> Result<Value, String> {
    let spec = BucketSpec::combined(step, linear_cutoff, cutoff, total).map_err(|e| e.to_string())?;
    Ok(json!({"edges": spec.edges(), "index": spec.index(value), "buckets": spec.n_buckets()}))
}

/// Draws overconfident logits, fits matrix scaling on half and reports the
/// other half before and after.
pub fn calibration_json(seed: u64, n: usize, overconfidence: f64) -> Result<Value, String> {
    if n < 20 {
        return Err("need at least 20 samples".into());
    }
    if !(overconfidence > 0.0) {
        return Err("overconfidence must be positive".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.5).map_err(|e| e.to_string())?;
    let mut logits = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let margin: f64 = noise.sample(&mut rng) - 1.0;
        let p = 1.0 / (1.0 + (-margin).exp());
        labels.push(u8::from(rng.random::<f64>() < p));
        logits.push([0.0, margin * overconfidence]);
    }
    let fit = matrix_scaling_fit(&logits, &labels, &ScalingOptions { seed, ..Default::default() }).map_err(|e| e.to_string())?;
    let held_labels: Vec<u8> = fit.holdout_indices.iter().map(|i| labels[*i]).collect();
    let before: Vec<[f64; 2]> = fit.holdout_indices.iter().map(|i| softmax2(logits[*i])).collect();
    let after: Vec<[f64; 2]> = fit.holdout_indices.iter().map(|i| fit.scaling.apply(logits[*i])).collect();
    let per_bucket = (held_labels.iter().filter(|y| **y == 1).count() / 10).max(5);
    let report = |probs: &[[f64; 2]]| -> Result<Value, String> {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let curve = calibration_curve(&scores, &held_labels, per_bucket).map_err(|e| e.to_string())?;
        let points: Vec<Value> = curve.buckets.iter().map(|b| json!({"conf": b.conf, "actual": b.actual, "count": b.count})).collect();
        Ok(json!({"ece": ece(probs, &held_labels, 10).map_err(|e| e.to_string())?, "curve": points}))
    };
    Ok(json!({
        "before": report(&before)?,
        "after": report(&after)?,
        "scaling": {"w": fit.scaling.w, "b": fit.scaling.b},
        "holdout": held_labels.len(),
    }))
}

fn respond(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = hashEvent)]
pub fn hash_event(event_type: &str, url: &str, n: usize, salt: &str) -> Result<String, JsError> {
    respond(hash_event_json(event_type, url, n, salt))
}

#[wasm_bindgen(js_name = dwellBuckets)]
pub fn dwell_buckets(step: f64, linear_cutoff: f64, cutoff: f64, total: usize, value: f64) -> Result<String, JsError> {
    respond(dwell_buckets_json(step, linear_cutoff, cutoff, total, value))
}

#[wasm_bindgen(js_name = calibrationDemo)]
pub fn calibration_demo(seed: u32, n: usize, overconfidence: f64) -> Result<String, JsError> {
    respond(calibration_json(u64::from(seed), n, overconfidence))
}
