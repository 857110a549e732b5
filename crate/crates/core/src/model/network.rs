//! Forward pass and backpropagation through time for the GRU + MLP classifier.
//!
//! Recurrence, per step with input `x` and previous state `h`:
//!
//! ```text
//! z  = sigmoid(x Wz + Uz h + bz)
//! r  = sigmoid(x Wr + Ur h + br)
//! n  = tanh(x Wn + Un (r * h) + bn)
//! h' = (1 - z) * n + z * h
//! ```
//!
//! The final state is concatenated with the MLP output over metadata and
//! projected to class logits.

use rand::Rng;

use super::params::{Dense, Gate, ModelParams};
use super::{ModelConfig, ModelError};
use crate::encoding::{EncodedInstance, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Sequence in sparse form: per step, `(index, value)` of non-zero inputs
/// in increasing index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInput {
    pub steps: Vec<Vec<(u32, f64)>>,
    pub metadata: Vec<f64>,
}

impl SparseInput {
    pub fn new(sequence: &[FeatureVector], metadata: &FeatureVector) -> Self {
        SparseInput {
            steps: sequence.iter().map(FeatureVector::nonzeros).collect(),
            metadata: metadata.0.clone(),
        }
    }

    pub fn from_encoded(encoded: &EncodedInstance) -> Self {
        Self::new(&encoded.sequence, &encoded.metadata)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    /// States `h_0 .. h_T`.
    hs: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    ns: Vec<Vec<f64>>,
    /// Inputs to each MLP layer; the last entry is the MLP output.
    mlp_acts: Vec<Vec<f64>>,
    /// Post-ReLU, pre-dropout activations per layer.
    mlp_relu: Vec<Vec<f64>>,
    /// Per hidden layer dropout scale factors; empty in infer mode.
    mlp_masks: Vec<Vec<f64>>,
    merged_mask: Vec<f64>,
    merged: Vec<f64>,
    pub output: Option<Output>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// `out = bias + x W + U h` for one gate.
#[inline]
fn gate_preactivation(gate: &Gate, x: &[(u32, f64)], h: &[f64], out: &mut [f64]) {
    out.copy_from_slice(&gate.bias);
    for &(j, v) in x {
        for (o, w) in out.iter_mut().zip(gate.input.row(j as usize)) {
            *o += w * v;
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(gate.recurrent.row(i), h);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense_forward(layer: &Dense, x: &[f64]) -> Vec<f64> {
    (0..layer.weight.rows)
        .map(|i| layer.bias[i] + dot(layer.weight.row(i), x))
        .collect()
}

fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

fn check_dims(input: &SparseInput, config: &ModelConfig) -> Result<(), ModelError> {
    if input.steps.len() != config.seq_len {
        return Err(ModelError::Dimension(format!(
            "sequence length {} != seq_len {}",
            input.steps.len(),
            config.seq_len
        )));
    }
    if input.metadata.len() != config.metadata_dim {
        return Err(ModelError::Dimension(format!(
            "metadata length {} != {}",
            input.metadata.len(),
            config.metadata_dim
        )));
    }
    if let Some((j, _)) = input.steps.iter().flatten().find(|(j, _)| *j as usize >= config.event_dim) {
        return Err(ModelError::Dimension(format!("input index {j} >= event_dim {}", config.event_dim)));
    }
    Ok(())
}

/// Full forward pass returning the cache needed by [`backward`].
///
/// `rng` is only consulted in [`Mode::Train`] when dropout is enabled.
pub fn forward_cached<R: Rng + ?Sized>(
    input: &SparseInput,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(Output, Cache), ModelError> {
    check_dims(input, config)?;
    let h_units = config.gru_units;
    let mut cache = Cache::default();
    let mut h = vec![0.0; h_units];
    cache.hs.push(h.clone());
    let mut az = vec![0.0; h_units];
    let mut ar = vec![0.0; h_units];
    let mut an = vec![0.0; h_units];
    let mut rh = vec![0.0; h_units];
    for x in &input.steps {
        gate_preactivation(&params.update, x, &h, &mut az);
        gate_preactivation(&params.reset, x, &h, &mut ar);
        let z: Vec<f64> = az.iter().map(|a| sigmoid(*a)).collect();
        let r: Vec<f64> = ar.iter().map(|a| sigmoid(*a)).collect();
        for i in 0..h_units {
            rh[i] = r[i] * h[i];
        }
        gate_preactivation(&params.candidate, x, &rh, &mut an);
        let n: Vec<f64> = an.iter().map(|a| a.tanh()).collect();
        for i in 0..h_units {
            h[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
        }
        cache.zs.push(z);
        cache.rs.push(r);
        cache.ns.push(n);
        cache.hs.push(h.clone());
    }

    let train = mode == Mode::Train && config.dropout_rate > 0.0;
    let mut act = input.metadata.clone();
    let n_layers = params.mlp.len();
    for (l, layer) in params.mlp.iter().enumerate() {
        cache.mlp_acts.push(act);
        let relu: Vec<f64> = dense_forward(layer, cache.mlp_acts.last().unwrap())
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        act = relu.clone();
        if train && l + 1 < n_layers {
            let mask = dropout_mask(relu.len(), config.dropout_rate, rng);
            act.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
            cache.mlp_masks.push(mask);
        }
        cache.mlp_relu.push(relu);
    }
    cache.mlp_acts.push(act);

    let mut merged = h.clone();
    merged.extend_from_slice(cache.mlp_acts.last().unwrap());
    if train {
        let mask = dropout_mask(merged.len(), config.dropout_rate, rng);
        merged.iter_mut().zip(&mask).for_each(|(a, m)| *a *= m);
        cache.merged_mask = mask;
    }
    let raw = dense_forward(&params.output, &merged);
    cache.merged = merged;
    let logits = [raw[0], raw[1]];
    let probs = softmax2(logits);
    if !(logits.iter().chain(&probs).all(|v| v.is_finite())) {
        return Err(ModelError::Numeric(format!("non-finite output {logits:?}")));
    }
    let output = Output { logits, probs };
    cache.output = Some(output);
    Ok((output, cache))
}

pub fn forward_sparse(input: &SparseInput, params: &ModelParams, config: &ModelConfig) -> Result<Output, ModelError> {
    forward_cached(input, params, config, Mode::Infer, &mut NoRng).map(|(o, _)| o)
}

/// Dense-input entry point.
pub fn forward<R: Rng + ?Sized>(
    sequence: &[FeatureVector],
    metadata: &FeatureVector,
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Output, ModelError> {
    if let Some(v) = sequence.iter().find(|v| v.len() != config.event_dim) {
        return Err(ModelError::Dimension(format!("event vector of length {} != {}", v.len(), config.event_dim)));
    }
    forward_cached(&SparseInput::new(sequence, metadata), params, config, mode, rng).map(|(o, _)| o)
}

/// Stand-in generator for inference, where no randomness is drawn.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference draws no random numbers")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("inference draws no random numbers")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("inference draws no random numbers")
    }
}

/// Loss-weight for `label`.
pub fn class_weight(label: u8, pos_weight: f64) -> f64 {
    if label == 1 {
        pos_weight
    } else {
        1.0
    }
}

/// Accumulates `scale * d(weighted CE)/d(params)` into `grads`.
pub fn backward(
    input: &SparseInput,
    cache: &Cache,
    label: u8,
    params: &ModelParams,
    config: &ModelConfig,
    scale: f64,
    grads: &mut ModelParams,
) {
    let out = cache.output.expect("forward pass populated the cache");
    let w = class_weight(label, config.pos_weight) * scale;
    let target = [f64::from(label == 0), f64::from(label == 1)];
    let dlogits = [w * (out.probs[0] - target[0]), w * (out.probs[1] - target[1])];

    // output layer
    let merged_len = cache.merged.len();
    let mut dmerged = vec![0.0; merged_len];
    for (k, dl) in dlogits.iter().enumerate() {
        grads.output.bias[k] += dl;
        let grow = grads.output.weight.row_mut(k);
        for (g, m) in grow.iter_mut().zip(&cache.merged) {
            *g += dl * m;
        }
        for (d, wv) in dmerged.iter_mut().zip(params.output.weight.row(k)) {
            *d += dl * wv;
        }
    }
    if !cache.merged_mask.is_empty() {
        dmerged.iter_mut().zip(&cache.merged_mask).for_each(|(d, m)| *d *= m);
    }
    let h_units = config.gru_units;
    let mut dh = dmerged[..h_units].to_vec();
    let mut dact = dmerged[h_units..].to_vec();

    // metadata MLP
    for l in (0..params.mlp.len()).rev() {
        if let Some(mask) = cache.mlp_masks.get(l) {
            dact.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let relu = &cache.mlp_relu[l];
        let dpre: Vec<f64> = dact.iter().zip(relu).map(|(d, a)| if *a > 0.0 { *d } else { 0.0 }).collect();
        let input_act = &cache.mlp_acts[l];
        let layer = &params.mlp[l];
        let glayer = &mut grads.mlp[l];
        let mut dinput = vec![0.0; input_act.len()];
        for (i, dp) in dpre.iter().enumerate() {
            if *dp == 0.0 {
                continue;
            }
            glayer.bias[i] += dp;
            for (g, a) in glayer.weight.row_mut(i).iter_mut().zip(input_act) {
                *g += dp * a;
            }
            for (d, wv) in dinput.iter_mut().zip(layer.weight.row(i)) {
                *d += dp * wv;
            }
        }
        dact = dinput;
    }

    // recurrence, last step first
    let mut da_z = vec![0.0; h_units];
    let mut da_r = vec![0.0; h_units];
    let mut da_n = vec![0.0; h_units];
    let mut drh = vec![0.0; h_units];
    let mut dh_prev = vec![0.0; h_units];
    for t in (0..input.steps.len()).rev() {
        let x = &input.steps[t];
        let h_prev = &cache.hs[t];
        let (z, r, n) = (&cache.zs[t], &cache.rs[t], &cache.ns[t]);
        for i in 0..h_units {
            let dz = dh[i] * (h_prev[i] - n[i]);
            let dn = dh[i] * (1.0 - z[i]);
            da_n[i] = dn * (1.0 - n[i] * n[i]);
            da_z[i] = dz * z[i] * (1.0 - z[i]);
            dh_prev[i] = dh[i] * z[i];
        }
        // candidate: recurrent term acts on r * h_prev
        drh.fill(0.0);
        accumulate_gate(&mut grads.candidate, x, &da_n);
        for i in 0..h_units {
            let dai = da_n[i];
            let grow = grads.candidate.recurrent.row_mut(i);
            for k in 0..h_units {
                grow[k] += dai * r[k] * h_prev[k];
            }
            for (d, u) in drh.iter_mut().zip(params.candidate.recurrent.row(i)) {
                *d += dai * u;
            }
        }
        for i in 0..h_units {
            let dr = drh[i] * h_prev[i];
            dh_prev[i] += drh[i] * r[i];
            da_r[i] = dr * r[i] * (1.0 - r[i]);
        }
        for (gate, grad, da) in [
            (&params.reset, &mut grads.reset, &da_r),
            (&params.update, &mut grads.update, &da_z),
        ] {
            accumulate_gate(grad, x, da);
            for i in 0..h_units {
                let dai = da[i];
                let grow = grad.recurrent.row_mut(i);
                for (g, hp) in grow.iter_mut().zip(h_prev) {
                    *g += dai * hp;
                }
                for (d, u) in dh_prev.iter_mut().zip(gate.recurrent.row(i)) {
                    *d += dai * u;
                }
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}

/// Input-weight and bias gradients of one gate.
#[inline]
fn accumulate_gate(grad: &mut Gate, x: &[(u32, f64)], da: &[f64]) {
    for (b, d) in grad.bias.iter_mut().zip(da) {
        *b += d;
    }
    for &(j, v) in x {
        for (g, d) in grad.input.row_mut(j as usize).iter_mut().zip(da) {
            *g += v * d;
        }
    }
}
