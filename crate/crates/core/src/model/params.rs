use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Glorot-uniform initialization.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// One gate of the recurrent unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    /// Input weights, `input_dim x units` (input-major).
    pub input: Matrix,
    /// Recurrent weights, `units x units`.
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
}

/// All trainable parameters: recurrent gates, metadata MLP and output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
    pub mlp: Vec<Dense>,
    pub output: Dense,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let gate = || Gate {
            input: Matrix::zeros(config.event_dim, config.gru_units),
            recurrent: Matrix::zeros(config.gru_units, config.gru_units),
            bias: vec![0.0; config.gru_units],
        };
        let mut mlp = Vec::new();
        let mut fan_in = config.metadata_dim;
        for &size in &config.mlp_layer_sizes {
            mlp.push(Dense {
                weight: Matrix::zeros(size, fan_in),
                bias: vec![0.0; size],
            });
            fan_in = size;
        }
        let merged = config.gru_units + fan_in;
        ModelParams {
            update: gate(),
            reset: gate(),
            candidate: gate(),
            mlp,
            output: Dense {
                weight: Matrix::zeros(config.n_classes, merged),
                bias: vec![0.0; config.n_classes],
            },
        }
    }

    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let (d, h) = (config.event_dim, config.gru_units);
        for gate in [&mut p.update, &mut p.reset, &mut p.candidate] {
            gate.input = Matrix::glorot(d, h, d, h, rng);
            gate.recurrent = Matrix::glorot(h, h, h, h, rng);
        }
        for layer in &mut p.mlp {
            let (rows, cols) = (layer.weight.rows, layer.weight.cols);
            layer.weight = Matrix::glorot(rows, cols, cols, rows, rng);
        }
        let (rows, cols) = (p.output.weight.rows, p.output.weight.cols);
        p.output.weight = Matrix::glorot(rows, cols, cols, rows, rng);
        p
    }

    /// Shapes in serialization order.
    pub fn shapes(&self) -> Vec<TensorShape> {
        let mut out = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, kind: TensorKind| {
            out.push(TensorShape { name, rows, cols, kind })
        };
        for (name, g) in self.named_gates() {
            push(format!("{name}.input"), g.input.rows, g.input.cols, TensorKind::Weight);
            push(format!("{name}.recurrent"), g.recurrent.rows, g.recurrent.cols, TensorKind::Weight);
            push(format!("{name}.bias"), g.bias.len(), 1, TensorKind::Bias);
        }
        for (i, l) in self.mlp.iter().enumerate() {
            push(format!("mlp{i}.weight"), l.weight.rows, l.weight.cols, TensorKind::Weight);
            push(format!("mlp{i}.bias"), l.bias.len(), 1, TensorKind::Bias);
        }
        push("output.weight".into(), self.output.weight.rows, self.output.weight.cols, TensorKind::Weight);
        push("output.bias".into(), self.output.bias.len(), 1, TensorKind::Bias);
        out
    }

    fn named_gates(&self) -> [(&'static str, &Gate); 3] {
        [("update", &self.update), ("reset", &self.reset), ("candidate", &self.candidate)]
    }

    /// Tensor slices in serialization order, with their kind.
    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out: Vec<(TensorKind, &[f64])> = Vec::new();
        for (_, g) in self.named_gates() {
            out.push((TensorKind::Weight, &g.input.data));
            out.push((TensorKind::Weight, &g.recurrent.data));
            out.push((TensorKind::Bias, &g.bias));
        }
        for l in &self.mlp {
            out.push((TensorKind::Weight, &l.weight.data));
            out.push((TensorKind::Bias, &l.bias));
        }
        out.push((TensorKind::Weight, &self.output.weight.data));
        out.push((TensorKind::Bias, &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out: Vec<(TensorKind, &mut [f64])> = Vec::new();
        for g in [&mut self.update, &mut self.reset, &mut self.candidate] {
            out.push((TensorKind::Weight, &mut g.input.data));
            out.push((TensorKind::Weight, &mut g.recurrent.data));
            out.push((TensorKind::Bias, &mut g.bias));
        }
        for l in &mut self.mlp {
            out.push((TensorKind::Weight, &mut l.weight.data));
            out.push((TensorKind::Bias, &mut l.bias));
        }
        out.push((TensorKind::Weight, &mut self.output.weight.data));
        out.push((TensorKind::Bias, &mut self.output.bias));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat); `values` must have exactly [`len`](Self::len) entries.
    pub fn fill_from(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.len(), "parameter count mismatch");
        let mut offset = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    pub fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Sum of squared weight entries (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .filter(|(k, _)| *k == TensorKind::Weight)
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}
