//! Calibration diagnostics (expected calibration error, reliability curves)
//! and matrix-scaling recalibration of the classifier's logits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_MIN_POSITIVES: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} predictions, {1} labels")]
    Length(usize, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("fit set contains a single class")]
    SingleClass,
}

fn check_lengths(n: usize, m: usize) -> Result<(), CalibrationError> {
    if n != m {
        return Err(CalibrationError::Length(n, m));
    }
    if n == 0 {
        return Err(CalibrationError::Empty);
    }
    Ok(())
}

/// Bin `m` in `1..=bins` such that `(m-1)/bins < c <= m/bins`.
pub fn confidence_bin(c: f64, bins: usize) -> usize {
    let mf = bins as f64;
    let mut m = ((c * mf).ceil() as usize).clamp(1, bins);
    while m > 1 && (m - 1) as f64 / mf >= c {
        m -= 1;
    }
    while m < bins && (m as f64 / mf) < c {
        m += 1;
    }
    m
}

/// Expected calibration error with confidence = max class probability.
pub fn ece(probs: &[[f64; 2]], labels: &[u8], bins: usize) -> Result<f64, CalibrationError> {
    check_lengths(probs.len(), labels.len())?;
    if bins == 0 {
        return Err(CalibrationError::Invalid("bins must be >= 1".into()));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    for (p, &y) in probs.iter().zip(labels) {
        let predicted = u8::from(p[1] > p[0]);
        let c = p[0].max(p[1]);
        let m = confidence_bin(c, bins) - 1;
        count[m] += 1;
        correct[m] += usize::from(predicted == y);
        conf[m] += c;
    }
    let n = probs.len() as f64;
    Ok((0..bins)
        .filter(|m| count[*m] > 0)
        .map(|m| {
            let k = count[m] as f64;
            (k / n) * (correct[m] as f64 / k - conf[m] / k).abs()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBucket {
    pub count: usize,
    pub positive_count: usize,
    /// Mean predicted positive-class probability.
    pub conf: f64,
    /// Fraction of positives.
    pub actual: f64,
    pub min_pred: f64,
    pub max_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub buckets: Vec<CurveBucket>,
    pub min_positives: usize,
    /// Set when fewer than `min_positives` positives exist overall.
    pub insufficient_positives: bool,
}

impl CalibrationCurve {
    pub fn max_gap(&self) -> f64 {
        self.buckets.iter().map(|b| (b.conf - b.actual).abs()).fold(0.0, f64::max)
    }
}

/// Greedy reliability curve over predictions sorted from high to low (ties
/// keep input order). A bucket closes once it holds `min_positives`
/// positives; whatever follows the last closed bucket forms the final one.
pub fn calibration_curve(scores: &[f64], labels: &[u8], min_positives: usize) -> Result<CalibrationCurve, CalibrationError> {
    check_lengths(scores.len(), labels.len())?;
    let min_positives = min_positives.max(1);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let total_pos = labels.iter().filter(|y| **y == 1).count();
    let insufficient = total_pos < min_positives;

    let mut buckets = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut pos = 0;
    let close = |items: &[usize], buckets: &mut Vec<CurveBucket>| {
        let k = items.len() as f64;
        let positive_count = items.iter().filter(|i| labels[**i] == 1).count();
        buckets.push(CurveBucket {
            count: items.len(),
            positive_count,
            conf: items.iter().map(|i| scores[*i]).sum::<f64>() / k,
            actual: positive_count as f64 / k,
            min_pred: items.iter().map(|i| scores[*i]).fold(f64::INFINITY, f64::min),
            max_pred: items.iter().map(|i| scores[*i]).fold(f64::NEG_INFINITY, f64::max),
        });
    };
    for i in order {
        current.push(i);
        pos += usize::from(labels[i] == 1);
        if !insufficient && pos >= min_positives {
            close(&current, &mut buckets);
            current.clear();
            pos = 0;
        }
    }
    if !current.is_empty() {
        close(&current, &mut buckets);
    }
    Ok(CalibrationCurve {
        buckets,
        min_positives,
        insufficient_positives: insufficient,
    })
}

/// `softmax(W z + b)` recalibration of two-class logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixScaling {
    pub w: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Default for MatrixScaling {
    fn default() -> Self {
        Self::identity()
    }
}

impl MatrixScaling {
    pub fn identity() -> Self {
        MatrixScaling {
            w: [[1.0, 0.0], [0.0, 1.0]],
            b: [0.0, 0.0],
        }
    }

    pub fn transform(&self, z: [f64; 2]) -> [f64; 2] {
        [
            self.w[0][0] * z[0] + self.w[0][1] * z[1] + self.b[0],
            self.w[1][0] * z[0] + self.w[1][1] * z[1] + self.b[1],
        ]
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        crate::model::softmax2(self.transform(z))
    }

    pub fn to_flat(&self) -> [f64; 6] {
        [self.w[0][0], self.w[0][1], self.w[1][0], self.w[1][1], self.b[0], self.b[1]]
    }

    pub fn from_flat(v: &[f64; 6]) -> Self {
        MatrixScaling {
            w: [[v[0], v[1]], [v[2], v[3]]],
            b: [v[4], v[5]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingOptions {
    pub lr: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub steps: usize,
    pub fit_fraction: f64,
    pub seed: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            lr: 0.1,
            decay: 0.5,
            decay_every: 200,
            steps: 1000,
            fit_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Mean cross-entropy of `softmax(W z + b)`.
pub fn scaling_loss(ms: &MatrixScaling, logits: &[[f64; 2]], labels: &[u8]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(z, y)| crate::model::weighted_cross_entropy(ms.apply(*z), *y, 1.0))
        .sum::<f64>()
        / n
}

/// Gradient descent from the identity on every given sample.
pub fn fit_matrix_scaling(logits: &[[f64; 2]], labels: &[u8], opts: &ScalingOptions) -> Result<MatrixScaling, CalibrationError> {
    check_lengths(logits.len(), labels.len())?;
    let pos = labels.iter().filter(|y| **y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(CalibrationError::SingleClass);
    }
    if logits.iter().any(|z| !z[0].is_finite() || !z[1].is_finite()) {
        return Err(CalibrationError::Invalid("non-finite logits".into()));
    }
    let mut ms = MatrixScaling::identity();
    let n = logits.len() as f64;
    let mut lr = opts.lr;
    for step in 0..opts.steps {
        if step > 0 && opts.decay_every > 0 && step % opts.decay_every == 0 {
            lr *= opts.decay;
        }
        let mut gw = [[0.0; 2]; 2];
        let mut gb = [0.0; 2];
        for (z, &y) in logits.iter().zip(labels) {
            let p = ms.apply(*z);
            let d = [p[0] - f64::from(y == 0), p[1] - f64::from(y == 1)];
            for k in 0..2 {
                gb[k] += d[k];
                gw[k][0] += d[k] * z[0];
                gw[k][1] += d[k] * z[1];
            }
        }
        for k in 0..2 {
            ms.b[k] -= lr * gb[k] / n;
            ms.w[k][0] -= lr * gw[k][0] / n;
            ms.w[k][1] -= lr * gw[k][1] / n;
        }
    }
    if !ms.is_finite() {
        return Err(CalibrationError::Invalid("fit diverged".into()));
    }
    Ok(ms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub scaling: MatrixScaling,
    pub fit_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

/// Seeded split into fit and held-out parts, then [`fit_matrix_scaling`] on the fit part.
pub fn matrix_scaling_fit(logits: &[[f64; 2]], labels: &[u8], opts: &ScalingOptions) -> Result<ScalingFit, CalibrationError> {
    check_lengths(logits.len(), labels.len())?;
    if !(opts.fit_fraction > 0.0 && opts.fit_fraction <= 1.0) {
        return Err(CalibrationError::Invalid("fit_fraction must be in (0, 1]".into()));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_fit = ((logits.len() as f64 * opts.fit_fraction).round() as usize).clamp(1, logits.len());
    let mut fit_indices = idx[..n_fit].to_vec();
    let mut holdout_indices = idx[n_fit..].to_vec();
    fit_indices.sort_unstable();
    holdout_indices.sort_unstable();
    let z: Vec<[f64; 2]> = fit_indices.iter().map(|i| logits[*i]).collect();
    let y: Vec<u8> = fit_indices.iter().map(|i| labels[*i]).collect();
    Ok(ScalingFit {
        scaling: fit_matrix_scaling(&z, &y, opts)?,
        fit_indices,
        holdout_indices,
    })
}
