use serde::{Deserialize, Serialize};

use super::{EncodingError, FeatureVector};

/// Ordered bucket boundaries.
///
/// A value maps to the slot `count(edges <= value) - 1`, clamped to the
/// valid range, so there are as many slots as edges and the last slot holds
/// values at or beyond the final edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    edges: Vec<f64>,
}

impl BucketSpec {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, EncodingError> {
        if edges.len() < 2 {
            return Err(EncodingError::Config("need at least two bucket edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(EncodingError::Config("bucket edges must be finite".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EncodingError::Config("bucket edges must strictly increase".into()));
        }
        Ok(BucketSpec { edges })
    }

    /// Evenly spaced edges `start, start + step, ..., end`.
    pub fn linear(start: f64, end: f64, n_buckets: usize) -> Result<Self, EncodingError> {
        if n_buckets < 2 {
            return Err(EncodingError::Config(format!("n_buckets {n_buckets} < 2")));
        }
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(EncodingError::Config(format!("empty range [{start}, {end}]")));
        }
        let step = (end - start) / (n_buckets - 1) as f64;
        let mut edges: Vec<f64> = (0..n_buckets).map(|i| start + step * i as f64).collect();
        edges[n_buckets - 1] = end;
        Self::from_edges(edges)
    }

    /// Linear buckets of width `linear_step` up to `linear_cutoff`, then
    /// geometrically growing buckets up to `nonlinear_cutoff`, `total` edges
    /// past zero in all.
    ///
    /// With `k = linear_cutoff / linear_step` linear edges the geometric
    /// segment is `linear_cutoff * p^i` for `i = 1..=total - k`, where
    /// `p = (nonlinear_cutoff / linear_cutoff)^(1 / (total - k))`. The
    /// segment starts where the linear one ends and its last edge lands on
    /// `nonlinear_cutoff`.
    pub fn combined(
        linear_step: f64,
        linear_cutoff: f64,
        nonlinear_cutoff: f64,
        total: usize,
    ) -> Result<Self, EncodingError> {
        if !(linear_step > 0.0) || !(linear_cutoff > 0.0) {
            return Err(EncodingError::Config("linear step and cutoff must be positive".into()));
        }
        if !(nonlinear_cutoff > linear_cutoff) || !nonlinear_cutoff.is_finite() {
            return Err(EncodingError::Config(format!(
                "non-linear cutoff {nonlinear_cutoff} must exceed linear cutoff {linear_cutoff}"
            )));
        }
        let ratio = linear_cutoff / linear_step;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(EncodingError::Config(format!(
                "linear step {linear_step} does not divide cutoff {linear_cutoff}"
            )));
        }
        let k = k as usize;
        if total <= k {
            return Err(EncodingError::Config(format!(
                "total edge count {total} leaves no room after {k} linear edges"
            )));
        }
        let geometric = total - k;
        let p = (nonlinear_cutoff / linear_cutoff).powf(1.0 / geometric as f64);
        let mut edges: Vec<f64> = (0..k).map(|i| linear_step * i as f64).collect();
        edges.push(linear_cutoff);
        edges.extend((1..=geometric).map(|i| linear_cutoff * p.powi(i as i32)));
        Self::from_edges(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_buckets(&self) -> usize {
        self.edges.len()
    }

    pub fn index(&self, value: f64) -> usize {
        let count = self.edges.partition_point(|e| *e <= value);
        count.saturating_sub(1).min(self.edges.len() - 1)
    }

    pub fn one_hot(&self, value: f64) -> FeatureVector {
        let mut v = vec![0.0; self.edges.len()];
        v[self.index(value)] = 1.0;
        FeatureVector(v)
    }
}

/// One-hot bucket vector over `n_buckets` evenly spaced edges on `[start, end]`.
pub fn linear_bucket_vector(
    value: f64,
    start: f64,
    end: f64,
    n_buckets: usize,
) -> Result<FeatureVector, EncodingError> {
    Ok(BucketSpec::linear(start, end, n_buckets)?.one_hot(value))
}
