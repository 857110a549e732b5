//! Maps instances onto `[0, 1]`-valued feature vectors.
//!
//! Each real event becomes the concatenation of
//! `[hash buckets | event-type one-hot | dwell-time buckets]`; blank padding
//! events become all-zero vectors. Session metadata is normalized into its
//! own vector.

mod buckets;
mod hashing;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::examples::{metadata_keys, Instance};
use crate::sessions::{Event, EventType};

pub use buckets::{linear_bucket_vector, BucketSpec};
pub use hashing::{bucket_indices, fnv1a64, hash_buckets, DEFAULT_SALT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("encoder configuration: {0}")]
    Config(String),
    #[error("encoding: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(n: usize) -> Self {
        FeatureVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Fraction of exactly-zero entries.
    pub fn zero_fraction(&self) -> f64 {
        if self.0.is_empty() {
            return 1.0;
        }
        self.0.iter().filter(|v| **v == 0.0).count() as f64 / self.0.len() as f64
    }

    pub fn nonzeros(&self) -> Vec<(u32, f64)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect()
    }

    fn extend(&mut self, other: FeatureVector) {
        self.0.extend(other.0);
    }
}

/// One-hot over `vocab`; with `oov_slot` an extra trailing slot catches
/// unknown values.
pub fn one_hot<T: PartialEq + std::fmt::Debug>(
    value: &T,
    vocab: &[T],
    oov_slot: bool,
) -> Result<FeatureVector, EncodingError> {
    if vocab.is_empty() {
        return Err(EncodingError::Config("empty vocabulary".into()));
    }
    let width = vocab.len() + usize::from(oov_slot);
    let index = match vocab.iter().position(|v| v == value) {
        Some(i) => i,
        None if oov_slot => vocab.len(),
        None => return Err(EncodingError::Encode(format!("{value:?} not in vocabulary"))),
    };
    let mut v = vec![0.0; width];
    v[index] = 1.0;
    Ok(FeatureVector(v))
}

/// Min-max scaling clamped to `[0, 1]`.
pub fn normalize(x: f64, min: f64, max: f64) -> Result<f64, EncodingError> {
    if !(max > min) {
        return Err(EncodingError::Config(format!("normalization range [{min}, {max}] is empty")));
    }
    Ok(((x - min) / (max - min)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl NumericFeature {
    pub fn new(name: &str, min: f64, max: f64) -> Self {
        NumericFeature {
            name: name.to_string(),
            min,
            max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hash_dim: usize,
    pub salt: String,
    pub event_types: Vec<EventType>,
    pub dwell: BucketSpec,
    pub metadata: Vec<NumericFeature>,
    pub event_vector_dim: usize,
    pub metadata_vector_dim: usize,
}

impl EncoderConfig {
    pub fn new(
        hash_dim: usize,
        salt: impl Into<String>,
        event_types: Vec<EventType>,
        dwell: BucketSpec,
        metadata: Vec<NumericFeature>,
    ) -> Result<Self, EncodingError> {
        let config = EncoderConfig {
            event_vector_dim: hash_dim + event_types.len() + dwell.n_buckets(),
            metadata_vector_dim: metadata.len(),
            hash_dim,
            salt: salt.into(),
            event_types,
            dwell,
            metadata,
        };
        config.validate()?;
        Ok(config)
    }

    /// Defaults sized for sessions of `max_len` events.
    pub fn default_for(max_len: usize) -> Self {
        let dwell = BucketSpec::combined(5.0, 60.0, 7200.0, 30).expect("valid default dwell buckets");
        let n = max_len as f64;
        let metadata = vec![
            NumericFeature::new(metadata_keys::SESSION_EVENT_COUNT, 0.0, n),
            NumericFeature::new(metadata_keys::DISTINCT_PAGE_COUNT, 0.0, n),
            NumericFeature::new(metadata_keys::TOTAL_DWELL_SECONDS, 0.0, 3600.0),
            NumericFeature::new(metadata_keys::HOUR_OF_DAY, 0.0, 1.0),
            NumericFeature::new(metadata_keys::IS_RETURNING_USER, 0.0, 1.0),
        ];
        EncoderConfig::new(100, DEFAULT_SALT, EventType::OBSERVABLE.to_vec(), dwell, metadata)
            .expect("valid default encoder")
    }

    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.hash_dim < 2 {
            return Err(EncodingError::Config(format!("hash_dim {} < 2", self.hash_dim)));
        }
        if self.event_types.is_empty() || self.event_types.contains(&EventType::Blank) {
            return Err(EncodingError::Config("event type vocabulary must be non-empty and exclude blank".into()));
        }
        for f in &self.metadata {
            if !(f.max > f.min) {
                return Err(EncodingError::Config(format!("metadata feature {} has empty range", f.name)));
            }
        }
        let event_dim = self.hash_dim + self.event_types.len() + self.dwell.n_buckets();
        if event_dim != self.event_vector_dim || self.metadata.len() != self.metadata_vector_dim {
            return Err(EncodingError::Config(format!(
                "declared dims ({}, {}) disagree with layout ({event_dim}, {})",
                self.event_vector_dim,
                self.metadata_vector_dim,
                self.metadata.len()
            )));
        }
        Ok(())
    }
}

/// Strings hashed for one event.
pub fn event_strings(event: &Event) -> Vec<String> {
    let mut out = vec![format!("type:{}", event.event_type)];
    if let Some(url) = &event.url_parts {
        out.push(format!("host:{}", url.host));
        out.push(format!("path:{}", url.path));
        out.extend(url.query_keys.iter().map(|k| format!("qk:{k}")));
    }
    if let Some(ua) = &event.user_agent {
        out.push(format!("browser:{}", ua.browser_family));
        out.push(format!("os:{}", ua.os_family));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub sequence: Vec<FeatureVector>,
    pub metadata: FeatureVector,
}

pub fn encode_event(event: &Event, dwell_seconds: f64, config: &EncoderConfig) -> Result<FeatureVector, EncodingError> {
    if event.is_blank() {
        return Ok(FeatureVector::zeros(config.event_vector_dim));
    }
    let strings = event_strings(event);
    let mut v = hash_buckets(strings.iter().map(String::as_str), config.hash_dim, &config.salt);
    v.extend(one_hot(&event.event_type, &config.event_types, false)?);
    v.extend(config.dwell.one_hot(dwell_seconds));
    Ok(v)
}

pub fn encode_instance(instance: &Instance, config: &EncoderConfig) -> Result<EncodedInstance, EncodingError> {
    config.validate()?;
    let mut previous: Option<i64> = None;
    let mut sequence = Vec::with_capacity(instance.events.len());
    for event in &instance.events {
        let dwell = if event.is_blank() {
            0.0
        } else {
            let d = previous.map_or(0.0, |p| (event.timestamp - p) as f64 / 1000.0);
            previous = Some(event.timestamp);
            d
        };
        let v = encode_event(event, dwell, config)?;
        debug_assert_eq!(v.len(), config.event_vector_dim);
        sequence.push(v);
    }
    let mut metadata = Vec::with_capacity(config.metadata.len());
    for f in &config.metadata {
        let raw = instance
            .metadata
            .get(&f.name)
            .ok_or_else(|| EncodingError::Encode(format!("instance lacks metadata feature {}", f.name)))?;
        metadata.push(normalize(*raw, f.min, f.max)?);
    }
    Ok(EncodedInstance {
        sequence,
        metadata: FeatureVector(metadata),
    })
}
