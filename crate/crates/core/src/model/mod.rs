//! Recurrent purchase-intent classifier: a GRU over the event sequence merged
//! with a small ReLU network over session metadata, trained with Adam on a
//! class-weighted cross-entropy.

pub mod adam;
pub mod loss;
pub mod network;
pub mod params;
pub mod search;
pub mod train;

use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use loss::weighted_cross_entropy;
pub use network::{forward, forward_sparse, softmax2, Mode, Output, SparseInput};
pub use params::{ModelParams, TensorKind, TensorShape};
pub use search::{hyperparameter_search, search_dataset, GridPoint, GridSearch, PointResult, SearchConfig, SearchOutcome};
pub use train::{calibrate, fit, stratified_split, train, Dataset, Split, TrainingStats};

use crate::calibration::MatrixScaling;
use crate::encoding::{encode_instance, EncodedInstance, EncoderConfig, EncodingError};
use crate::examples::{Instance, TypeFilter};
use crate::sessions::EventType;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("hyperparameter search failed: {0}")]
    Search(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub event_dim: usize,
    pub metadata_dim: usize,
    pub gru_units: usize,
    pub mlp_layer_sizes: Vec<usize>,
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub pos_weight: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: crate::examples::DEFAULT_MAX_LEN,
            event_dim: 0,
            metadata_dim: 0,
            gru_units: 32,
            mlp_layer_sizes: vec![16, 16],
            n_classes: 2,
            dropout_rate: 0.2,
            l2_lambda: 1e-4,
            pos_weight: 1.0,
            adam: AdamConfig::default(),
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small network used by gradient checks and unit tests.
    pub fn tiny(event_dim: usize, metadata_dim: usize) -> Self {
        ModelConfig {
            seq_len: 3,
            event_dim,
            metadata_dim,
            gru_units: 4,
            mlp_layer_sizes: vec![4, 3],
            dropout_rate: 0.0,
            l2_lambda: 0.0,
            epochs: 5,
            batch_size: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Training(format!("invalid model config: {m}")));
        if self.seq_len == 0 || self.event_dim == 0 || self.metadata_dim == 0 || self.gru_units == 0 {
            return bad("dimensions must be positive");
        }
        if self.mlp_layer_sizes.contains(&0) {
            return bad("mlp layer sizes must be positive");
        }
        if self.n_classes != 2 {
            return bad("only binary classification is supported");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be >= 0");
        }
        if !(self.pos_weight >= 1.0) {
            return bad("pos_weight must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Everything needed to turn examples into a model, before dimensions are
/// resolved from the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetup {
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub filtered_types: Vec<EventType>,
}

impl TrainingSetup {
    pub fn new(model: ModelConfig, encoder: EncoderConfig, filtered_types: Vec<EventType>) -> Self {
        TrainingSetup {
            model,
            encoder,
            filtered_types,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            event_dim: self.encoder.event_vector_dim,
            metadata_dim: self.encoder.metadata_vector_dim,
            ..self.model.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    /// Uncalibrated softmax.
    pub probs: [f64; 2],
    /// Reported purchase probability: calibrated when a calibration is present.
    pub value: f64,
    pub calibrated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub family_id: String,
    pub version_id: String,
    pub config: ModelConfig,
    pub encoder: EncoderConfig,
    pub filtered_types: Vec<EventType>,
    pub params: ModelParams,
    pub calibration: Option<MatrixScaling>,
    pub stats: TrainingStats,
}

impl TrainedModel {
    pub fn from_fit(setup: &TrainingSetup, config: ModelConfig, fitted: train::FitResult) -> Self {
        TrainedModel {
            family_id: String::new(),
            version_id: String::new(),
            config,
            encoder: setup.encoder.clone(),
            filtered_types: setup.filtered_types.clone(),
            params: fitted.params,
            calibration: None,
            stats: fitted.stats,
        }
    }

    pub fn filter(&self) -> TypeFilter {
        TypeFilter::new(self.filtered_types.iter().copied())
    }

    pub fn predict_sparse(&self, input: &SparseInput) -> Result<Prediction, ModelError> {
        let out = forward_sparse(input, &self.params, &self.config)?;
        Ok(match &self.calibration {
            Some(scaling) => Prediction {
                logits: out.logits,
                probs: out.probs,
                value: scaling.apply(out.logits)[1],
                calibrated: true,
            },
            None => Prediction {
                logits: out.logits,
                probs: out.probs,
                value: out.probs[1],
                calibrated: false,
            },
        })
    }

    pub fn predict_encoded(&self, encoded: &EncodedInstance) -> Result<Prediction, ModelError> {
        self.predict_sparse(&SparseInput::from_encoded(encoded))
    }

    pub fn predict_instance(&self, instance: &Instance) -> Result<Prediction, ModelError> {
        self.predict_encoded(&encode_instance(instance, &self.encoder)?)
    }
}
