//! Real-time side: ingestion into an archive and a short-lived event store,
//! a registry of frozen models, and the prediction path shared with
//! lifecycle verification.

pub mod frozen;
pub mod log;
pub mod registry;
pub mod store;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use frozen::{deserialize_model, serialize_model, FrozenHeader};
pub use log::{read_log, PredictionLog, PredictionLogRecord};
pub use registry::ModelRegistry;
pub use store::{Appended, Clock, EventStore, ManualClock, StoreConfig, SystemClock};

use crate::examples::{make_instance, EventFilter, Instance};
use crate::model::{ModelError, Prediction, TrainedModel};
use crate::sessions::{preprocess_event, ArchiveWriter, Event, SessionError};

#[derive(Debug, thiserror::Error)]
pub enum ServingError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("invalid frozen model: {0}")]
    Format(String),
    #[error("archive sink unavailable (retryable): {0}")]
    ArchiveUnavailable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ServingError::ArchiveUnavailable(_))
    }
}

/// Long-term event archive fed by ingestion.
pub trait ArchiveSink: Send + Sync {
    fn write_batch(&self, events: &[Event]) -> Result<(), String>;
}

/// Appends to an ndjson archive file.
pub struct FileArchiveSink {
    path: PathBuf,
    writer: Mutex<Option<ArchiveWriter>>,
}

impl FileArchiveSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileArchiveSink {
            path: path.into(),
            writer: Mutex::new(None),
        }
    }
}

impl ArchiveSink for FileArchiveSink {
    fn write_batch(&self, events: &[Event]) -> Result<(), String> {
        let mut guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            }
            *guard = Some(ArchiveWriter::append(&self.path).map_err(|e| e.to_string())?);
        }
        let w = guard.as_mut().expect("writer opened above");
        let r = w.write_all(events).and_then(|_| w.flush());
        if let Err(e) = r {
            *guard = None;
            return Err(e.to_string());
        }
        Ok(())
    }
}

/// Collects events in memory; can be switched off to simulate an outage.
#[derive(Default)]
pub struct MemoryArchiveSink {
    events: Mutex<Vec<Event>>,
    down: std::sync::atomic::AtomicBool,
}

impl MemoryArchiveSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_available(&self, up: bool) {
        self.down.store(!up, std::sync::atomic::Ordering::SeqCst);
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl ArchiveSink for MemoryArchiveSink {
    fn write_batch(&self, events: &[Event]) -> Result<(), String> {
        if self.down.load(std::sync::atomic::Ordering::SeqCst) {
            return Err("memory sink is down".into());
        }
        self.events.lock().unwrap_or_else(|p| p.into_inner()).extend_from_slice(events);
        Ok(())
    }
}

impl<T: ArchiveSink + ?Sized> ArchiveSink for Arc<T> {
    fn write_batch(&self, events: &[Event]) -> Result<(), String> {
        (**self).write_batch(events)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted events the store did not keep (type not allowed).
    pub not_stored: usize,
    /// Per-event rejection reasons, `(index in batch, message)`.
    pub errors: Vec<(usize, String)>,
}

/// Builds the model input from raw recent events and predicts. Training-time
/// verification replays saved examples through this function.
pub fn instance_for(model: &TrainedModel, events: &[Event]) -> Instance {
    let filters: Vec<Box<dyn EventFilter>> = vec![Box::new(model.filter())];
    make_instance(events, &filters, model.config.seq_len)
}

pub fn predict_events(model: &TrainedModel, events: &[Event]) -> Result<Prediction, ModelError> {
    model.predict_instance(&instance_for(model, events))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictResponse {
    pub family_id: String,
    pub version_id: String,
    pub anonymous_id: String,
    pub value: f64,
    pub calibrated: bool,
    pub cold_start: bool,
    pub event_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelInfo {
    pub family_id: String,
    pub version_id: String,
    pub calibrated: bool,
    pub seq_len: usize,
    pub val_auc: f64,
    pub versions: Vec<String>,
}

/// Ingestion plus prediction over shared store, registry and log.
pub struct PredictionService<C: Clock = SystemClock> {
    pub store: EventStore<C>,
    pub registry: Arc<ModelRegistry>,
    pub log: PredictionLog,
    archive: Box<dyn ArchiveSink>,
}

impl<C: Clock> PredictionService<C> {
    pub fn new(
        store: EventStore<C>,
        registry: impl Into<Arc<ModelRegistry>>,
        log: PredictionLog,
        archive: Box<dyn ArchiveSink>,
    ) -> Self {
        PredictionService {
            store,
            registry: registry.into(),
            log,
            archive,
        }
    }

    /// Preprocesses each raw event, archives every valid one, then appends
    /// the allowed ones to the store. Malformed events are counted, never
    /// failing the batch; an archive failure fails the whole batch and stores
    /// nothing, so the client can retry.
    pub fn ingest(&self, batch: &[Value]) -> Result<IngestAck, ServingError> {
        let mut ack = IngestAck::default();
        let mut valid = Vec::with_capacity(batch.len());
        for (i, raw) in batch.iter().enumerate() {
            let parsed = match raw {
                Value::Object(m) => preprocess_event(m),
                _ => Err(SessionError::Malformed("event is not an object".into())),
            };
            match parsed {
                Ok(e) => valid.push(e),
                Err(e) => {
                    ack.rejected += 1;
                    ack.errors.push((i, e.to_string()));
                }
            }
        }
        if !valid.is_empty() {
            self.archive.write_batch(&valid).map_err(ServingError::ArchiveUnavailable)?;
        }
        ack.accepted = valid.len();
        for e in valid {
            if self.store.append(e) == Appended::Skipped {
                ack.not_stored += 1;
            }
        }
        Ok(ack)
    }

    pub fn ingest_events(&self, events: Vec<Event>) -> Result<IngestAck, ServingError> {
        let batch: Vec<Value> = events
            .iter()
            .map(|e| serde_json::to_value(e.to_record()).unwrap_or(Value::Object(Map::new())))
            .collect();
        self.ingest(&batch)
    }

    pub fn handle_predict(&self, family_id: &str, anonymous_id: &str) -> Result<PredictResponse, ServingError> {
        let model = self
            .registry
            .active(family_id)
            .ok_or_else(|| ServingError::NotFound(format!("no active model for family {family_id}")))?;
        let events = self.store.recent(anonymous_id, model.config.seq_len, None);
        let instance = instance_for(&model, &events);
        let prediction = model.predict_instance(&instance)?;
        let used: Vec<String> = instance.real_events().iter().map(Event::id).collect();
        let cold_start = used.is_empty();
        self.log.append(&PredictionLogRecord {
            wall_timestamp: self.store.clock().now_ms(),
            anonymous_id: anonymous_id.to_string(),
            family_id: model.family_id.clone(),
            version_id: model.version_id.clone(),
            event_ids: used.clone(),
            value: prediction.value,
            calibrated: prediction.calibrated,
            cold_start,
        })?;
        Ok(PredictResponse {
            family_id: model.family_id.clone(),
            version_id: model.version_id.clone(),
            anonymous_id: anonymous_id.to_string(),
            value: prediction.value,
            calibrated: prediction.calibrated,
            cold_start,
            event_count: used.len(),
        })
    }

    pub fn model_info(&self, family_id: &str) -> Result<ModelInfo, ServingError> {
        let model = self
            .registry
            .active(family_id)
            .ok_or_else(|| ServingError::NotFound(format!("no active model for family {family_id}")))?;
        Ok(ModelInfo {
            family_id: model.family_id.clone(),
            version_id: model.version_id.clone(),
            calibrated: model.calibration.is_some(),
            seq_len: model.config.seq_len,
            val_auc: model.stats.val_auc,
            versions: self.registry.versions(family_id),
        })
    }
}
