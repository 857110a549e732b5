//! Archive to sessions to examples to trained, calibrated and evaluated models.

use std::path::Path;

use crate::config::Config;
use crate::encoding::fnv1a64;
use crate::evaluation::{build_report, EvalError, EvalReport, Scored};
use crate::examples::{generate_examples, generator_by_name, EventFilter, Example, ExampleError, TypeFilter};
use crate::model::{calibrate, hyperparameter_search, ModelError, SearchOutcome, TrainedModel};
use crate::sessions::{read_archive, sessionize, Event, SessionError, Sessionized};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Example(#[from] ExampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("insufficient_data: {0}")]
    InsufficientData(String),
}

impl PipelineError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Session(_) => "archive",
            PipelineError::Example(_) => "examples",
            PipelineError::Model(ModelError::SingleClass) => "insufficient_data",
            PipelineError::Model(_) => "training",
            PipelineError::Eval(_) => "evaluation",
            PipelineError::InsufficientData(_) => "insufficient_data",
        }
    }
}

/// Reads an archive; a missing file is an empty archive.
pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<Event>, PipelineError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_archive(path)?.events)
}

/// Events with `now_ms - days < timestamp <= now_ms`.
pub fn window(events: &[Event], now_ms: i64, days: f64) -> Vec<Event> {
    let from = now_ms - (days * 86_400_000.0) as i64;
    events
        .iter()
        .filter(|e| e.timestamp > from && e.timestamp <= now_ms)
        .cloned()
        .collect()
}

pub fn filters(config: &Config) -> Vec<Box<dyn EventFilter>> {
    vec![Box::new(TypeFilter::new(config.examples.filtered_types.iter().copied()))]
}

pub fn build_examples(events: &[Event], config: &Config) -> Result<(Vec<Example>, Sessionized), PipelineError> {
    let sessions = sessionize(events, &config.sessionize_config());
    let generator = generator_by_name(&config.examples.generator, config.examples.positive_type)?;
    let filters = filters(config);
    let mut out = Vec::new();
    for s in &sessions.sessions {
        out.extend(generate_examples(s, generator.as_ref(), &filters, config.examples.max_len)?);
    }
    Ok((out, sessions))
}

/// Deterministic user-level holdout membership.
pub fn is_test_user(anonymous_id: &str, fraction: f64) -> bool {
    (fnv1a64(anonymous_id.as_bytes()) % 1_000_000) as f64 / 1_000_000.0 < fraction
}

/// `(train, test)` partition by user.
pub fn split_users(examples: Vec<Example>, fraction: f64) -> (Vec<Example>, Vec<Example>) {
    examples.into_iter().partition(|e| !is_test_user(&e.anonymous_id, fraction))
}

pub fn count_positives(examples: &[Example]) -> usize {
    examples.iter().filter(|e| e.label == 1).count()
}

/// Grid search, then matrix scaling on half the validation split when enabled.
pub fn train_model(examples: &[Example], config: &Config, family_id: &str, version_id: &str) -> Result<SearchOutcome, PipelineError> {
    let positives = count_positives(examples);
    if examples.is_empty() || positives == 0 || positives == examples.len() {
        return Err(PipelineError::InsufficientData(format!(
            "{} examples with {positives} positives",
            examples.len()
        )));
    }
    let mut outcome = hyperparameter_search(examples, &config.training_setup(), &config.search)?;
    outcome.model.family_id = family_id.to_string();
    outcome.model.version_id = version_id.to_string();
    if config.calibration.enabled {
        calibrate(&mut outcome.model, &outcome.dataset, &config.calibration.scaling)?;
    }
    Ok(outcome)
}

/// Reported probabilities (calibrated when available) and scored rows.
pub fn score(model: &TrainedModel, examples: &[Example]) -> Result<(Vec<Scored>, Vec<[f64; 2]>), PipelineError> {
    let mut scored = Vec::with_capacity(examples.len());
    let mut probs = Vec::with_capacity(examples.len());
    for ex in examples {
        let p = model.predict_instance(&ex.instance)?;
        let reported = match &model.calibration {
            Some(c) => c.apply(p.logits),
            None => p.probs,
        };
        scored.push(Scored {
            stats: ex.instance.stats.clone(),
            score: p.value,
            label: ex.label,
        });
        probs.push(reported);
    }
    Ok((scored, probs))
}

pub fn evaluate(model: &TrainedModel, examples: &[Example], config: &Config) -> Result<EvalReport, PipelineError> {
    if examples.is_empty() {
        return Err(PipelineError::InsufficientData("no evaluation examples".into()));
    }
    let (scored, probs) = score(model, examples)?;
    Ok(build_report(&scored, &probs, model.calibration.is_some(), &config.report_options())?)
}
