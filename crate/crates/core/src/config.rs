//! Single TOML configuration file with one section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{ScalingOptions, DEFAULT_ECE_BINS, DEFAULT_MIN_POSITIVES};
use crate::encoding::{BucketSpec, EncoderConfig, DEFAULT_SALT};
use crate::evaluation::{Predicate, ReportOptions, DEFAULT_HISTOGRAM_BINS, DEFAULT_SEGMENTS};
use crate::examples::DEFAULT_MAX_LEN;
use crate::model::{ModelConfig, SearchConfig, TrainingSetup};
use crate::serving::store::StoreConfig;
use crate::sessions::{EventType, SessionizeConfig, DEFAULT_MAX_SESSION_LEN};
use crate::synth::SiteModel;

/// The configuration shipped with the repository.
pub const DEFAULT_TOML: &str = include_str!("../../../config/default.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Raw event archive (newline-delimited JSON).
    pub events: PathBuf,
    /// Root of the versioned model archive.
    pub models: PathBuf,
    pub prediction_log: PathBuf,
    /// Default output directory for reports.
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            events: "data/events.ndjson".into(),
            models: "data/models".into(),
            prediction_log: "data/predictions.ndjson".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionsSection {
    pub max_session_len: usize,
}

impl Default for SessionsSection {
    fn default() -> Self {
        SessionsSection {
            max_session_len: DEFAULT_MAX_SESSION_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExamplesSection {
    pub generator: String,
    pub positive_type: EventType,
    pub max_len: usize,
    /// Event types removed before instances are built.
    pub filtered_types: Vec<EventType>,
}

impl Default for ExamplesSection {
    fn default() -> Self {
        ExamplesSection {
            generator: "first_positive".into(),
            positive_type: EventType::Positive,
            max_len: DEFAULT_MAX_LEN,
            filtered_types: vec![EventType::Log],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwellSection {
    pub linear_step: f64,
    pub linear_cutoff: f64,
    pub nonlinear_cutoff: f64,
    pub total: usize,
}

impl Default for DwellSection {
    fn default() -> Self {
        DwellSection {
            linear_step: 5.0,
            linear_cutoff: 60.0,
            nonlinear_cutoff: 7200.0,
            total: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingSection {
    pub hash_dim: usize,
    pub salt: String,
    pub dwell: DwellSection,
}

impl Default for EncodingSection {
    fn default() -> Self {
        EncodingSection {
            hash_dim: 100,
            salt: DEFAULT_SALT.into(),
            dwell: DwellSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub enabled: bool,
    pub ece_bins: usize,
    pub min_positives: usize,
    pub scaling: ScalingOptions,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            enabled: true,
            ece_bins: DEFAULT_ECE_BINS,
            min_positives: DEFAULT_MIN_POSITIVES,
            scaling: ScalingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub name: String,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Share of users (chosen by id hash) withheld from training.
    pub test_fraction: f64,
    pub segments: usize,
    pub histogram_bins: usize,
    pub cohorts: Vec<CohortSpec>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            test_fraction: 0.2,
            segments: DEFAULT_SEGMENTS,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            cohorts: vec![CohortSpec {
                name: "engaged".into(),
                predicate: "click_count > 10 AND time_on_site > 60".into(),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServingSection {
    pub host: String,
    pub port: u16,
    pub ttl_seconds: i64,
    pub max_events_per_user: usize,
    /// Empty keeps every type.
    pub allowed_types: Vec<EventType>,
    pub log_rotate_bytes: u64,
}

impl Default for ServingSection {
    fn default() -> Self {
        let store = StoreConfig::default();
        ServingSection {
            host: "127.0.0.1".into(),
            port: 8080,
            ttl_seconds: store.ttl_seconds,
            max_events_per_user: store.max_events_per_user,
            allowed_types: vec![EventType::Page, EventType::Click, EventType::Scroll],
            log_rotate_bytes: crate::serving::log::DEFAULT_ROTATE_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifecycleSection {
    pub family_id: String,
    pub window_days: f64,
    pub min_examples: usize,
    pub auc_tolerance: f64,
    pub verification_sample_size: usize,
    pub schedule_period_days: f64,
    /// Seconds after a prediction within which a positive counts as its outcome.
    pub analysis_horizon_seconds: f64,
}

impl Default for LifecycleSection {
    fn default() -> Self {
        LifecycleSection {
            family_id: "shop".into(),
            window_days: 30.0,
            min_examples: 500,
            auc_tolerance: 0.01,
            verification_sample_size: 1000,
            schedule_period_days: 7.0,
            analysis_horizon_seconds: 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: PathsSection,
    pub sessions: SessionsSection,
    pub examples: ExamplesSection,
    pub encoding: EncodingSection,
    pub model: ModelConfig,
    pub search: SearchConfig,
    pub calibration: CalibrationSection,
    pub evaluation: EvaluationSection,
    pub serving: ServingSection,
    pub lifecycle: LifecycleSection,
    pub synth: SiteModel,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_TOML).expect("shipped config is valid")
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.events,
            &mut self.paths.models,
            &mut self.paths.prediction_log,
            &mut self.paths.out,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Applies a `--seed` override to every seeded stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.model.seed = seed;
        self.calibration.scaling.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.examples.max_len == 0 {
            return bad("examples.max_len must be positive".into());
        }
        if self.examples.filtered_types.contains(&EventType::Blank) {
            return bad("blank events cannot be filtered".into());
        }
        if !(0.0..1.0).contains(&self.evaluation.test_fraction) {
            return bad(format!("evaluation.test_fraction {} not in [0, 1)", self.evaluation.test_fraction));
        }
        let l = &self.lifecycle;
        if !(7.0..=60.0).contains(&l.window_days) {
            return bad(format!("lifecycle.window_days {} not in [7, 60]", l.window_days));
        }
        if !(l.auc_tolerance >= 0.0) {
            return bad("lifecycle.auc_tolerance must be >= 0".into());
        }
        if l.family_id.is_empty() || l.family_id.contains(['/', '\\', '.']) {
            return bad(format!("lifecycle.family_id {:?} is not a plain name", l.family_id));
        }
        for c in &self.evaluation.cohorts {
            Predicate::parse(&c.predicate).map_err(|e| ConfigError::Invalid(format!("cohort {}: {e}", c.name)))?;
        }
        self.encoder().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn encoder(&self) -> Result<EncoderConfig, crate::encoding::EncodingError> {
        let d = &self.encoding.dwell;
        let dwell = BucketSpec::combined(d.linear_step, d.linear_cutoff, d.nonlinear_cutoff, d.total)?;
        let metadata = EncoderConfig::default_for(self.examples.max_len).metadata;
        EncoderConfig::new(
            self.encoding.hash_dim,
            self.encoding.salt.clone(),
            EventType::OBSERVABLE.to_vec(),
            dwell,
            metadata,
        )
    }

    pub fn training_setup(&self) -> TrainingSetup {
        let mut model = self.model.clone();
        model.seq_len = self.examples.max_len;
        TrainingSetup::new(model, self.encoder().expect("validated encoder"), self.examples.filtered_types.clone())
    }

    pub fn sessionize_config(&self) -> SessionizeConfig {
        SessionizeConfig {
            max_session_len: self.sessions.max_session_len,
            ..Default::default()
        }
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            ttl_seconds: self.serving.ttl_seconds,
            max_events_per_user: self.serving.max_events_per_user,
            allowed_types: self.serving.allowed_types.clone(),
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            ece_bins: self.calibration.ece_bins,
            min_positives: self.calibration.min_positives,
            segments: self.evaluation.segments,
            histogram_bins: self.evaluation.histogram_bins,
            cohorts: self
                .evaluation
                .cohorts
                .iter()
                .map(|c| (c.name.clone(), Predicate::parse(&c.predicate).expect("validated predicate")))
                .collect(),
        }
    }
}
