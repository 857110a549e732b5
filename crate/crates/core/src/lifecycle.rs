//! Periodic retraining with validation, archiving, verification and deploy.
//!
//! Archive layout under the root directory:
//!
//! ```text
//! {family}/ACTIVE                       active version id, one line
//! {family}/v0001/model.bin              frozen model bytes
//! {family}/v0001/stats.json             VersionStats
//! {family}/v0001/verification.ndjson    one VerificationRecord per line
//! ```
//!
//! Version directories are written under a temporary name and renamed into
//! place, and `ACTIVE` is replaced by rename, so readers never observe a
//! partial version or pointer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_curve, ece, CalibrationCurve, DEFAULT_ECE_BINS, DEFAULT_MIN_POSITIVES};
use crate::config::{Config, LifecycleSection};
use crate::evaluation::{auc, EvalError};
use crate::examples::Example;
use crate::model::{Dataset, GridPoint, PointResult, TrainedModel, TrainingStats};
use crate::pipeline::{build_examples, count_positives, train_model, window, PipelineError};
use crate::serving::frozen::{deserialize_model, serialize_model};
use crate::serving::log::PredictionLogRecord;
use crate::serving::registry::ModelRegistry;
use crate::serving::{predict_events, ServingError};
use crate::sessions::{Event, EventRecord, EventType};

pub const ACTIVE_FILE: &str = "ACTIVE";
pub const MODEL_FILE: &str = "model.bin";
pub const STATS_FILE: &str = "stats.json";
pub const VERIFICATION_FILE: &str = "verification.ndjson";

#[derive(Debug, thiserror::Error)]
pub enum LifecycleError {
    #[error("archive i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive format: {0}")]
    Format(String),
    #[error(transparent)]
    Serving(#[from] ServingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("a retrain cycle for {0} is already running")]
    Busy(String),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error(transparent)]
    Metric(#[from] EvalError),
}

impl LifecycleError {
    pub fn kind(&self) -> &'static str {
        match self {
            LifecycleError::Io(_) | LifecycleError::Format(_) => "archive",
            LifecycleError::Serving(_) => "serving",
            LifecycleError::Pipeline(e) => e.kind(),
            LifecycleError::NotFound(_) => "not_found",
            LifecycleError::Busy(_) => "busy",
            LifecycleError::Analysis(_) => "analysis",
            LifecycleError::Metric(_) => "metric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainPolicy {
    pub window_days: f64,
    pub min_examples: usize,
    pub auc_tolerance: f64,
    pub verification_sample_size: usize,
    pub schedule_period_days: f64,
    pub sample_seed: u64,
}

impl Default for RetrainPolicy {
    fn default() -> Self {
        RetrainPolicy::from(&LifecycleSection::default())
    }
}

impl From<&LifecycleSection> for RetrainPolicy {
    fn from(s: &LifecycleSection) -> Self {
        RetrainPolicy {
            window_days: s.window_days,
            min_examples: s.min_examples,
            auc_tolerance: s.auc_tolerance,
            verification_sample_size: s.verification_sample_size,
            schedule_period_days: s.schedule_period_days,
            sample_seed: 0,
        }
    }
}

impl RetrainPolicy {
    pub fn validate(&self) -> Result<(), LifecycleError> {
        if !(7.0..=60.0).contains(&self.window_days) {
            return Err(LifecycleError::Format(format!("window_days {} not in [7, 60]", self.window_days)));
        }
        if !(self.auc_tolerance >= 0.0) {
            return Err(LifecycleError::Format("auc_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// One saved example with the value the training code computed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub anonymous_id: String,
    pub cut_timestamp: i64,
    pub label: u8,
    /// The instance's real events, oldest first.
    pub events: Vec<EventRecord>,
    pub value: f64,
}

impl VerificationRecord {
    pub fn events(&self) -> Result<Vec<Event>, LifecycleError> {
        self.events
            .iter()
            .cloned()
            .map(|r| Event::try_from(r).map_err(|e| LifecycleError::Format(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionStats {
    pub family_id: String,
    pub version_id: String,
    pub val_auc: f64,
    pub calibrated: bool,
    pub n_examples: usize,
    pub n_positives: usize,
    pub window_start_ms: i64,
    pub window_end_ms: i64,
    pub selected: Option<GridPoint>,
    pub grid: Vec<PointResult>,
    pub training: TrainingStats,
}

/// Filesystem archive of frozen versions per family.
#[derive(Debug, Clone)]
pub struct ModelArchive {
    root: PathBuf,
}

fn is_version_name(s: &str) -> bool {
    s.len() > 1 && s.starts_with('v') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

fn check_name(kind: &str, s: &str) -> Result<(), LifecycleError> {
    if s.is_empty() || s.contains(['/', '\\']) || s.starts_with('.') {
        return Err(LifecycleError::Format(format!("invalid {kind} {s:?}")));
    }
    Ok(())
}

impl ModelArchive {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, LifecycleError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ModelArchive { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn version_dir(&self, family: &str, version: &str) -> PathBuf {
        self.root.join(family).join(version)
    }

    pub fn families(&self) -> Result<Vec<String>, LifecycleError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                if let Some(name) = entry.file_name().to_str().filter(|n| !n.starts_with('.')) {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Version ids in ascending order.
    pub fn versions(&self, family: &str) -> Result<Vec<String>, LifecycleError> {
        check_name("family", family)?;
        let dir = self.root.join(family);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if let Some(name) = entry.file_name().to_str() {
                if is_version_name(name) && entry.path().join(MODEL_FILE).exists() {
                    out.push(name.to_string());
                }
            }
        }
        out.sort_by_key(|v| v[1..].parse::<u64>().unwrap_or(u64::MAX));
        Ok(out)
    }

    pub fn next_version_id(&self, family: &str) -> Result<String, LifecycleError> {
        let last = self
            .versions(family)?
            .last()
            .and_then(|v| v[1..].parse::<u64>().ok())
            .unwrap_or(0);
        Ok(format!("v{:04}", last + 1))
    }

    /// Writes a new version; existing versions are never overwritten.
    pub fn write_version(
        &self,
        model: &TrainedModel,
        stats: &VersionStats,
        verification: &[VerificationRecord],
    ) -> Result<PathBuf, LifecycleError> {
        check_name("family", &model.family_id)?;
        if !is_version_name(&model.version_id) {
            return Err(LifecycleError::Format(format!("invalid version id {:?}", model.version_id)));
        }
        let dest = self.version_dir(&model.family_id, &model.version_id);
        if dest.exists() {
            return Err(LifecycleError::Format(format!("version {} already archived", model.version_id)));
        }
        let family_dir = self.root.join(&model.family_id);
        fs::create_dir_all(&family_dir)?;
        let tmp = family_dir.join(format!(".tmp-{}", model.version_id));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp)?;
        fs::write(tmp.join(MODEL_FILE), serialize_model(model)?)?;
        let stats_json = serde_json::to_vec_pretty(stats).map_err(|e| LifecycleError::Format(e.to_string()))?;
        fs::write(tmp.join(STATS_FILE), stats_json)?;
        let mut w = BufWriter::new(fs::File::create(tmp.join(VERIFICATION_FILE))?);
        for r in verification {
            serde_json::to_writer(&mut w, r).map_err(|e| LifecycleError::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        drop(w);
        fs::rename(&tmp, &dest)?;
        Ok(dest)
    }

    fn existing(&self, family: &str, version: &str) -> Result<PathBuf, LifecycleError> {
        check_name("family", family)?;
        let dir = self.version_dir(family, version);
        if !is_version_name(version) || !dir.join(MODEL_FILE).exists() {
            return Err(LifecycleError::NotFound(format!("version {version} of {family}")));
        }
        Ok(dir)
    }

    pub fn model_bytes(&self, family: &str, version: &str) -> Result<Vec<u8>, LifecycleError> {
        Ok(fs::read(self.existing(family, version)?.join(MODEL_FILE))?)
    }

    pub fn load_model(&self, family: &str, version: &str) -> Result<TrainedModel, LifecycleError> {
        Ok(deserialize_model(&self.model_bytes(family, version)?)?)
    }

    pub fn stats(&self, family: &str, version: &str) -> Result<VersionStats, LifecycleError> {
        let bytes = fs::read(self.existing(family, version)?.join(STATS_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| LifecycleError::Format(format!("{STATS_FILE}: {e}")))
    }

    pub fn verification(&self, family: &str, version: &str) -> Result<Vec<VerificationRecord>, LifecycleError> {
        let f = fs::File::open(self.existing(family, version)?.join(VERIFICATION_FILE))?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line).map_err(|e| LifecycleError::Format(format!("{VERIFICATION_FILE}: {e}")))?);
            }
        }
        Ok(out)
    }

    pub fn active(&self, family: &str) -> Result<Option<String>, LifecycleError> {
        check_name("family", family)?;
        let p = self.root.join(family).join(ACTIVE_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let v = fs::read_to_string(p)?.trim().to_string();
        Ok(Some(v).filter(|v| !v.is_empty()))
    }

    pub fn set_active(&self, family: &str, version: &str) -> Result<(), LifecycleError> {
        self.existing(family, version)?;
        let dir = self.root.join(family);
        let tmp = dir.join(".ACTIVE.tmp");
        fs::write(&tmp, format!("{version}\n"))?;
        fs::rename(tmp, dir.join(ACTIVE_FILE))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Rejection {
    Validation {
        candidate_auc: f64,
        previous_auc: f64,
        tolerance: f64,
    },
    Verification {
        /// Position in the saved verification set.
        example_index: usize,
        anonymous_id: String,
        expected: f64,
        /// Serving value, or `None` when serving failed outright.
        actual: Option<f64>,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RetrainOutcome {
    Deployed {
        version_id: String,
        val_auc: f64,
        previous: Option<String>,
    },
    Rejected {
        /// Archived candidate id; `None` when rejected before archiving.
        version_id: Option<String>,
        reason: Rejection,
    },
    Failed {
        reason: String,
        detail: String,
    },
}

impl RetrainOutcome {
    pub fn is_deployed(&self) -> bool {
        matches!(self, RetrainOutcome::Deployed { .. })
    }
}

pub type ExamplesHook = Box<dyn Fn(&mut Vec<Example>) + Send + Sync>;
pub type BytesHook = Box<dyn Fn(&mut Vec<u8>) + Send + Sync>;
pub type ModelHook = Box<dyn Fn(&mut TrainedModel) + Send + Sync>;

/// Fault-injection points for tests and drills.
#[derive(Default)]
pub struct CycleHooks {
    /// Alters the candidate's training examples.
    pub examples: Option<ExamplesHook>,
    /// Alters the archived bytes as read back by verification.
    pub frozen_bytes: Option<BytesHook>,
    /// Alters the decoded model used by verification.
    pub serving_model: Option<ModelHook>,
}

/// Replays saved examples through the serving path; returns the first
/// mismatch.
pub fn verify(model: &TrainedModel, records: &[VerificationRecord]) -> Result<(), Rejection> {
    for (i, r) in records.iter().enumerate() {
        let mismatch = |actual: Option<f64>, detail: String| Rejection::Verification {
            example_index: i,
            anonymous_id: r.anonymous_id.clone(),
            expected: r.value,
            actual,
            detail,
        };
        let events = r.events().map_err(|e| mismatch(None, e.to_string()))?;
        match predict_events(model, &events) {
            Ok(p) if p.value.to_bits() == r.value.to_bits() => {}
            Ok(p) => return Err(mismatch(Some(p.value), "value differs".into())),
            Err(e) => return Err(mismatch(None, e.to_string())),
        }
    }
    Ok(())
}

/// Seeded sample of `examples` with values computed by the training code
/// from `dataset`, whose entries must align with `examples`.
pub fn verification_records(
    model: &TrainedModel,
    examples: &[Example],
    dataset: &Dataset,
    n: usize,
    seed: u64,
) -> Result<Vec<VerificationRecord>, LifecycleError> {
    if dataset.examples.len() != examples.len() {
        return Err(LifecycleError::Format("dataset and examples differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, examples.len(), n.min(examples.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let ex = &examples[i];
            let value = model.predict_sparse(&dataset.examples[i].input).map_err(PipelineError::from)?.value;
            Ok(VerificationRecord {
                anonymous_id: ex.anonymous_id.clone(),
                cut_timestamp: ex.cut_timestamp,
                label: ex.label,
                events: ex.instance.real_events().iter().map(Event::to_record).collect(),
                value,
            })
        })
        .collect()
}

/// Runs retrain cycles against an archive; optionally deploys into a live
/// registry.
pub struct Lifecycle {
    pub archive: ModelArchive,
    pub config: Config,
    registry: Option<Arc<ModelRegistry>>,
    running: Mutex<HashSet<String>>,
}

struct FamilyGuard<'a> {
    running: &'a Mutex<HashSet<String>>,
    family: String,
}

impl Drop for FamilyGuard<'_> {
    fn drop(&mut self) {
        self.running.lock().unwrap_or_else(|p| p.into_inner()).remove(&self.family);
    }
}

impl Lifecycle {
    pub fn new(archive: ModelArchive, config: Config) -> Self {
        Lifecycle {
            archive,
            config,
            registry: None,
            running: Mutex::new(HashSet::new()),
        }
    }

    pub fn with_registry(mut self, registry: Arc<ModelRegistry>) -> Self {
        self.registry = Some(registry);
        self
    }

    fn guard(&self, family: &str) -> Result<FamilyGuard<'_>, LifecycleError> {
        let mut running = self.running.lock().unwrap_or_else(|p| p.into_inner());
        if !running.insert(family.to_string()) {
            return Err(LifecycleError::Busy(family.to_string()));
        }
        Ok(FamilyGuard {
            running: &self.running,
            family: family.to_string(),
        })
    }

    /// Loads the archive's active version of every family into `registry`.
    pub fn load_active_into(&self, registry: &ModelRegistry) -> Result<Vec<String>, LifecycleError> {
        let mut loaded = Vec::new();
        for family in self.archive.families()? {
            if let Some(v) = self.archive.active(&family)? {
                registry.load_model(&self.archive.model_bytes(&family, &v)?)?;
                loaded.push(format!("{family}/{v}"));
            }
        }
        Ok(loaded)
    }

    /// One full cycle over `events`, windowed to the `policy.window_days`
    /// before `now_ms`.
    pub fn retrain_cycle(
        &self,
        family: &str,
        policy: &RetrainPolicy,
        events: &[Event],
        now_ms: i64,
        hooks: &CycleHooks,
    ) -> Result<RetrainOutcome, LifecycleError> {
        policy.validate()?;
        let recent = window(events, now_ms, policy.window_days);
        let (examples, _) = build_examples(&recent, &self.config)?;
        let span = (
            recent.first().map(|e| e.timestamp).unwrap_or(now_ms),
            recent.last().map(|e| e.timestamp).unwrap_or(now_ms),
        );
        self.cycle_on_examples(family, policy, examples, span, hooks, true)
    }

    /// Trains on `examples` and runs the remaining steps. With `gate` off the
    /// comparison against the active version is skipped.
    pub fn cycle_on_examples(
        &self,
        family: &str,
        policy: &RetrainPolicy,
        mut examples: Vec<Example>,
        span: (i64, i64),
        hooks: &CycleHooks,
        gate: bool,
    ) -> Result<RetrainOutcome, LifecycleError> {
        check_name("family", family)?;
        let _guard = self.guard(family)?;
        if let Some(h) = &hooks.examples {
            h(&mut examples);
        }
        let positives = count_positives(&examples);
        if examples.len() < policy.min_examples.max(1) || positives == 0 || positives == examples.len() {
            return Ok(RetrainOutcome::Failed {
                reason: "insufficient_data".into(),
                detail: format!("{} examples with {positives} positives", examples.len()),
            });
        }
        let version = self.archive.next_version_id(family)?;
        let outcome = match train_model(&examples, &self.config, family, &version) {
            Ok(o) => o,
            Err(e) => {
                return Ok(RetrainOutcome::Failed {
                    reason: e.kind().into(),
                    detail: e.to_string(),
                })
            }
        };
        let model = outcome.model;

        let previous = self.archive.active(family)?;
        if let (true, Some(prev)) = (gate, &previous) {
            let previous_auc = self.archive.stats(family, prev)?.val_auc;
            if model.stats.val_auc < previous_auc - policy.auc_tolerance {
                return Ok(RetrainOutcome::Rejected {
                    version_id: None,
                    reason: Rejection::Validation {
                        candidate_auc: model.stats.val_auc,
                        previous_auc,
                        tolerance: policy.auc_tolerance,
                    },
                });
            }
        }

        let records = verification_records(
            &model,
            &examples,
            &outcome.dataset,
            policy.verification_sample_size,
            policy.sample_seed,
        )?;
        let stats = VersionStats {
            family_id: family.to_string(),
            version_id: version,
            val_auc: model.stats.val_auc,
            calibrated: model.calibration.is_some(),
            n_examples: examples.len(),
            n_positives: positives,
            window_start_ms: span.0,
            window_end_ms: span.1,
            selected: Some(outcome.selected),
            grid: outcome.results,
            training: model.stats.clone(),
        };
        self.archive_verify_deploy(&model, &stats, &records, hooks)
    }

    /// Archives `model`, replays `records` through the serving path on the
    /// archived bytes and activates the version when every value matches.
    pub fn archive_verify_deploy(
        &self,
        model: &TrainedModel,
        stats: &VersionStats,
        records: &[VerificationRecord],
        hooks: &CycleHooks,
    ) -> Result<RetrainOutcome, LifecycleError> {
        let family = model.family_id.as_str();
        let version = model.version_id.clone();
        let previous = self.archive.active(family)?;
        self.archive.write_version(model, stats, records)?;

        let mut bytes = self.archive.model_bytes(family, &version)?;
        if let Some(h) = &hooks.frozen_bytes {
            h(&mut bytes);
        }
        let mut serving = match deserialize_model(&bytes) {
            Ok(m) => m,
            Err(e) => {
                return Ok(RetrainOutcome::Rejected {
                    version_id: Some(version),
                    reason: Rejection::Verification {
                        example_index: 0,
                        anonymous_id: String::new(),
                        expected: records.first().map(|r| r.value).unwrap_or(f64::NAN),
                        actual: None,
                        detail: format!("frozen model failed to load: {e}"),
                    },
                })
            }
        };
        if let Some(h) = &hooks.serving_model {
            h(&mut serving);
        }
        let saved = self.archive.verification(family, &version)?;
        if let Err(reason) = verify(&serving, &saved) {
            return Ok(RetrainOutcome::Rejected {
                version_id: Some(version),
                reason,
            });
        }

        if let Some(reg) = &self.registry {
            reg.load_model(&bytes)?;
        }
        self.archive.set_active(family, &version)?;
        Ok(RetrainOutcome::Deployed {
            version_id: version,
            val_auc: model.stats.val_auc,
            previous,
        })
    }

    /// Makes an archived version active again; nothing is deleted.
    pub fn rollback(&self, family: &str, version: &str) -> Result<(), LifecycleError> {
        let bytes = self.archive.model_bytes(family, version)?;
        if let Some(reg) = &self.registry {
            reg.load_model(&bytes)?;
        } else {
            deserialize_model(&bytes)?;
        }
        self.archive.set_active(family, version)
    }
}

/// One logged prediction joined with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedPrediction {
    pub anonymous_id: String,
    pub version_id: String,
    pub wall_timestamp: i64,
    pub value: f64,
    pub actual: u8,
    pub known_version: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostServingReport {
    pub horizon_seconds: f64,
    pub n: usize,
    pub positives: usize,
    pub auc: f64,
    pub ece: f64,
    pub calibration_curve: CalibrationCurve,
    /// Rows whose `(family, version)` is not in the archive; kept in the metrics.
    pub unknown_version_rows: usize,
    pub per_version: BTreeMap<String, usize>,
    pub rows: Vec<JoinedPrediction>,
}

/// Joins each logged prediction with whether a positive event for the same
/// user arrived within `(t, t + horizon]`. `known_versions` holds
/// `family/version` keys.
pub fn post_serving_analysis(
    log: &[PredictionLogRecord],
    events: &[Event],
    positive_type: EventType,
    horizon_seconds: f64,
    known_versions: &HashSet<String>,
) -> Result<PostServingReport, LifecycleError> {
    let mut positives: HashMap<&str, Vec<i64>> = HashMap::new();
    for e in events.iter().filter(|e| e.event_type == positive_type) {
        positives.entry(e.anonymous_id.as_str()).or_default().push(e.timestamp);
    }
    for v in positives.values_mut() {
        v.sort_unstable();
    }
    let horizon_ms = (horizon_seconds * 1000.0) as i64;
    let mut rows = Vec::with_capacity(log.len());
    for r in log {
        let t = r.wall_timestamp;
        let actual = positives
            .get(r.anonymous_id.as_str())
            .and_then(|ts| ts.get(ts.partition_point(|p| *p <= t)))
            .is_some_and(|p| *p <= t + horizon_ms);
        rows.push(JoinedPrediction {
            anonymous_id: r.anonymous_id.clone(),
            version_id: format!("{}/{}", r.family_id, r.version_id),
            wall_timestamp: t,
            value: r.value,
            actual: u8::from(actual),
            known_version: known_versions.contains(&format!("{}/{}", r.family_id, r.version_id)),
        });
    }
    if rows.is_empty() {
        return Err(LifecycleError::Analysis("no logged predictions to join".into()));
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.actual).collect();
    let auc_value = auc(&scores, &labels)?;
    let probs: Vec<[f64; 2]> = scores.iter().map(|s| [1.0 - s, *s]).collect();
    let ece_value = ece(&probs, &labels, DEFAULT_ECE_BINS).map_err(|e| LifecycleError::Analysis(e.to_string()))?;
    let curve = calibration_curve(&scores, &labels, DEFAULT_MIN_POSITIVES).map_err(|e| LifecycleError::Analysis(e.to_string()))?;
    let mut per_version = BTreeMap::new();
    for r in &rows {
        *per_version.entry(r.version_id.clone()).or_insert(0) += 1;
    }
    Ok(PostServingReport {
        horizon_seconds,
        n: rows.len(),
        positives: labels.iter().filter(|y| **y == 1).count(),
        auc: auc_value,
        ece: ece_value,
        calibration_curve: curve,
        unknown_version_rows: rows.iter().filter(|r| !r.known_version).count(),
        per_version,
        rows,
    })
}

/// `family/version` keys of every archived version.
pub fn archived_versions(archive: &ModelArchive) -> Result<HashSet<String>, LifecycleError> {
    let mut out = HashSet::new();
    for f in archive.families()? {
        for v in archive.versions(&f)? {
            out.insert(format!("{f}/{v}"));
        }
    }
    Ok(out)
}
