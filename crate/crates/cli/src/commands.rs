use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use clickpred::calibration::{ece, matrix_scaling_fit};
use clickpred::config::{Config, ConfigError};
use clickpred::evaluation::{build_report, write_cohort_series, EvalError};
use clickpred::examples::Example;
use clickpred::lifecycle::{
    verification_records, CycleHooks, Lifecycle, LifecycleError, ModelArchive, RetrainOutcome, RetrainPolicy, VersionStats,
};
use clickpred::model::{Dataset, TrainedModel};
use clickpred::pipeline::{build_examples, load_events, score, split_users, PipelineError};
use clickpred::serving::log::PredictionLog;
use clickpred::serving::registry::ModelRegistry;
use clickpred::serving::store::EventStore;
use clickpred::serving::{FileArchiveSink, PredictionService, ServingError};
use clickpred::sessions::{write_archive, SessionError};
use clickpred::synth::generate_sessions;
use serde_json::{json, Value};

use crate::http::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "clickpred", version, about = "Clickstream purchase prediction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate site traffic into the event archive.
    Generate(CommonArgs),
    /// Train, archive, verify and activate a model on training users.
    Train(CommonArgs),
    /// Evaluate the active model on held-out users and write series files.
    Evaluate(CommonArgs),
    /// Refit matrix scaling for the active model and report ECE before and after.
    Calibrate(CommonArgs),
    /// Run the HTTP prediction service.
    Serve(ServeArgs),
    /// Run one retrain cycle over the archive window.
    Retrain(CommonArgs),
    /// Write cohort calibration series for the configured predicates.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Configuration file; the shipped defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory for reports and generated files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "INT")]
    pub port: Option<u16>,
}

/// A failed command: a stable kind plus a message.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub detail: Option<Value>,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
            detail: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({"error": self.kind, "message": self.message});
        if let Some(d) = &self.detail {
            v["detail"] = d.clone();
        }
        v
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new("config", e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<LifecycleError> for CliError {
    fn from(e: LifecycleError) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new("evaluation", e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        CliError::new("archive", e.to_string())
    }
}

impl From<ServingError> for CliError {
    fn from(e: ServingError) -> Self {
        CliError::new("serving", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

pub fn load_config(args: &CommonArgs) -> Result<Config, CliError> {
    let mut config = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::shipped(),
    };
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if let Some(out) = &args.out {
        config.paths.out = out.clone();
    }
    Ok(config)
}

/// Runs one command; the returned value is printed as the summary line.
pub fn run(command: Command) -> Result<Value, CliError> {
    match command {
        Command::Generate(a) => generate(&load_config(&a)?),
        Command::Train(a) => train(&load_config(&a)?),
        Command::Evaluate(a) => evaluate(&load_config(&a)?),
        Command::Calibrate(a) => calibrate(&load_config(&a)?),
        Command::Retrain(a) => retrain(&load_config(&a)?),
        Command::Report(a) => report(&load_config(&a)?),
        Command::Serve(a) => {
            let mut config = load_config(&a.common)?;
            if let Some(p) = a.port {
                config.serving.port = p;
            }
            serve(config)
        }
    }
}

fn ensure_parent(p: &Path) -> Result<(), CliError> {
    if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    Ok(())
}

pub fn generate(config: &Config) -> Result<Value, CliError> {
    let data = generate_sessions(&config.synth).map_err(|e| CliError::new("config", e.to_string()))?;
    ensure_parent(&config.paths.events)?;
    write_archive(&config.paths.events, &data.events)?;
    fs::create_dir_all(&config.paths.out)?;
    let truth = config.paths.out.join("synthetic_users.ndjson");
    let mut w = std::io::BufWriter::new(fs::File::create(&truth)?);
    for u in &data.users {
        serde_json::to_writer(&mut w, u).map_err(|e| CliError::new("io", e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(json!({
        "command": "generate",
        "events": data.events.len(),
        "users": data.users.len(),
        "bots": data.users.iter().filter(|u| u.is_bot).count(),
        "purchases": data.users.iter().filter(|u| u.purchased).count(),
        "archive": config.paths.events,
        "truth": truth,
    }))
}

/// `(train, test)` examples from the archive, split by user.
pub fn load_examples(config: &Config) -> Result<(Vec<Example>, Vec<Example>), CliError> {
    let events = load_events(&config.paths.events)?;
    let (examples, _) = build_examples(&events, config)?;
    Ok(split_users(examples, config.evaluation.test_fraction))
}

fn lifecycle(config: &Config) -> Result<Lifecycle, CliError> {
    Ok(Lifecycle::new(ModelArchive::open(&config.paths.models)?, config.clone()))
}

fn active_model(lc: &Lifecycle) -> Result<TrainedModel, CliError> {
    let family = &lc.config.lifecycle.family_id;
    let version = lc
        .archive
        .active(family)?
        .ok_or_else(|| CliError::new("not_found", format!("no active model for family {family}")))?;
    Ok(lc.archive.load_model(family, &version)?)
}

fn outcome_result(command: &str, outcome: RetrainOutcome) -> Result<Value, CliError> {
    let detail = serde_json::to_value(&outcome).unwrap_or(Value::Null);
    match outcome {
        RetrainOutcome::Deployed { .. } => Ok(json!({"command": command, "result": detail})),
        RetrainOutcome::Rejected { reason, .. } => {
            let step = match reason {
                clickpred::lifecycle::Rejection::Validation { .. } => "rejected_validation",
                clickpred::lifecycle::Rejection::Verification { .. } => "rejected_verification",
            };
            Err(CliError {
                kind: step.into(),
                message: format!("{command}: candidate rejected"),
                detail: Some(detail),
            })
        }
        RetrainOutcome::Failed { reason, detail: text } => Err(CliError {
            kind: reason,
            message: text,
            detail: Some(detail),
        }),
    }
}

pub fn train(config: &Config) -> Result<Value, CliError> {
    let (train, _) = load_examples(config)?;
    let lc = lifecycle(config)?;
    let span = (
        train.iter().map(|e| e.cut_timestamp).min().unwrap_or(0),
        train.iter().map(|e| e.cut_timestamp).max().unwrap_or(0),
    );
    let policy = RetrainPolicy::from(&config.lifecycle);
    let family = config.lifecycle.family_id.clone();
    let outcome = lc.cycle_on_examples(&family, &policy, train, span, &CycleHooks::default(), false)?;
    outcome_result("train", outcome)
}

pub fn evaluate(config: &Config) -> Result<Value, CliError> {
    let lc = lifecycle(config)?;
    let model = active_model(&lc)?;
    let (_, test) = load_examples(config)?;
    let report = clickpred::pipeline::evaluate(&model, &test, config)?;
    let files = report.write_to(&config.paths.out)?;
    Ok(json!({
        "command": "evaluate",
        "version": model.version_id,
        "n": report.n,
        "auc": report.auc,
        "ece": report.ece,
        "calibrated": report.calibrated,
        "files": files,
    }))
}

pub fn calibrate(config: &Config) -> Result<Value, CliError> {
    let lc = lifecycle(config)?;
    let mut model = active_model(&lc)?;
    let (_, test) = load_examples(config)?;
    if test.is_empty() {
        return Err(CliError::new("insufficient_data", "no held-out examples to calibrate on"));
    }
    let dataset = Dataset::build(&test, &model.encoder, 0).map_err(PipelineError::from)?;
    let labels: Vec<u8> = test.iter().map(|e| e.label).collect();
    let mut logits = Vec::with_capacity(test.len());
    for p in &dataset.examples {
        logits.push(model.predict_sparse(&p.input).map_err(PipelineError::from)?.logits);
    }
    let fit = matrix_scaling_fit(&logits, &labels, &config.calibration.scaling)
        .map_err(|e| CliError::new("calibration", e.to_string()))?;
    let hold_labels: Vec<u8> = fit.holdout_indices.iter().map(|i| labels[*i]).collect();
    let current = |i: &usize| match &model.calibration {
        Some(c) => c.apply(logits[*i]),
        None => clickpred::model::softmax2(logits[*i]),
    };
    let before: Vec<[f64; 2]> = fit.holdout_indices.iter().map(current).collect();
    let after: Vec<[f64; 2]> = fit.holdout_indices.iter().map(|i| fit.scaling.apply(logits[*i])).collect();
    let bins = config.calibration.ece_bins;
    let metric = |e: clickpred::calibration::CalibrationError| CliError::new("calibration", e.to_string());
    let ece_before = ece(&before, &hold_labels, bins).map_err(metric)?;
    let ece_after = ece(&after, &hold_labels, bins).map_err(metric)?;

    let family = model.family_id.clone();
    let previous = model.version_id.clone();
    let mut stats = lc.archive.stats(&family, &previous)?;
    model.version_id = lc.archive.next_version_id(&family)?;
    model.calibration = Some(fit.scaling);
    model.stats.holdout_ece_uncalibrated = Some(ece_before);
    model.stats.holdout_ece_calibrated = Some(ece_after);
    stats = VersionStats {
        version_id: model.version_id.clone(),
        calibrated: true,
        training: model.stats.clone(),
        ..stats
    };
    let policy = RetrainPolicy::from(&config.lifecycle);
    let records = verification_records(&model, &test, &dataset, policy.verification_sample_size, policy.sample_seed)?;
    let outcome = lc.archive_verify_deploy(&model, &stats, &records, &CycleHooks::default())?;
    let mut v = outcome_result("calibrate", outcome)?;
    v["eceBefore"] = json!(ece_before);
    v["eceAfter"] = json!(ece_after);
    v["holdout"] = json!(hold_labels.len());
    Ok(v)
}

pub fn retrain(config: &Config) -> Result<Value, CliError> {
    let events = load_events(&config.paths.events)?;
    let now = events.iter().map(|e| e.timestamp).max().unwrap_or(0);
    let lc = lifecycle(config)?;
    let policy = RetrainPolicy::from(&config.lifecycle);
    let outcome = lc.retrain_cycle(&config.lifecycle.family_id, &policy, &events, now, &CycleHooks::default())?;
    outcome_result("retrain", outcome)
}

pub fn report(config: &Config) -> Result<Value, CliError> {
    let lc = lifecycle(config)?;
    let model = active_model(&lc)?;
    let (_, test) = load_examples(config)?;
    if test.is_empty() {
        return Err(CliError::new("insufficient_data", "no held-out examples"));
    }
    let (scored, probs) = score(&model, &test)?;
    let r = build_report(&scored, &probs, model.calibration.is_some(), &config.report_options())?;
    let files = write_cohort_series(&config.paths.out, &r.overall, &r.cohort_reports)?;
    let path = config.paths.out.join("cohorts.json");
    let body = json!({"overall": r.overall, "cohorts": r.cohort_reports});
    fs::write(&path, serde_json::to_string_pretty(&body).map_err(|e| CliError::new("io", e.to_string()))?)?;
    let cohorts: Value = r
        .cohort_reports
        .iter()
        .map(|(k, c)| (k.clone(), json!({"count": c.count, "topDecilePositiveRate": c.top_decile_positive_rate})))
        .collect::<serde_json::Map<_, _>>()
        .into();
    Ok(json!({
        "command": "report",
        "version": model.version_id,
        "allUsersTopDecilePositiveRate": r.overall.top_decile_positive_rate,
        "cohorts": cohorts,
        "files": files.into_iter().chain([path]).collect::<Vec<_>>(),
    }))
}

/// Service state wired to the configured archive, store and log.
pub fn app_state(config: &Config) -> Result<AppState<clickpred::serving::store::SystemClock>, CliError> {
    let registry = Arc::new(ModelRegistry::new());
    let lc = lifecycle(config)?.with_registry(registry.clone());
    lc.load_active_into(&registry)?;
    ensure_parent(&config.paths.events)?;
    let service = PredictionService::new(
        EventStore::new(config.store_config()),
        registry,
        PredictionLog::open(&config.paths.prediction_log, config.serving.log_rotate_bytes)?,
        Box::new(FileArchiveSink::new(&config.paths.events)),
    );
    Ok(AppState {
        service,
        lifecycle: Some(lc),
    })
}

pub fn serve(config: Config) -> Result<Value, CliError> {
    let state = Arc::new(app_state(&config)?);
    let addr = format!("{}:{}", config.serving.host, config.serving.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        let local = listener.local_addr()?;
        println!("{}", json!({"command": "serve", "listening": local.to_string()}));
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(json!({"command": "serve", "stopped": true}))
}
