//! Acceptance suite: ten end-to-end criteria with fixed tolerances and time
//! budgets. Prints one PASS/FAIL line per criterion and exits nonzero if any
//! fail.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clickpred::calibration::ece;
use clickpred::config::Config;
use clickpred::encoding::{hash_buckets, linear_bucket_vector, BucketSpec};
use clickpred::evaluation::{auc, odds_segments};
use clickpred::examples::Example;
use clickpred::lifecycle::{verify, CycleHooks, Lifecycle, ModelArchive, Rejection, RetrainOutcome, RetrainPolicy};
use clickpred::model::network::{backward, forward_cached};
use clickpred::model::train::add_l2_gradient;
use clickpred::model::{weighted_cross_entropy, Mode, ModelConfig, ModelParams, SearchConfig, SparseInput, TrainedModel};
use clickpred::pipeline::{build_examples, count_positives, evaluate, split_users, train_model};
use clickpred::serving::frozen::{deserialize_model, serialize_model};
use clickpred::serving::predict_events;
use clickpred::serving::registry::ModelRegistry;
use clickpred::synth::{generate_sessions, Propensity, SiteModel, SyntheticData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 1

fn hash_sparsity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, k, trials) = (100usize, 10usize, 1000);
    let mut total = 0.0;
    for _ in 0..trials {
        let set: Vec<String> = (0..k).map(|_| format!("s{:016x}", rng.random::<u64>())).collect();
        total += hash_buckets(set.iter().map(String::as_str), n, "some_fixed_string").zero_fraction();
    }
    let mean = total / trials as f64;
    let oracle = (1.0 - 1.0 / n as f64).powi(2 * k as i32);
    ensure(
        (0.80..=0.84).contains(&mean),
        format!("mean zero fraction {mean:.4}, analytic {oracle:.4}, required [0.80, 0.84]"),
    )
}

// ---------------------------------------------------------------- 2

/// Straight transcription of the reference one-hot bucket routine.
fn reference_one_hot(value: f64, start: f64, end: f64, n_buckets: usize) -> Vec<f64> {
    let step = (end - start) / (n_buckets - 1) as f64;
    let edges: Vec<f64> = (0..n_buckets).map(|i| if i == n_buckets - 1 { end } else { start + step * i as f64 }).collect();
    let index = edges.iter().filter(|e| **e <= value).count() as i64;
    let slot = (index - 1).clamp(0, n_buckets as i64 - 1) as usize;
    let mut v = vec![0.0; n_buckets];
    v[slot] = 1.0;
    v
}

fn bucketing_oracle() -> Check {
    let v42 = linear_bucket_vector(42.0, 0.0, 100.0, 11).map_err(|e| e.to_string())?;
    if v42.len() != 11 || v42.0.iter().position(|v| *v == 1.0) != Some(4) || v42.0.iter().sum::<f64>() != 1.0 {
        return Err(format!("42 on [0,100] with 11 buckets gave {:?}", v42.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..10_000 {
        let start = rng.random_range(-1000.0..1000.0);
        let end = start + rng.random_range(0.01..2000.0);
        let n = rng.random_range(2..60);
        let value = match i % 10 {
            0 => start,
            1 => end,
            2 => start - rng.random_range(0.0..100.0),
            3 => end + rng.random_range(0.0..100.0),
            _ => rng.random_range(start..end),
        };
        let got = linear_bucket_vector(value, start, end, n).map_err(|e| e.to_string())?;
        if got.0 != reference_one_hot(value, start, end, n) {
            return Err(format!("mismatch at value {value} on [{start}, {end}] with {n} buckets"));
        }
    }

    let printed = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 9.1030, 16.5723, 30.1709, 54.9280, 100.0];
    let analytic: Vec<f64> = (0..=10).map(|i| if i <= 5 { i as f64 } else { 5.0 * 20f64.powf((i - 5) as f64 / 5.0) }).collect();
    let spec = BucketSpec::combined(1.0, 5.0, 100.0, 10).map_err(|e| e.to_string())?;
    let exact = spec.edges().len() == analytic.len() && spec.edges().iter().zip(&analytic).all(|(a, b)| (a - b).abs() <= 1e-9 * b.max(1.0));
    if !exact || spec.edges().iter().zip(&printed).any(|(a, b)| (a - b).abs() > 5e-4) {
        return Err(format!("worked example edges {:?}", spec.edges()));
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let step = rng.random_range(0.1..20.0);
        let k = rng.random_range(1..30);
        let linear_cutoff = step * k as f64;
        let cutoff = linear_cutoff * rng.random_range(1.5..500.0);
        let total = k + rng.random_range(1..40);
        let spec = BucketSpec::combined(step, linear_cutoff, cutoff, total).map_err(|e| e.to_string())?;
        let edges = spec.edges();
        let continuity = (edges[k] - linear_cutoff).abs() / linear_cutoff;
        let last = (edges[edges.len() - 1] - cutoff).abs() / cutoff;
        let p = (cutoff / linear_cutoff).powf(1.0 / (total - k) as f64);
        let first_geo = (edges[k + 1] - linear_cutoff * p).abs() / (linear_cutoff * p);
        worst = worst.max(continuity).max(last).max(first_geo);
        if edges.len() != total + 1 || worst > 1e-9 {
            return Err(format!("boundary violation for step {step} k {k} cutoff {cutoff} total {total}: {worst:e}"));
        }
    }
    Ok(format!("10000 reference matches, 42 -> index 4, worst boundary error {worst:.1e} over 100 draws"))
}

// ---------------------------------------------------------------- 3

fn random_input(config: &ModelConfig, rng: &mut ChaCha8Rng) -> SparseInput {
    let steps = (0..config.seq_len)
        .map(|t| {
            if t == 0 && rng.random_bool(0.3) {
                return Vec::new();
            }
            let mut step = Vec::new();
            for j in 0..config.event_dim as u32 {
                if rng.random_bool(0.5) {
                    step.push((j, rng.random_range(0.2..1.0)));
                }
            }
            step
        })
        .collect();
    let metadata = (0..config.metadata_dim).map(|_| rng.random_range(0.0..1.0)).collect();
    SparseInput { steps, metadata }
}

fn batch_loss(batch: &[(SparseInput, u8)], params: &ModelParams, config: &ModelConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: f64 = batch
        .iter()
        .map(|(x, y)| weighted_cross_entropy(forward_cached(x, params, config, Mode::Infer, &mut rng).unwrap().0.probs, *y, config.pos_weight))
        .sum();
    data / batch.len() as f64 + config.l2_lambda * params.weight_sq_norm()
}

fn gradient_check() -> Check {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut config = ModelConfig::tiny(rng.random_range(2..=5), rng.random_range(1..=5));
        config.gru_units = rng.random_range(2..=5);
        config.mlp_layer_sizes = vec![rng.random_range(2..=5), rng.random_range(2..=5)];
        config.l2_lambda = if seed % 2 == 0 { 0.0 } else { 0.01 };
        config.pos_weight = 1.0 + (seed % 4) as f64;
        let mut params = ModelParams::init(&config, &mut rng);
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let batch: Vec<(SparseInput, u8)> = (0..4).map(|i| (random_input(&config, &mut rng), (i % 2) as u8)).collect();

        let mut grads = ModelParams::zeros(&config);
        for (x, y) in &batch {
            let (_, cache) = forward_cached(x, &params, &config, Mode::Infer, &mut rng).map_err(|e| e.to_string())?;
            backward(x, &cache, *y, &params, &config, 1.0 / batch.len() as f64, &mut grads);
        }
        add_l2_gradient(&params, config.l2_lambda, &mut grads);
        let analytic = grads.to_flat();

        let flat = params.to_flat();
        let h = 1e-5;
        let mut probe = params.clone();
        for i in 0..flat.len() {
            let mut v = flat.clone();
            v[i] = flat[i] + h;
            probe.fill_from(&v);
            let plus = batch_loss(&batch, &probe, &config);
            v[i] = flat[i] - h;
            probe.fill_from(&v);
            let minus = batch_loss(&batch, &probe, &config);
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:.2e} over {checked} parameters, 20 seeds"))
}

// ---------------------------------------------------------------- 4

fn ece_checks() -> Check {
    let hand = ece(&[[0.1, 0.9], [0.2, 0.8], [0.7, 0.3]], &[1, 0, 0], 2).map_err(|e| e.to_string())?;
    let oracle = ((0.9 + 0.8 + 0.7) / 3.0 - 2.0 / 3.0_f64).abs();
    if (hand - oracle).abs() > 1e-12 {
        return Err(format!("3-sample ECE {hand} vs hand value {oracle}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p: f64 = rng.random();
        probs.push([1.0 - p, p]);
        labels.push(u8::from(rng.random::<f64>() < p));
    }
    let e = ece(&probs, &labels, 10).map_err(|e| e.to_string())?;
    ensure(e < 0.01, format!("calibrated predictor ECE {e:.5} (< 0.01), 3-sample case {hand:.12}"))
}

// ---------------------------------------------------------------- 5

fn recalibration() -> Check {
    let mut config = Config::default();
    config.synth = SiteModel {
        n_users: 12_000,
        seed: 5,
        propensity: Propensity {
            intercept: -9.0,
            ..Default::default()
        },
        ..Default::default()
    };
    config.search = SearchConfig::single(1e-4, 0.0, 16);
    config.model.epochs = 6;
    config.model.pos_weight = 5.0;
    let data = generate_sessions(&config.synth).map_err(|e| e.to_string())?;
    let (examples, _) = build_examples(&data.events, &config).map_err(|e| e.to_string())?;
    let rate = count_positives(&examples) as f64 / examples.len() as f64;
    if rate > 0.05 {
        return Err(format!("positive rate {rate:.4} exceeds 5%"));
    }
    let model = train_model(&examples, &config, "shop", "v0001").map_err(|e| e.to_string())?.model;
    let before = model.stats.holdout_ece_uncalibrated.ok_or("no uncalibrated held-out ECE")?;
    let after = model.stats.holdout_ece_calibrated.ok_or("no calibrated held-out ECE")?;
    let reduction = 1.0 - after / before;
    ensure(
        reduction >= 0.5,
        format!(
            "positive rate {rate:.4}, pos_weight 5, held-out ECE {before:.4} -> {after:.4} ({:.0}% reduction, need >= 50%)",
            100.0 * reduction
        ),
    )
}

// ---------------------------------------------------------------- 6, 7

struct EndToEnd {
    auc: f64,
    users: usize,
    true_rates: Vec<f64>,
    cohort_top: f64,
    all_top: f64,
    cohort_count: usize,
    elapsed: Duration,
}

fn end_to_end() -> Result<EndToEnd, String> {
    let t = Instant::now();
    let mut config = Config::default();
    config.search = SearchConfig::single(1e-4, 0.2, 32);
    config.model.epochs = 10;
    let data: SyntheticData = generate_sessions(&config.synth).map_err(|e| e.to_string())?;
    let (examples, _) = build_examples(&data.events, &config).map_err(|e| e.to_string())?;
    let truth: HashMap<&str, f64> = data.users.iter().map(|u| (u.anonymous_id.as_str(), u.propensity)).collect();
    let true_scores: Vec<f64> = examples.iter().map(|e| truth[e.anonymous_id.as_str()]).collect();
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let segments = odds_segments(&true_scores, &labels, 5).map_err(|e| e.to_string())?;

    let (train, test) = split_users(examples, config.evaluation.test_fraction);
    let model = train_model(&train, &config, "shop", "v0001").map_err(|e| e.to_string())?.model;
    let report = evaluate(&model, &test, &config).map_err(|e| e.to_string())?;
    let engaged = report.cohort_reports.get("engaged").ok_or("no engaged cohort")?;
    Ok(EndToEnd {
        auc: report.auc,
        users: data.users.len(),
        true_rates: segments.iter().map(|s| s.positive_rate).collect(),
        cohort_top: engaged.top_decile_positive_rate,
        all_top: report.overall.top_decile_positive_rate,
        cohort_count: engaged.count,
        elapsed: t.elapsed(),
    })
}

fn learning(e2e: &Result<EndToEnd, String>) -> Check {
    let r = e2e.as_ref().map_err(Clone::clone)?;
    let monotone = r.true_rates.windows(2).all(|w| w[0] >= w[1]);
    let rates: Vec<String> = r.true_rates.iter().map(|v| format!("{v:.4}")).collect();
    ensure(
        r.users >= 20_000 && r.auc > 0.8 && monotone,
        format!("{} users, held-out AUC {:.4} (> 0.8), true-probability segment rates [{}]", r.users, r.auc, rates.join(", ")),
    )
}

fn cohort_direction(e2e: &Result<EndToEnd, String>) -> Check {
    let r = e2e.as_ref().map_err(Clone::clone)?;
    ensure(
        r.cohort_top > r.all_top,
        format!("engaged cohort ({} users) top decile {:.3} vs all users {:.3}", r.cohort_count, r.cohort_top, r.all_top),
    )
}

// ---------------------------------------------------------------- 8, 9

fn small_config(n_users: usize, seed: u64) -> Config {
    let mut c = Config::default();
    c.synth = SiteModel {
        n_users,
        seed,
        ..Default::default()
    };
    c.search = SearchConfig::single(1e-4, 0.0, 16);
    c.model.epochs = 4;
    c.lifecycle.min_examples = 200;
    c
}

fn flip(v: f64, bit: u32) -> f64 {
    f64::from_bits(v.to_bits() ^ (1u64 << bit))
}

fn parity() -> Check {
    let config = small_config(2500, 8);
    let data = generate_sessions(&config.synth).map_err(|e| e.to_string())?;
    let now = data.events.last().map(|e| e.timestamp).unwrap_or(0);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let lc = Lifecycle::new(ModelArchive::open(dir.path()).map_err(|e| e.to_string())?, config.clone());
    let policy = RetrainPolicy::from(&config.lifecycle);
    let out = lc.retrain_cycle("shop", &policy, &data.events, now, &CycleHooks::default()).map_err(|e| e.to_string())?;
    let RetrainOutcome::Deployed { version_id, .. } = out else {
        return Err(format!("clean cycle not deployed: {out:?}"));
    };
    let records = lc.archive.verification("shop", &version_id).map_err(|e| e.to_string())?;
    let model = lc.archive.load_model("shop", &version_id).map_err(|e| e.to_string())?;
    if records.len() != 1000 {
        return Err(format!("{} verification records", records.len()));
    }
    verify(&model, &records).map_err(|r| format!("replay mismatch: {r:?}"))?;

    let rejected = |m: &TrainedModel| matches!(verify(m, &records), Err(Rejection::Verification { .. }));
    let mut salted = model.clone();
    salted.encoder.salt.push('x');
    if !rejected(&salted) {
        return Err("encoder salt change not rejected".into());
    }

    let changes_output = |m: &TrainedModel| {
        records.iter().any(|r| {
            let events = r.events().expect("archived events parse");
            predict_events(m, &events).map_or(true, |p| p.value.to_bits() != r.value.to_bits())
        })
    };
    let mut flips = 0;
    let (mut lsb_visible, mut lsb_total) = (0, 0);
    let lsb_targets = model.params.output.bias.len() + model.params.candidate.bias.len();
    for k in 0..lsb_targets {
        let mut m = model.clone();
        let slot = match k.checked_sub(model.params.output.bias.len()) {
            None => &mut m.params.output.bias[k],
            Some(j) => &mut m.params.candidate.bias[j],
        };
        *slot = flip(*slot, 0);
        let visible = changes_output(&m);
        if rejected(&m) != visible {
            return Err(format!("lowest-bit flip {k}: output changed {visible}, verification disagreed"));
        }
        lsb_visible += usize::from(visible);
        lsb_total += 1;
    }
    if lsb_visible == 0 {
        return Err("no lowest-bit flip reached any replayed output".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let units = model.config.gru_units;
    let merged = model.params.output.weight.data.len() / 2;
    for _ in 0..40 {
        let mut m = model.clone();
        let bit = rng.random_range(32..64);
        let (name, slot) = match rng.random_range(0..3) {
            0 => ("output weight", &mut m.params.output.weight.data[rng.random_range(0..2) * merged + rng.random_range(0..units)]),
            1 => ("update recurrent", &mut m.params.update.recurrent.data[rng.random_range(0..units * units)]),
            _ => ("candidate bias", &mut m.params.candidate.bias[rng.random_range(0..model.params.candidate.bias.len())]),
        };
        *slot = flip(*slot, bit);
        if !rejected(&m) {
            return Err(format!("bit {bit} flip of a {name} parameter not rejected"));
        }
        flips += 1;
    }

    let bytes = serialize_model(&model).map_err(|e| e.to_string())?;
    let mut byte_flips = 0;
    for i in (0..bytes.len()).step_by(97) {
        let mut b = bytes.clone();
        b[i] ^= 1 << (i % 8);
        if deserialize_model(&b).is_ok() {
            return Err(format!("byte {i} flip loaded"));
        }
        byte_flips += 1;
    }
    Ok(format!(
        "1000 archived examples replay bit-exactly; salt change, {flips} high-bit parameter flips and {byte_flips} archive bit flips rejected; \
         {lsb_visible} of {lsb_total} lowest-bit flips changed an output and exactly those were rejected"
    ))
}

fn predictions(model: &TrainedModel, probes: &[Vec<clickpred::sessions::Event>]) -> Result<Vec<u64>, String> {
    probes.iter().map(|evs| predict_events(model, evs).map(|p| p.value.to_bits()).map_err(|e| e.to_string())).collect()
}

fn lifecycle_gates() -> Check {
    let config = small_config(3000, 9);
    let data = generate_sessions(&config.synth).map_err(|e| e.to_string())?;
    let now = data.events.last().map(|e| e.timestamp).unwrap_or(0);
    let earlier = now - 2 * 86_400_000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let registry = Arc::new(ModelRegistry::new());
    let lc = Lifecycle::new(ModelArchive::open(dir.path()).map_err(|e| e.to_string())?, config.clone()).with_registry(registry.clone());
    let policy = RetrainPolicy::from(&config.lifecycle);
    let cycle = |now_ms: i64, hooks: &CycleHooks| lc.retrain_cycle("shop", &policy, &data.events, now_ms, hooks).map_err(|e| e.to_string());

    let first = cycle(earlier, &CycleHooks::default())?;
    if !first.is_deployed() {
        return Err(format!("first cycle: {first:?}"));
    }
    let probes: Vec<Vec<clickpred::sessions::Event>> = lc
        .archive
        .verification("shop", "v0001")
        .map_err(|e| e.to_string())?
        .iter()
        .take(200)
        .map(|r| r.events())
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let v1 = predictions(&*registry.active("shop").ok_or("no active model")?, &probes)?;

    let second = cycle(now, &CycleHooks::default())?;
    let RetrainOutcome::Deployed { version_id, previous, .. } = &second else {
        return Err(format!("healthy retrain: {second:?}"));
    };
    let active_file = lc.archive.active("shop").map_err(|e| e.to_string())?;
    let served = registry.active("shop").ok_or("no active model")?;
    if version_id != "v0002" || previous.as_deref() != Some("v0001") || active_file.as_deref() != Some("v0002") || served.version_id != "v0002" {
        return Err(format!("healthy retrain left archive {active_file:?} and registry {}", served.version_id));
    }
    let leftovers: Vec<String> = std::fs::read_dir(dir.path().join("shop"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n != "ACTIVE" && !(n.starts_with('v') && n.len() == 5))
        .collect();
    if !leftovers.is_empty() {
        return Err(format!("partial writes left behind: {leftovers:?}"));
    }
    let v2 = predictions(&served, &probes)?;
    if v1 == v2 {
        return Err("second version predicts identically; rollback check would be vacuous".into());
    }

    let shuffle = CycleHooks {
        examples: Some(Box::new(|ex: &mut Vec<Example>| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut labels: Vec<u8> = ex.iter().map(|e| e.label).collect();
            rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
            ex.iter_mut().zip(labels).for_each(|(e, y)| e.label = y);
        })),
        ..Default::default()
    };
    let third = cycle(now, &shuffle)?;
    let RetrainOutcome::Rejected { reason: Rejection::Validation { candidate_auc, previous_auc, .. }, .. } = third else {
        return Err(format!("shuffled labels: {third:?}"));
    };
    if registry.active("shop").map(|m| m.version_id.clone()).as_deref() != Some("v0002") {
        return Err("rejected candidate changed the served model".into());
    }

    lc.rollback("shop", "v0001").map_err(|e| e.to_string())?;
    let restored = predictions(&*registry.active("shop").ok_or("no active model")?, &probes)?;
    let archived = lc.archive.active("shop").map_err(|e| e.to_string())?;
    ensure(
        restored == v1 && archived.as_deref() == Some("v0001"),
        format!(
            "healthy retrain deployed v0002 atomically; shuffled labels rejected at validation (AUC {candidate_auc:.3} vs {previous_auc:.3}); rollback restored {} v0001 predictions bit-exactly",
            probes.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut instances = 0;
    while instances < 200 {
        let n = rng.random_range(2..=500);
        let levels = if rng.random_bool(0.5) { rng.random_range(2..10) } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let pos = labels.iter().filter(|y| **y == 1).count();
        if pos == 0 || pos == n {
            continue;
        }
        let mut twice_wins = 0u64;
        for i in (0..n).filter(|i| labels[*i] == 1) {
            for j in (0..n).filter(|j| labels[*j] == 0) {
                twice_wins += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
        let brute = twice_wins as f64 / (2 * pos * (n - pos)) as f64;
        let fast = auc(&scores, &labels).map_err(|e| e.to_string())?;
        if fast.to_bits() != brute.to_bits() {
            return Err(format!("n {n}: rank AUC {fast} vs pair count {brute}"));
        }
        instances += 1;
    }
    Ok("200 random instances (n <= 500, with ties) equal pair counting exactly".into())
}

// ----------------------------------------------------------------

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    report(id, name, budget, t.elapsed(), result)
}

fn report(id: usize, name: &str, budget: Duration, elapsed: Duration, result: Check) -> bool {
    let (ok, detail) = match result {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over time budget")),
        Err(d) => (false, d),
    };
    println!(
        "{} criterion {id:>2} {name}: {detail} [{:.2}s / {}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        run(1, "hash-bucket sparsity", secs(1), hash_sparsity),
        run(2, "bucketing oracle", secs(1), bucketing_oracle),
        run(3, "gradient check", secs(30), gradient_check),
        run(4, "expected calibration error", secs(5), ece_checks),
        run(10, "AUC oracle", secs(10), auc_oracle),
        run(8, "training/serving parity", secs(60), parity),
        run(9, "lifecycle gates", secs(15 * 60), lifecycle_gates),
        run(5, "recalibration", secs(10 * 60), recalibration),
    ];
    let t = Instant::now();
    let e2e = catch_unwind(end_to_end).unwrap_or_else(|_| Err("end-to-end run panicked".into()));
    let elapsed = e2e.as_ref().map(|r| r.elapsed).unwrap_or_else(|_| t.elapsed());
    results.push(report(6, "end-to-end learning", secs(15 * 60), elapsed, learning(&e2e)));
    results.push(report(7, "cohort direction", secs(15 * 60), elapsed, cohort_direction(&e2e)));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
