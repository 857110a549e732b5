use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::weighted_cross_entropy;
use super::network::{backward, forward_cached, forward_sparse, Mode, SparseInput};
use super::params::{ModelParams, TensorKind};
use super::{ModelConfig, ModelError, TrainedModel, TrainingSetup};
use crate::calibration::{ece, fit_matrix_scaling, ScalingOptions};
use crate::encoding::{encode_instance, EncoderConfig};
use crate::evaluation::auc;
use crate::examples::Example;

pub const VALIDATION_FRACTION: f64 = 0.2;

/// Index partition of a dataset. Validation is `val_fit ∪ val_holdout`;
/// `val_fit` is reserved for fitting recalibration, `val_holdout` for
/// reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val_fit: Vec<usize>,
    pub val_holdout: Vec<usize>,
}

impl Split {
    pub fn validation(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.val_fit.iter().chain(&self.val_holdout).copied().collect();
        v.sort_unstable();
        v
    }
}

/// 80/20 split stratified by label, validation further halved, all seeded.
pub fn stratified_split(labels: &[u8], seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val_fit: Vec::new(),
        val_holdout: Vec::new(),
    };
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let mut n_val = (n as f64 * VALIDATION_FRACTION).round() as usize;
        if n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        }
        let n_fit = n_val.div_ceil(2);
        split.val_fit.extend_from_slice(&idx[..n_fit]);
        split.val_holdout.extend_from_slice(&idx[n_fit..n_val]);
        split.train.extend_from_slice(&idx[n_val..]);
    }
    split.train.sort_unstable();
    split.val_fit.sort_unstable();
    split.val_holdout.sort_unstable();
    split
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: SparseInput,
    pub label: u8,
}

/// Encoded examples plus their split, shared by all grid points.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Prepared>,
    pub split: Split,
}

impl Dataset {
    pub fn build(examples: &[Example], encoder: &EncoderConfig, split_seed: u64) -> Result<Self, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::Training("no examples".into()));
        }
        let prepared = examples
            .iter()
            .map(|ex| {
                let encoded = encode_instance(&ex.instance, encoder)?;
                Ok(Prepared {
                    input: SparseInput::from_encoded(&encoded),
                    label: ex.label,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Dataset::from_prepared(prepared, split_seed))
    }

    pub fn from_prepared(examples: Vec<Prepared>, split_seed: u64) -> Self {
        let labels: Vec<u8> = examples.iter().map(|p| p.label).collect();
        Dataset {
            split: stratified_split(&labels, split_seed),
            examples,
        }
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|i| self.examples[*i].label).collect()
    }

    fn check(&self) -> Result<(), ModelError> {
        let has_both = |idx: &[usize]| {
            let pos = idx.iter().filter(|i| self.examples[**i].label == 1).count();
            pos > 0 && pos < idx.len()
        };
        if !has_both(&self.split.train) {
            return Err(ModelError::SingleClass);
        }
        if !has_both(&self.split.validation()) {
            return Err(ModelError::Training("validation split lacks one class".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub val_auc: f64,
    /// Expected calibration error of the uncalibrated model on validation.
    pub val_ece: Option<f64>,
    pub best_epoch: usize,
    pub loss_curve: Vec<f64>,
    pub val_auc_curve: Vec<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    /// Label counts of the training split.
    pub train_class_counts: [u64; 2],
    /// Label counts summed over every mini-batch drawn.
    pub batch_class_counts: [u64; 2],
    pub holdout_auc: Option<f64>,
    pub holdout_ece_uncalibrated: Option<f64>,
    pub holdout_ece_calibrated: Option<f64>,
    pub grid_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub stats: TrainingStats,
}

/// Adds the gradient of `lambda * ||W||^2` over weight tensors.
pub fn add_l2_gradient(params: &ModelParams, lambda: f64, grads: &mut ModelParams) {
    if lambda == 0.0 {
        return;
    }
    for ((kind, p), (_, g)) in params.tensors().into_iter().zip(grads.tensors_mut()) {
        if kind == TensorKind::Weight {
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi += 2.0 * lambda * pi;
            }
        }
    }
}

pub fn predict_indices(dataset: &Dataset, idx: &[usize], params: &ModelParams, config: &ModelConfig) -> Result<Vec<[f64; 2]>, ModelError> {
    idx.iter()
        .map(|i| forward_sparse(&dataset.examples[*i].input, params, config).map(|o| o.logits))
        .collect()
}

fn validation_ece(logits: &[[f64; 2]], labels: &[u8]) -> Option<f64> {
    let probs: Vec<[f64; 2]> = logits.iter().map(|z| super::network::softmax2(*z)).collect();
    ece(&probs, labels, crate::calibration::DEFAULT_ECE_BINS).ok()
}

/// Mini-batch Adam training on the dataset's training split; returns the
/// parameters of the epoch with the best validation AUC.
pub fn fit(dataset: &Dataset, config: &ModelConfig) -> Result<FitResult, ModelError> {
    config.validate()?;
    dataset.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config, &mut rng);
    let mut adam = AdamState::new(&params);
    let mut grads = ModelParams::zeros(config);
    let validation = dataset.split.validation();
    let val_labels = dataset.labels(&validation);

    let mut stats = TrainingStats {
        n_train: dataset.split.train.len(),
        n_validation: validation.len(),
        val_auc: f64::NEG_INFINITY,
        ..Default::default()
    };
    for i in &dataset.split.train {
        stats.train_class_counts[usize::from(dataset.examples[*i].label)] += 1;
    }
    let mut best = params.clone();
    let mut order = dataset.split.train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let ex = &dataset.examples[i];
                let (out, cache) = forward_cached(&ex.input, &params, config, Mode::Train, &mut rng)?;
                loss += weighted_cross_entropy(out.probs, ex.label, config.pos_weight);
                backward(&ex.input, &cache, ex.label, &params, config, scale, &mut grads);
                stats.batch_class_counts[usize::from(ex.label)] += 1;
            }
            loss = loss * scale + config.l2_lambda * params.weight_sq_norm();
            add_l2_gradient(&params, config.l2_lambda, &mut grads);
            adam.step(&mut params, &grads, &config.adam);
            if !params.all_finite() {
                return Err(ModelError::Numeric(format!("parameters diverged in epoch {epoch}")));
            }
            epoch_loss += loss;
            batches += 1;
        }
        stats.loss_curve.push(epoch_loss / batches.max(1) as f64);

        let logits = predict_indices(dataset, &validation, &params, config)?;
        let scores: Vec<f64> = logits.iter().map(|z| super::network::softmax2(*z)[1]).collect();
        let val_auc = auc(&scores, &val_labels).map_err(|e| ModelError::Training(e.to_string()))?;
        stats.val_auc_curve.push(val_auc);
        if val_auc > stats.val_auc {
            stats.val_auc = val_auc;
            stats.val_ece = validation_ece(&logits, &val_labels);
            stats.best_epoch = epoch;
            best = params.clone();
        }
    }
    if config.epochs == 0 {
        let logits = predict_indices(dataset, &validation, &params, config)?;
        let scores: Vec<f64> = logits.iter().map(|z| super::network::softmax2(*z)[1]).collect();
        stats.val_auc = auc(&scores, &val_labels).map_err(|e| ModelError::Training(e.to_string()))?;
        stats.val_ece = validation_ece(&logits, &val_labels);
    }
    Ok(FitResult { params: best, stats })
}

/// Encodes, splits (seeded by `setup.model.seed`) and trains one model.
pub fn train(examples: &[Example], setup: &TrainingSetup) -> Result<TrainedModel, ModelError> {
    let config = setup.model_config();
    let dataset = Dataset::build(examples, &setup.encoder, config.seed)?;
    let fitted = fit(&dataset, &config)?;
    Ok(TrainedModel::from_fit(setup, config, fitted))
}

/// Fits matrix scaling on `val_fit` and records held-out metrics.
pub fn calibrate(model: &mut TrainedModel, dataset: &Dataset, options: &ScalingOptions) -> Result<(), ModelError> {
    let fit_idx = &dataset.split.val_fit;
    let fit_logits = predict_indices(dataset, fit_idx, &model.params, &model.config)?;
    let scaling = fit_matrix_scaling(&fit_logits, &dataset.labels(fit_idx), options)
        .map_err(|e| ModelError::Training(e.to_string()))?;

    let holdout = &dataset.split.val_holdout;
    let hold_labels = dataset.labels(holdout);
    let hold_logits = predict_indices(dataset, holdout, &model.params, &model.config)?;
    if !hold_labels.is_empty() {
        let raw: Vec<[f64; 2]> = hold_logits.iter().map(|z| super::network::softmax2(*z)).collect();
        let cal: Vec<[f64; 2]> = hold_logits.iter().map(|z| scaling.apply(*z)).collect();
        model.stats.holdout_ece_uncalibrated = ece(&raw, &hold_labels, crate::calibration::DEFAULT_ECE_BINS).ok();
        model.stats.holdout_ece_calibrated = ece(&cal, &hold_labels, crate::calibration::DEFAULT_ECE_BINS).ok();
        let scores: Vec<f64> = cal.iter().map(|p| p[1]).collect();
        model.stats.holdout_auc = auc(&scores, &hold_labels).ok();
    }
    model.calibration = Some(scaling);
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Tiny sequences; positive iff input bit 2 is set at the middle step.
    pub(crate) fn separable(n: usize, seed: u64) -> Vec<Prepared> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let label = u8::from(rng.random::<f64>() < 0.4);
                let steps = (0..3)
                    .map(|t| {
                        let mut step: Vec<(u32, f64)> = Vec::new();
                        for j in 0..5u32 {
                            let on = if t == 1 && j == 2 { label == 1 } else { rng.random::<f64>() < 0.3 };
                            if on {
                                step.push((j, 1.0));
                            }
                        }
                        step
                    })
                    .collect();
                Prepared {
                    input: SparseInput {
                        steps,
                        metadata: (0..3).map(|_| rng.random::<f64>()).collect(),
                    },
                    label,
                }
            })
            .collect()
    }

    /// One noisy score feature, positives ~5%.
    fn imbalanced(n: usize, seed: u64) -> Vec<Prepared> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                let p = 1.0 / (1.0 + (-(6.0 * x - 7.0)).exp());
                let label = u8::from(rng.random::<f64>() < p);
                Prepared {
                    input: SparseInput {
                        steps: vec![vec![(0, x)], vec![(1, 1.0 - x)], vec![(2, x)]],
                        metadata: vec![x, 0.5, 1.0 - x],
                    },
                    label,
                }
            })
            .collect()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            adam: crate::model::AdamConfig {
                lr: 0.02,
                ..Default::default()
            },
            epochs: 15,
            batch_size: 16,
            ..ModelConfig::tiny(5, 3)
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let data = Dataset::from_prepared(separable(600, 1), 7);
        let fitted = fit(&data, &tiny()).unwrap();
        assert!(fitted.stats.val_auc > 0.99, "{:?}", fitted.stats.val_auc_curve);
        assert_eq!(fitted.stats.loss_curve.len(), 15);
    }

    #[test]
    fn batches_do_not_downsample() {
        let data = Dataset::from_prepared(separable(300, 2), 3);
        let config = tiny();
        let s = fit(&data, &config).unwrap().stats;
        let e = config.epochs as u64;
        assert_eq!(s.batch_class_counts, [s.train_class_counts[0] * e, s.train_class_counts[1] * e]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = Dataset::from_prepared(separable(200, 4), 5);
        let config = ModelConfig {
            dropout_rate: 0.3,
            ..tiny()
        };
        let a = fit(&data, &config).unwrap();
        let b = fit(&data, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn full_batch_loss_decreases_at_small_lr() {
        let data = Dataset::from_prepared(separable(200, 6), 1);
        let config = ModelConfig {
            epochs: 5,
            batch_size: usize::MAX,
            ..ModelConfig::tiny(5, 3)
        };
        let curve = fit(&data, &config).unwrap().stats.loss_curve;
        assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
    }

    #[test]
    fn recall_grows_with_pos_weight() {
        let data = Dataset::from_prepared(imbalanced(1500, 9), 2);
        let pos = data.examples.iter().filter(|e| e.label == 1).count();
        assert!(pos * 100 / data.examples.len() < 15, "{pos}");
        let all: Vec<usize> = (0..data.examples.len()).collect();
        let mut last = -1.0;
        for w in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let config = ModelConfig {
                pos_weight: w,
                ..tiny()
            };
            let params = fit(&data, &config).unwrap().params;
            let probs = predict_indices(&data, &all, &params, &config).unwrap();
            let hit = all.iter().filter(|i| data.examples[**i].label == 1 && super::super::softmax2(probs[**i])[1] >= 0.5).count();
            let recall = hit as f64 / pos as f64;
            assert!(recall >= last, "pos_weight {w}: {recall} < {last}");
            last = recall;
        }
        assert!(last > 0.5);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let one_class: Vec<Prepared> = separable(50, 1).into_iter().map(|mut p| {
            p.label = 0;
            p
        }).collect();
        assert!(matches!(fit(&Dataset::from_prepared(one_class, 0), &tiny()), Err(ModelError::SingleClass)));
        let setup = TrainingSetup::new(ModelConfig::default(), crate::encoding::EncoderConfig::default_for(40), vec![]);
        assert!(matches!(train(&[], &setup), Err(ModelError::Training(_))));
    }

    proptest! {
        #[test]
        fn split_partitions_and_stratifies(labels in prop::collection::vec(0u8..2, 0..300), seed in any::<u64>()) {
            let s = stratified_split(&labels, seed);
            let mut all: Vec<usize> = s.train.iter().chain(&s.val_fit).chain(&s.val_holdout).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for class in [0u8, 1] {
                let n = labels.iter().filter(|l| **l == class).count();
                let n_val = s.validation().iter().filter(|i| labels[**i] == class).count();
                if n >= 2 {
                    prop_assert!(n_val >= 1 && n_val < n);
                    prop_assert!((n_val as f64 - 0.2 * n as f64).abs() <= 1.0);
                }
            }
            prop_assert_eq!(stratified_split(&labels, seed), s);
        }
    }
}
