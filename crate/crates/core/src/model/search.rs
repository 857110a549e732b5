use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{fit, Dataset, FitResult};
use super::{ModelConfig, ModelError, TrainedModel, TrainingSetup};
use crate::examples::Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub l2_lambda: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub gru_units: Vec<usize>,
    /// Run grid points on the rayon pool.
    pub parallel: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            l2_lambda: vec![0.0, 1e-4, 1e-3],
            dropout_rate: vec![0.0, 0.2, 0.5],
            gru_units: vec![16, 32, 64],
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub gru_units: usize,
}

impl SearchConfig {
    pub fn single(l2_lambda: f64, dropout_rate: f64, gru_units: usize) -> Self {
        SearchConfig {
            l2_lambda: vec![l2_lambda],
            dropout_rate: vec![dropout_rate],
            gru_units: vec![gru_units],
            parallel: false,
        }
    }

    /// Points in `l2 x dropout x units` order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &l2_lambda in &self.l2_lambda {
            for &dropout_rate in &self.dropout_rate {
                for &gru_units in &self.gru_units {
                    out.push(GridPoint {
                        index: out.len(),
                        l2_lambda,
                        dropout_rate,
                        gru_units,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub val_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub model: TrainedModel,
    pub selected: GridPoint,
    pub results: Vec<PointResult>,
    pub dataset: Dataset,
}

fn better(a: (&GridPoint, f64), b: (&GridPoint, f64)) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    (a.0.gru_units, a.0.index) < (b.0.gru_units, b.0.index)
}

/// Result of a search over an encoded dataset.
#[derive(Debug, Clone)]
pub struct GridSearch {
    pub selected: GridPoint,
    pub config: ModelConfig,
    pub fitted: FitResult,
    pub results: Vec<PointResult>,
}

/// Trains one model per grid point, seeded `base_seed + index`, on a shared
/// split seeded by `base_seed`; returns the best by validation AUC.
pub fn hyperparameter_search(
    examples: &[Example],
    setup: &TrainingSetup,
    grid: &SearchConfig,
) -> Result<SearchOutcome, ModelError> {
    if grid.points().is_empty() {
        return Err(ModelError::Search("empty grid".into()));
    }
    let base = setup.model_config();
    let dataset = Dataset::build(examples, &setup.encoder, base.seed)?;
    let found = search_dataset(&dataset, &base, grid)?;
    let mut model = TrainedModel::from_fit(setup, found.config, found.fitted);
    model.stats.grid_index = Some(found.selected.index);
    Ok(SearchOutcome {
        model,
        selected: found.selected,
        results: found.results,
        dataset,
    })
}

/// Grid search over an already encoded and split dataset.
pub fn search_dataset(dataset: &Dataset, base: &ModelConfig, grid: &SearchConfig) -> Result<GridSearch, ModelError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(ModelError::Search("empty grid".into()));
    }
    let run = |p: &GridPoint| {
        let mut config = base.clone();
        config.l2_lambda = p.l2_lambda;
        config.dropout_rate = p.dropout_rate;
        config.gru_units = p.gru_units;
        config.seed = base.seed.wrapping_add(p.index as u64);
        fit(dataset, &config).map(|f| (config, f))
    };
    let fits: Vec<_> = if grid.parallel {
        points.par_iter().map(run).collect()
    } else {
        points.iter().map(run).collect()
    };

    let mut results = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64)> = None;
    let mut errors = Vec::new();
    for (i, (p, r)) in points.iter().zip(&fits).enumerate() {
        let (val_auc, error) = match r {
            Ok((_, f)) if f.stats.val_auc.is_finite() => {
                let auc = f.stats.val_auc;
                if best.is_none_or(|(b, bauc)| better((p, auc), (&points[b], bauc))) {
                    best = Some((i, auc));
                }
                (Some(auc), None)
            }
            Ok(_) => (None, Some("non-finite validation AUC".to_string())),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(e) = &error {
            errors.push(format!("point {i}: {e}"));
        }
        results.push(PointResult { point: *p, val_auc, error });
    }
    let Some((b, _)) = best else {
        return Err(ModelError::Search(errors.join("; ")));
    };
    let (config, fitted) = fits.into_iter().nth(b).expect("index in range").expect("best point succeeded");
    Ok(GridSearch {
        selected: points[b],
        config,
        fitted,
        results,
    })
}
