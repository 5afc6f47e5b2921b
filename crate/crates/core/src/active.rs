//! Monthly uncertainty-sampling loop with a labeling budget and cold-start
//! retraining.
//!
//! Month `m` is scored by a model trained on the initial period plus the rows
//! revealed in months before `m`. Metrics for `m` come from those scores; only
//! then are the `budget` most uncertain rows of `m` revealed and the model is
//! retrained from scratch with seed `derive_seed(master, m + 1)`. A month that
//! reveals nothing keeps the previous model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SparseDataset;
use crate::metrics::{
    aggregate, aggregate_weighted, compute_metrics, confusion, pct, Averages, ConfusionMatrix,
    MetricRecord, MetricsError,
};
use crate::models::{fit, predict, uncertainty, Family, ModelArtifact, ModelError};
use crate::tuning::{grid_search, Grid, TuningError};
use crate::util::derive_seed;
use crate::windows::MonthlySplit;

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("initial training set must contain both classes")]
    SingleClassInitial,
    #[error("initial training set is too small to hold out a validation slice with malware")]
    NoValidation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    /// Every test month counts once.
    #[default]
    Uniform,
    /// Months weighted by their row count.
    BySize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActiveConfig {
    /// A single-candidate grid trains that configuration directly; larger
    /// grids are searched on a temporal holdout of the initial period.
    pub grid: Grid,
    pub budget: usize,
    pub threshold: f64,
    pub seed: u64,
    pub averaging: AverageMode,
    /// Repeat the grid search at every retrain instead of reusing the
    /// initially selected configuration.
    pub retune: bool,
    /// Trailing fraction of the training rows held out when searching a grid.
    pub val_fraction: f64,
}

impl ActiveConfig {
    pub fn new(grid: Grid, budget: usize, seed: u64) -> Self {
        Self {
            grid,
            budget,
            threshold: 0.5,
            seed,
            averaging: AverageMode::Uniform,
            retune: false,
            val_fraction: 0.1,
        }
    }
}

/// The `min(budget, n)` positions with the largest uncertainty, ties to the
/// lower position, returned in ascending order.
pub fn select_uncertain(scores: &[f64], budget: usize) -> Vec<usize> {
    let u = uncertainty(scores);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone, Serialize)]
pub struct MonthRecord {
    pub month: String,
    pub n_rows: usize,
    pub n_mal: usize,
    /// Size of the training set behind the model that scored this month.
    pub train_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricRecord,
    /// Dataset row ids revealed after evaluation.
    pub selected: Vec<usize>,
    pub selected_mal: usize,
    /// Training set size after the reveal.
    pub cumulative_train_size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub fnr: String,
    pub fpr: String,
    pub f1: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActiveTrace {
    pub family: Family,
    pub budget: usize,
    pub params: String,
    pub initial_train_size: usize,
    pub months: Vec<MonthRecord>,
    pub averages: Averages,
    /// Mean FNR / FPR / F1 in percent.
    pub table: TableRow,
}

/// Hooks for checking the loop's ordering from tests.
pub trait LoopObserver {
    /// A model was (re)trained on `train_rows`; `month` is `None` for the initial fit.
    fn trained(&mut self, _month: Option<usize>, _train_rows: &[usize]) {}
    /// Month `month` was scored by the current model.
    fn scored(&mut self, _month: usize, _train_rows: &[usize], _month_rows: &[usize]) {}
    /// Labels of `rows` were revealed.
    fn revealed(&mut self, _month: usize, _rows: &[usize]) {}
}

struct NoObserver;
impl LoopObserver for NoObserver {}

fn train_model(
    cfg: &ActiveConfig,
    ds: &SparseDataset,
    train: &[usize],
    seed: u64,
) -> Result<ModelArtifact, ActiveError> {
    if cfg.grid.candidates.len() == 1 {
        return Ok(fit(&cfg.grid.candidates[0], &ds.view(train), seed)?);
    }
    let n_val = ((train.len() as f64 * cfg.val_fraction).ceil() as usize)
        .min(train.len().saturating_sub(1));
    let (fit_rows, val_rows) = train.split_at(train.len() - n_val);
    if n_val == 0 || !val_rows.iter().any(|&i| ds.labels[i] == 1) {
        return Err(ActiveError::NoValidation);
    }
    let tuned = grid_search(&cfg.grid, &ds.view(fit_rows), &ds.view(val_rows), seed)?;
    // refit the chosen configuration on the whole training set
    let hp = &cfg.grid.candidates[tuned.best_index];
    Ok(fit(hp, &ds.view(train), seed)?)
}

pub fn run_active_loop(
    cfg: &ActiveConfig,
    split: &MonthlySplit,
    ds: &SparseDataset,
) -> Result<ActiveTrace, ActiveError> {
    run_active_loop_observed(cfg, split, ds, &mut NoObserver)
}

pub fn run_active_loop_observed(
    cfg: &ActiveConfig,
    split: &MonthlySplit,
    ds: &SparseDataset,
    obs: &mut dyn LoopObserver,
) -> Result<ActiveTrace, ActiveError> {
    let mut train = split.initial_train.clone();
    let n_mal = train.iter().filter(|&&i| ds.labels[i] == 1).count();
    if n_mal == 0 || n_mal == train.len() {
        return Err(ActiveError::SingleClassInitial);
    }
    let mut model = train_model(cfg, ds, &train, derive_seed(cfg.seed, 0))?;
    obs.trained(None, &train);
    let frozen = ActiveConfig {
        grid: Grid::single(model.hyperparams.clone()),
        ..cfg.clone()
    };
    let retrain_cfg = if cfg.retune { cfg } else { &frozen };

    let mut months = Vec::with_capacity(split.months.len());
    for (m, month) in split.months.iter().enumerate() {
        let view = ds.view(&month.rows);
        let scores = model.score(&view)?;
        obs.scored(m, &train, &month.rows);
        let pred = predict(&scores, cfg.threshold)?;
        let cm = confusion(&view.labels, &pred)?;
        let metrics = compute_metrics(&cm)?;
        let train_size = train.len();

        let selected: Vec<usize> = select_uncertain(&scores, cfg.budget)
            .into_iter()
            .map(|p| month.rows[p])
            .collect();
        obs.revealed(m, &selected);
        if !selected.is_empty() {
            train.extend_from_slice(&selected);
            train.sort_unstable();
            model = train_model(retrain_cfg, ds, &train, derive_seed(cfg.seed, m as u64 + 1))?;
            obs.trained(Some(m), &train);
        }
        months.push(MonthRecord {
            month: month.tag.clone(),
            n_rows: month.rows.len(),
            n_mal: view.n_positive(),
            train_size,
            confusion: cm,
            metrics,
            selected_mal: selected.iter().filter(|&&i| ds.labels[i] == 1).count(),
            selected,
            cumulative_train_size: train.len(),
        });
    }
    let records: Vec<MetricRecord> = months.iter().map(|m| m.metrics.clone()).collect();
    let averages = match cfg.averaging {
        AverageMode::Uniform => aggregate(&records)?,
        AverageMode::BySize => {
            let w: Vec<f64> = months.iter().map(|m| m.n_rows as f64).collect();
            aggregate_weighted(&records, &w)?
        }
    };
    let table = TableRow {
        fnr: pct(averages.mean.fnr),
        fpr: pct(averages.mean.fpr),
        f1: pct(averages.mean.f1),
    };
    Ok(ActiveTrace {
        family: cfg.grid.family,
        budget: cfg.budget,
        params: frozen.grid.candidates[0].describe(),
        initial_train_size: split.initial_train.len(),
        months,
        averages,
        table,
    })
}
