//! Hyperparameter grids and validation-F1 grid search.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::View;
use crate::metrics::{compute_metrics, confusion, MetricsError};
use crate::models::{
    fit, predict, Family, GbdtParams, Hyperparams, KnnParams, MlpParams, ModelArtifact, ModelError,
    NbParams, RfParams, SvmParams,
};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid mixes families {0} and {1}")]
    MixedFamilies(Family, Family),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("validation set has no malware; F1 is undefined")]
    NoMalwareInValidation,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub family: Family,
    pub candidates: Vec<Hyperparams>,
}

impl Grid {
    pub fn new(candidates: Vec<Hyperparams>) -> Result<Self, TuningError> {
        let family = candidates.first().ok_or(TuningError::EmptyGrid)?.family();
        if let Some(other) = candidates
            .iter()
            .map(Hyperparams::family)
            .find(|f| *f != family)
        {
            return Err(TuningError::MixedFamilies(family, other));
        }
        Ok(Grid { family, candidates })
    }

    pub fn single(hp: Hyperparams) -> Self {
        Grid {
            family: hp.family(),
            candidates: vec![hp],
        }
    }
}

/// Default search space per family.
///
/// SVM searches C over {0.001, 0.1, 1, 10}; k-NN the odd k in 3..=15; RF
/// 100/200/300 trees; GBDT is the single 1000-iteration configuration; NB uses
/// alpha = 1; the MLP tries 128 and 256 hidden units.
pub fn default_grid(family: Family) -> Grid {
    let candidates = match family {
        Family::Svm => [0.001, 0.1, 1.0, 10.0]
            .into_iter()
            .map(|c| {
                Hyperparams::Svm(SvmParams {
                    c,
                    ..Default::default()
                })
            })
            .collect(),
        Family::Knn => (3..=15)
            .step_by(2)
            .map(|k| Hyperparams::Knn(KnnParams { k }))
            .collect(),
        Family::Rf => [100, 200, 300]
            .into_iter()
            .map(|n_trees| {
                Hyperparams::Rf(RfParams {
                    n_trees,
                    ..Default::default()
                })
            })
            .collect(),
        Family::Gbdt => vec![Hyperparams::Gbdt(GbdtParams::default())],
        Family::Nb => vec![Hyperparams::Nb(NbParams { alpha: 1.0 })],
        Family::Mlp => [128, 256]
            .into_iter()
            .map(|h| {
                Hyperparams::Mlp(MlpParams {
                    hidden: vec![h],
                    ..Default::default()
                })
            })
            .collect(),
    };
    Grid { family, candidates }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub index: usize,
    pub params: String,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: ModelArtifact,
    pub best_index: usize,
    pub table: Vec<CandidateScore>,
}

impl GridResult {
    pub fn best_f1(&self) -> f64 {
        self.table[self.best_index].val_f1
    }
}

/// F1 on the malicious class at threshold 0.5.
pub fn validation_f1(model: &ModelArtifact, validation: &View<'_>) -> Result<f64, TuningError> {
    let scores = model.score(validation)?;
    let pred = predict(&scores, 0.5)?;
    Ok(compute_metrics(&confusion(&validation.labels, &pred)?)?.f1)
}

/// Trains every candidate (candidate `i` with `derive_seed(seed, i)`) and
/// keeps the best validation F1; ties go to the earlier candidate.
pub fn grid_search(
    grid: &Grid,
    train: &View<'_>,
    validation: &View<'_>,
    seed: u64,
) -> Result<GridResult, TuningError> {
    if grid.candidates.is_empty() {
        return Err(TuningError::EmptyGrid);
    }
    if validation.is_empty() {
        return Err(TuningError::EmptyValidation);
    }
    if validation.n_positive() == 0 {
        return Err(TuningError::NoMalwareInValidation);
    }
    let results: Vec<(ModelArtifact, f64)> = grid
        .candidates
        .par_iter()
        .enumerate()
        .map(|(i, hp)| {
            let model = fit(hp, train, derive_seed(seed, i as u64))?;
            let f1 = validation_f1(&model, validation)?;
            Ok((model, f1))
        })
        .collect::<Result<_, TuningError>>()?;
    let mut best_index = 0;
    for (i, (_, f1)) in results.iter().enumerate() {
        if *f1 > results[best_index].1 {
            best_index = i;
        }
    }
    let table = results
        .iter()
        .enumerate()
        .map(|(index, (m, f1))| CandidateScore {
            index,
            params: m.hyperparams.describe(),
            val_f1: *f1,
        })
        .collect();
    let best = results
        .into_iter()
        .nth(best_index)
        .expect("index in range")
        .0;
    Ok(GridResult {
        best,
        best_index,
        table,
    })
}
