//! Binary classifier zoo behind a single fit/score contract.
//!
//! Every family scores rows with an estimated probability of malware in
//! `[0, 1]`. Training is deterministic for a fixed `(hyperparams, rows, seed)`
//! regardless of the rayon pool size: parallel work is keyed by component
//! index (tree, feature, query row) and reductions run in a fixed order.

pub mod gbdt;
pub mod knn;
pub mod mlp;
pub mod nb;
pub mod svm;
pub mod tree;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::View;
use crate::util::write_atomic;

pub use gbdt::{Gbdt, GbdtParams};
pub use knn::{Knn, KnnParams};
pub use mlp::{Mlp, MlpParams};
pub use nb::{NaiveBayes, NbParams};
pub use svm::{LinearSvm, SvmParams};
pub use tree::{Forest, RfParams};

pub const MODEL_MAGIC: &str = "driftbench-model v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0} needs both classes in the training set")]
    SingleClass(Family),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("vocabulary size mismatch: model expects {expected}, rows use {found}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("unknown model family {0:?}")]
    UnknownFamily(String),
    #[error("{0}")]
    Io(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Nb,
    Knn,
    Svm,
    Rf,
    Gbdt,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Nb,
        Family::Knn,
        Family::Svm,
        Family::Rf,
        Family::Gbdt,
        Family::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Nb => "nb",
            Family::Knn => "knn",
            Family::Svm => "svm",
            Family::Rf => "rf",
            Family::Gbdt => "gbdt",
            Family::Mlp => "mlp",
        }
    }

    fn tolerates_single_class(self) -> bool {
        matches!(self, Family::Nb | Family::Knn)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ModelError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparams {
    Nb(NbParams),
    Knn(KnnParams),
    Svm(SvmParams),
    Rf(RfParams),
    Gbdt(GbdtParams),
    Mlp(MlpParams),
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Nb(_) => Family::Nb,
            Hyperparams::Knn(_) => Family::Knn,
            Hyperparams::Svm(_) => Family::Svm,
            Hyperparams::Rf(_) => Family::Rf,
            Hyperparams::Gbdt(_) => Family::Gbdt,
            Hyperparams::Mlp(_) => Family::Mlp,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Nb => Hyperparams::Nb(NbParams::default()),
            Family::Knn => Hyperparams::Knn(KnnParams::default()),
            Family::Svm => Hyperparams::Svm(SvmParams::default()),
            Family::Rf => Hyperparams::Rf(RfParams::default()),
            Family::Gbdt => Hyperparams::Gbdt(GbdtParams::default()),
            Family::Mlp => Hyperparams::Mlp(MlpParams::default()),
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidParams(msg.to_string()));
        match self {
            Hyperparams::Nb(p) if !(p.alpha > 0.0) => bad("nb alpha must be > 0"),
            Hyperparams::Knn(p) if p.k == 0 || p.k % 2 == 0 => bad("knn k must be odd and >= 1"),
            Hyperparams::Svm(p) if !(p.c > 0.0) => bad("svm C must be > 0"),
            Hyperparams::Svm(p) if p.max_epochs == 0 || !(p.tolerance >= 0.0) => {
                bad("svm needs max_epochs >= 1 and tolerance >= 0")
            }
            Hyperparams::Rf(p) if p.n_trees == 0 => bad("rf n_trees must be >= 1"),
            Hyperparams::Rf(p) if p.feature_fraction.is_some_and(|f| !(f > 0.0 && f <= 1.0)) => {
                bad("rf feature_fraction must be in (0, 1]")
            }
            Hyperparams::Gbdt(p) if p.iterations == 0 || p.depth == 0 => {
                bad("gbdt iterations and depth must be >= 1")
            }
            Hyperparams::Gbdt(p) if p.depth > 16 => bad("gbdt depth must be <= 16"),
            Hyperparams::Gbdt(p) if !(p.learning_rate > 0.0) || !(p.l2_leaf_reg >= 0.0) => {
                bad("gbdt learning_rate must be > 0 and l2_leaf_reg >= 0")
            }
            Hyperparams::Mlp(p) if p.hidden.is_empty() || p.hidden.contains(&0) => {
                bad("mlp hidden sizes must be >= 1")
            }
            Hyperparams::Mlp(p)
                if !(p.learning_rate > 0.0) || p.epochs == 0 || p.batch_size == 0 =>
            {
                bad("mlp needs learning_rate > 0, epochs >= 1, batch_size >= 1")
            }
            _ => Ok(()),
        }
    }

    /// Compact one-line description for reports.
    pub fn describe(&self) -> String {
        match self {
            Hyperparams::Nb(p) => format!("alpha={}", p.alpha),
            Hyperparams::Knn(p) => format!("k={}", p.k),
            Hyperparams::Svm(p) => format!("C={}", p.c),
            Hyperparams::Rf(p) => format!("n_trees={} max_depth={}", p.n_trees, p.max_depth),
            Hyperparams::Gbdt(p) => format!(
                "iterations={} learning_rate={} depth={} l2_leaf_reg={}",
                p.iterations, p.learning_rate, p.depth, p.l2_leaf_reg
            ),
            Hyperparams::Mlp(p) => {
                format!("hidden={:?} learning_rate={}", p.hidden, p.learning_rate)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelState {
    Nb(NaiveBayes),
    Knn(Knn),
    Svm(LinearSvm),
    Rf(Forest),
    Gbdt(Gbdt),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub train_size: usize,
    pub n_positive: usize,
    pub wall_ms: u64,
}

/// A trained classifier of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub vocab_size: usize,
    pub meta: TrainMeta,
    pub state: ModelState,
}

fn check_vocab(expected: usize, rows: &View<'_>) -> Result<(), ModelError> {
    if rows.vocab_size != expected {
        return Err(ModelError::VocabMismatch {
            expected,
            found: rows.vocab_size,
        });
    }
    if let Some(&j) = rows.rows.iter().filter_map(|r| r.last()).max() {
        if j as usize >= expected {
            return Err(ModelError::VocabMismatch {
                expected,
                found: j as usize + 1,
            });
        }
    }
    Ok(())
}

pub fn fit(hp: &Hyperparams, train: &View<'_>, seed: u64) -> Result<ModelArtifact, ModelError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    check_vocab(train.vocab_size, train)?;
    let family = hp.family();
    if !family.tolerates_single_class() && !train.has_both_classes() {
        return Err(ModelError::SingleClass(family));
    }
    let start = Instant::now();
    let state = match hp {
        Hyperparams::Nb(p) => ModelState::Nb(NaiveBayes::fit(p, train)),
        Hyperparams::Knn(p) => ModelState::Knn(Knn::fit(p, train)),
        Hyperparams::Svm(p) => ModelState::Svm(LinearSvm::fit(p, train, seed)),
        Hyperparams::Rf(p) => ModelState::Rf(Forest::fit(p, train, seed)),
        Hyperparams::Gbdt(p) => ModelState::Gbdt(Gbdt::fit(p, train)),
        Hyperparams::Mlp(p) => ModelState::Mlp(Mlp::fit(p, train, seed)),
    };
    Ok(ModelArtifact {
        hyperparams: hp.clone(),
        seed,
        vocab_size: train.vocab_size,
        meta: TrainMeta {
            train_size: train.len(),
            n_positive: train.n_positive(),
            wall_ms: start.elapsed().as_millis() as u64,
        },
        state,
    })
}

impl ModelArtifact {
    pub fn family(&self) -> Family {
        self.hyperparams.family()
    }

    /// Malware probability per row.
    pub fn score(&self, rows: &View<'_>) -> Result<Vec<f64>, ModelError> {
        check_vocab(self.vocab_size, rows)?;
        Ok(match &self.state {
            ModelState::Nb(m) => m.score(&rows.rows),
            ModelState::Knn(m) => m.score(&rows.rows),
            ModelState::Svm(m) => m.score(&rows.rows),
            ModelState::Rf(m) => m.score(&rows.rows),
            ModelState::Gbdt(m) => m.score(&rows.rows),
            ModelState::Mlp(m) => m.score(&rows.rows),
        })
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string(self).expect("artifact serializes");
        format!("{MODEL_MAGIC} {}\n{body}\n", self.family())
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| ModelError::Format("missing header".into()))?;
        let family: Family = header
            .strip_prefix(MODEL_MAGIC)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| {
                ModelError::Format(format!(
                    "expected `{MODEL_MAGIC} <family>`, found {header:?}"
                ))
            })?
            .parse()?;
        let artifact: ModelArtifact =
            serde_json::from_str(body).map_err(|e| ModelError::Format(e.to_string()))?;
        if artifact.family() != family {
            return Err(ModelError::Format(format!(
                "header says {family}, body holds {}",
                artifact.family()
            )));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_atomic(path, self.to_text().as_bytes())
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

/// Label 1 iff score >= threshold.
pub fn predict(scores: &[f64], threshold: f64) -> Result<Vec<u8>, ModelError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ModelError::BadThreshold(threshold));
    }
    Ok(scores.iter().map(|&s| u8::from(s >= threshold)).collect())
}

/// `1 - max(p, 1 - p)`, computed as `min(p, 1 - p)` to keep precision near 0.
pub fn uncertainty(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|&p| p.min(1.0 - p)).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
