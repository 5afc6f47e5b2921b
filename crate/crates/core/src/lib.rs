//! Temporal benchmarking of binary malware classifiers under concept drift.
//!
//! The pipeline runs corpus ingestion ([`corpus`]), mutual-information
//! feature selection ([`features`]), temporal batching and sliding windows
//! ([`windows`]), a native classifier zoo ([`models`]) with grid search
//! ([`tuning`]), a budgeted uncertainty-sampling loop ([`active`]) and
//! confusion-matrix reporting ([`metrics`]). [`synthgen`] produces drifting
//! synthetic corpora for desk-scale runs, and [`cli`] binds everything into
//! reproducible experiments.

pub mod active;
pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod models;
pub mod synthgen;
pub mod tuning;
pub mod util;
pub mod windows;

pub use dataset::{SparseDataset, View};
pub use models::{fit, predict, uncertainty, Family, Hyperparams, ModelArtifact};
