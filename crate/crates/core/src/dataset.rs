//! Sparse binary design matrix and its on-disk form.
//!
//! File layout:
//!
//! ```text
//! driftbench-sparse v1 V=<vocab_size>
//! # optional comment lines
//! <sha256> <label> <timestamp> <idx1,idx2,...>
//! ```
//!
//! The index field may be empty (all-zero row).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::util::write_atomic;

pub const SPARSE_MAGIC: &str = "driftbench-sparse v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}")]
    Io(String),
    #[error("sparse file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("row {row}: {msg}")]
    Invalid { row: usize, msg: String },
}

/// Temporally ordered binary feature rows with labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SparseDataset {
    pub vocab_size: usize,
    pub ids: Vec<String>,
    /// Strictly increasing column indices per row.
    pub rows: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
    /// Days since 1970-01-01.
    pub timestamps: Vec<i64>,
}

impl SparseDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks alignment, index bounds, row ordering and labels.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.rows.len();
        if self.labels.len() != n || self.timestamps.len() != n || self.ids.len() != n {
            return Err(DatasetError::Invalid {
                row: 0,
                msg: "misaligned columns".into(),
            });
        }
        for (i, row) in self.rows.iter().enumerate() {
            let bad = |msg: &str| DatasetError::Invalid {
                row: i,
                msg: msg.into(),
            };
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("indices not strictly increasing"));
            }
            if row.last().is_some_and(|&j| j as usize >= self.vocab_size) {
                return Err(bad("index out of vocabulary"));
            }
            if self.labels[i] > 1 {
                return Err(bad("label not in {0,1}"));
            }
            if i > 0
                && (self.timestamps[i - 1], &self.ids[i - 1]) > (self.timestamps[i], &self.ids[i])
            {
                return Err(bad("rows not in (timestamp, sha256) order"));
            }
        }
        Ok(())
    }

    /// Borrowed subset of rows, in the order given.
    pub fn view(&self, ids: &[usize]) -> View<'_> {
        View {
            vocab_size: self.vocab_size,
            rows: ids.iter().map(|&i| self.rows[i].as_slice()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn full_view(&self) -> View<'_> {
        View {
            vocab_size: self.vocab_size,
            rows: self.rows.iter().map(Vec::as_slice).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn to_text(&self, comments: &[String]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SPARSE_MAGIC} V={}", self.vocab_size);
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        for i in 0..self.len() {
            let _ = write!(
                out,
                "{} {} {} ",
                self.ids[i], self.labels[i], self.timestamps[i]
            );
            for (k, j) in self.rows[i].iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{j}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let fmt = |line: usize, msg: &str| DatasetError::Format {
            line,
            msg: msg.into(),
        };
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| fmt(1, "empty file"))?;
        let vocab_size = header
            .strip_prefix(SPARSE_MAGIC)
            .and_then(|r| r.strip_prefix(" V="))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| fmt(1, &format!("expected `{SPARSE_MAGIC} V=<n>`")))?;
        let mut ds = SparseDataset {
            vocab_size,
            ..Default::default()
        };
        for (n, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(4, ' ');
            let id = parts.next().unwrap_or_default();
            let label: u8 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| fmt(n, "bad label"))?;
            let ts: i64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| fmt(n, "bad timestamp"))?;
            let idx = parts.next().unwrap_or("");
            let row = if idx.is_empty() {
                Vec::new()
            } else {
                idx.split(',')
                    .map(|s| s.parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| fmt(n, "bad index list"))?
            };
            ds.ids.push(id.to_string());
            ds.labels.push(label);
            ds.timestamps.push(ts);
            ds.rows.push(row);
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path, comments: &[String]) -> Result<(), DatasetError> {
        write_atomic(path, self.to_text(comments).as_bytes())
            .map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Rows handed to a model: borrowed sparse rows plus their labels.
#[derive(Debug, Clone)]
pub struct View<'a> {
    pub vocab_size: usize,
    pub rows: Vec<&'a [u32]>,
    pub labels: Vec<u8>,
}

impl<'a> View<'a> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.len()
    }

    /// Builds a view from owned rows; handy for tests and fixtures.
    pub fn from_rows(vocab_size: usize, rows: &'a [Vec<u32>], labels: &[u8]) -> Self {
        View {
            vocab_size,
            rows: rows.iter().map(Vec::as_slice).collect(),
            labels: labels.to_vec(),
        }
    }
}
