//! Temporal partitioning: fixed-composition batches, sliding windows over
//! batches, and calendar-month splits for the active-learning protocol.

use serde::Serialize;
use thiserror::Error;

use crate::dataset::SparseDataset;
use crate::util::{format_day, format_month, month_index};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("malware per batch ({mal}) exceeds batch size ({size})")]
    QuotaTooLarge { mal: usize, size: usize },
    #[error("dataset rows are not in temporal order (row {0})")]
    Unsorted(usize),
    #[error("need at least {needed} batches for {train} training batches, have {have}")]
    TooFewBatches {
        needed: usize,
        train: usize,
        have: usize,
    },
    #[error("at least one training batch is required")]
    ZeroTrainBatches,
    #[error("dataset is empty")]
    Empty,
    #[error("initial span must be at least one month")]
    ZeroSpan,
    #[error("every row falls inside the {0}-month initial span; nothing to test")]
    NothingToTest(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Batch {
    pub ordinal: usize,
    pub row_ids: Vec<usize>,
    pub n_mal: usize,
    pub n_ben: usize,
    /// Trailing batch that could not be filled to quota.
    pub short: bool,
    /// Rows skipped while this batch was filling because their class quota
    /// was already met.
    pub surplus: usize,
}

fn check_sorted(ds: &SparseDataset) -> Result<(), WindowError> {
    for i in 1..ds.len() {
        if (ds.timestamps[i - 1], &ds.ids[i - 1]) > (ds.timestamps[i], &ds.ids[i]) {
            return Err(WindowError::Unsorted(i));
        }
    }
    Ok(())
}

/// Greedy scan in time order. Each row joins the open batch if its class
/// quota (`mal_per_batch` malware, `batch_size - mal_per_batch` benign) still
/// has room and is skipped otherwise; a batch closes as soon as both quotas
/// are met. Consecutive batches therefore never overlap in time. A partially
/// filled trailing batch is kept and flagged `short`.
pub fn make_batches(
    ds: &SparseDataset,
    batch_size: usize,
    mal_per_batch: usize,
) -> Result<Vec<Batch>, WindowError> {
    if batch_size == 0 {
        return Err(WindowError::ZeroBatchSize);
    }
    if mal_per_batch > batch_size {
        return Err(WindowError::QuotaTooLarge {
            mal: mal_per_batch,
            size: batch_size,
        });
    }
    check_sorted(ds)?;
    let ben_quota = batch_size - mal_per_batch;
    let fresh = |ordinal| Batch {
        ordinal,
        row_ids: Vec::new(),
        n_mal: 0,
        n_ben: 0,
        short: false,
        surplus: 0,
    };
    let mut batches = Vec::new();
    let mut cur = fresh(0);
    for (i, &label) in ds.labels.iter().enumerate() {
        if label == 1 && cur.n_mal < mal_per_batch {
            cur.n_mal += 1;
            cur.row_ids.push(i);
        } else if label != 1 && cur.n_ben < ben_quota {
            cur.n_ben += 1;
            cur.row_ids.push(i);
        } else {
            cur.surplus += 1;
            continue;
        }
        if cur.n_mal == mal_per_batch && cur.n_ben == ben_quota {
            let next = fresh(cur.ordinal + 1);
            batches.push(std::mem::replace(&mut cur, next));
        }
    }
    if !cur.row_ids.is_empty() {
        cur.short = true;
        batches.push(cur);
    }
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Window {
    pub index: usize,
    pub train_batches: Vec<usize>,
    pub val_batch: usize,
    pub test_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowPlan {
    pub train_batches: usize,
    pub windows: Vec<Window>,
}

/// Windows of `n_train + 2` consecutive batches (train..., validation, test),
/// sliding by one batch.
pub fn plan_windows(batches: &[Batch], n_train: usize) -> Result<WindowPlan, WindowError> {
    if n_train == 0 {
        return Err(WindowError::ZeroTrainBatches);
    }
    let width = n_train + 2;
    if batches.len() < width {
        return Err(WindowError::TooFewBatches {
            needed: width,
            train: n_train,
            have: batches.len(),
        });
    }
    let windows = (0..=batches.len() - width)
        .map(|start| Window {
            index: start,
            train_batches: (start..start + n_train).collect(),
            val_batch: start + n_train,
            test_batch: start + n_train + 1,
        })
        .collect();
    Ok(WindowPlan {
        train_batches: n_train,
        windows,
    })
}

impl Window {
    pub fn train_rows(&self, batches: &[Batch]) -> Vec<usize> {
        self.train_batches
            .iter()
            .flat_map(|&b| batches[b].row_ids.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TestMonth {
    /// `YYYY-MM`
    pub tag: String,
    pub month: i64,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonthlySplit {
    pub initial_train: Vec<usize>,
    pub months: Vec<TestMonth>,
}

/// Rows of the first `initial_span` calendar months (counted from the first
/// row's month) train the initial model; every later non-empty month is a
/// test month.
pub fn plan_monthly(ds: &SparseDataset, initial_span: usize) -> Result<MonthlySplit, WindowError> {
    if ds.is_empty() {
        return Err(WindowError::Empty);
    }
    if initial_span == 0 {
        return Err(WindowError::ZeroSpan);
    }
    check_sorted(ds)?;
    let first = month_index(ds.timestamps[0]);
    let cutoff = first + initial_span as i64;
    let mut split = MonthlySplit {
        initial_train: Vec::new(),
        months: Vec::new(),
    };
    for (i, &ts) in ds.timestamps.iter().enumerate() {
        let m = month_index(ts);
        if m < cutoff {
            split.initial_train.push(i);
            continue;
        }
        match split.months.last_mut() {
            Some(last) if last.month == m => last.rows.push(i),
            _ => split.months.push(TestMonth {
                tag: format_month(m),
                month: m,
                rows: vec![i],
            }),
        }
    }
    if split.months.is_empty() {
        return Err(WindowError::NothingToTest(initial_span));
    }
    Ok(split)
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub ordinal: usize,
    pub n_mal: usize,
    pub n_ben: usize,
    pub short: bool,
    pub surplus: usize,
    pub first_sha256: String,
    pub last_sha256: String,
    pub first_day: String,
    pub last_day: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowSummary {
    pub index: usize,
    pub train_batches: Vec<usize>,
    pub val_batch: usize,
    pub test_batch: usize,
    pub n_train: usize,
    pub n_train_mal: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Auditable description of a window plan without row data.
#[derive(Debug, Clone, Serialize)]
pub struct PlanExport {
    pub batch_size: usize,
    pub mal_per_batch: usize,
    pub batches: Vec<BatchSummary>,
    pub windows: Vec<WindowSummary>,
}

impl PlanExport {
    pub fn new(
        ds: &SparseDataset,
        batch_size: usize,
        mal_per_batch: usize,
        batches: &[Batch],
        plan: &WindowPlan,
    ) -> Self {
        let batches_out = batches
            .iter()
            .map(|b| {
                let (first, last) = (
                    b.row_ids[0],
                    *b.row_ids.last().expect("batches are non-empty"),
                );
                BatchSummary {
                    ordinal: b.ordinal,
                    n_mal: b.n_mal,
                    n_ben: b.n_ben,
                    short: b.short,
                    surplus: b.surplus,
                    first_sha256: ds.ids[first].clone(),
                    last_sha256: ds.ids[last].clone(),
                    first_day: format_day(ds.timestamps[first]),
                    last_day: format_day(ds.timestamps[last]),
                }
            })
            .collect();
        let windows = plan
            .windows
            .iter()
            .map(|w| WindowSummary {
                index: w.index,
                train_batches: w.train_batches.clone(),
                val_batch: w.val_batch,
                test_batch: w.test_batch,
                n_train: w
                    .train_batches
                    .iter()
                    .map(|&b| batches[b].row_ids.len())
                    .sum(),
                n_train_mal: w.train_batches.iter().map(|&b| batches[b].n_mal).sum(),
                n_val: batches[w.val_batch].row_ids.len(),
                n_test: batches[w.test_batch].row_ids.len(),
            })
            .collect();
        PlanExport {
            batch_size,
            mal_per_batch,
            batches: batches_out,
            windows,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonthSummary {
    pub tag: String,
    pub n_rows: usize,
    pub n_mal: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonthlyExport {
    pub initial_span: usize,
    pub n_initial_train: usize,
    pub n_initial_mal: usize,
    pub months: Vec<MonthSummary>,
}

impl MonthlyExport {
    pub fn new(ds: &SparseDataset, initial_span: usize, split: &MonthlySplit) -> Self {
        let mal = |rows: &[usize]| rows.iter().filter(|&&i| ds.labels[i] == 1).count();
        MonthlyExport {
            initial_span,
            n_initial_train: split.initial_train.len(),
            n_initial_mal: mal(&split.initial_train),
            months: split
                .months
                .iter()
                .map(|m| MonthSummary {
                    tag: m.tag.clone(),
                    n_rows: m.rows.len(),
                    n_mal: mal(&m.rows),
                })
                .collect(),
        }
    }
}
