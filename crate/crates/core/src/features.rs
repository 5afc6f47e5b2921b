//! Mutual-information feature ranking and vectorization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::RawCorpus;
use crate::dataset::SparseDataset;
use crate::util::write_atomic;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("contingency table is empty")]
    EmptyTable,
    #[error("training slice is empty")]
    EmptySlice,
    #[error("top_n must be at least 1")]
    ZeroTopN,
    #[error("{0}")]
    Io(String),
    #[error("vocabulary line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Presence/label counts for one feature: `n11` present & malware, `n10`
/// present & benign, `n01` absent & malware, `n00` absent & benign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Contingency {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl Contingency {
    pub fn new(n11: u64, n10: u64, n01: u64, n00: u64) -> Self {
        Self { n11, n10, n01, n00 }
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

pub fn count_contingency(corpus: &RawCorpus, rows: &[usize], feature: &str) -> Contingency {
    let mut c = Contingency::default();
    for &i in rows {
        let present = corpus
            .features(i)
            .binary_search_by(|f| f.as_str().cmp(feature))
            .is_ok();
        let label = corpus.records()[i].label;
        match (present, label) {
            (true, 1) => c.n11 += 1,
            (true, _) => c.n10 += 1,
            (false, 1) => c.n01 += 1,
            (false, _) => c.n00 += 1,
        }
    }
    c
}

/// `ln(1 + d) - d`, accurate for small `|d|`.
fn log1p_minus(d: f64) -> f64 {
    if d.abs() < 0.0625 {
        // -d^2/2 + d^3/3 - d^4/4 + ...
        let mut term = d;
        let mut sum = 0.0;
        for k in 2..64 {
            term *= -d;
            let t = term / k as f64;
            sum += t;
            if t.abs() <= sum.abs() * 1e-18 {
                break;
            }
        }
        sum
    } else {
        d.ln_1p() - d
    }
}

/// Plug-in mutual information (nats) between presence and label.
///
/// Evaluated as `chi2/T + sum p (ln(1+d) - d)` where `d = n T / (r c) - 1` and
/// `chi2/T = (n11 n00 - n10 n01)^2 / (r1 r0 c1 c0)` is exact in integers.
/// This avoids the cancellation of the direct sum on near-independent tables.
pub fn mutual_information(n11: u64, n10: u64, n01: u64, n00: u64) -> Result<f64, FeatureError> {
    let t = n11 + n10 + n01 + n00;
    if t == 0 {
        return Err(FeatureError::EmptyTable);
    }
    let (r1, r0) = (n11 + n10, n01 + n00);
    let (c1, c0) = (n11 + n01, n10 + n00);
    if r1 == 0 || r0 == 0 || c1 == 0 || c0 == 0 {
        return Ok(0.0);
    }
    let det = (n11 as i128 * n00 as i128 - n10 as i128 * n01 as i128).unsigned_abs();
    let chi2_over_t =
        (det * det) as f64 / (r1 as u128 * r0 as u128 * c1 as u128 * c0 as u128) as f64;

    let tt = t as i128;
    let mut correction = 0.0;
    for (n, r, c) in [(n11, r1, c1), (n10, r1, c0), (n01, r0, c1), (n00, r0, c0)] {
        if n == 0 {
            continue;
        }
        let rc = r as i128 * c as i128;
        let d = (n as i128 * tt - rc) as f64 / rc as f64;
        correction += (n as f64 / t as f64) * log1p_minus(d);
    }
    Ok((chi2_over_t + correction).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabEntry {
    pub feature: String,
    pub index: usize,
    pub mi: f64,
}

/// Features ordered by `(mi desc, feature asc)`; `index` equals position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVocabulary {
    entries: Vec<VocabEntry>,
}

impl FeatureVocabulary {
    /// Builds a vocabulary from `(feature, mi)` pairs, sorting and indexing them.
    pub fn from_scored(mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(index, (feature, mi))| VocabEntry { feature, index, mi })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn feature(&self, index: usize) -> &str {
        &self.entries[index].feature
    }

    pub fn to_tsv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.index, e.feature, format_sig12(e.mi));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self, FeatureError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| FeatureError::Format {
                line: i + 1,
                msg: msg.into(),
            };
            let mut f = line.split('\t');
            let (Some(idx), Some(feature), Some(mi), None) =
                (f.next(), f.next(), f.next(), f.next())
            else {
                return Err(bad("expected 3 tab-separated fields"));
            };
            let index: usize = idx.parse().map_err(|_| bad("bad index"))?;
            if index != entries.len() {
                return Err(bad("indices must be dense and in order"));
            }
            let mi: f64 = mi.parse().map_err(|_| bad("bad mi"))?;
            entries.push(VocabEntry {
                feature: feature.to_string(),
                index,
                mi,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path, comments: &[String]) -> Result<(), FeatureError> {
        write_atomic(path, self.to_tsv(comments).as_bytes())
            .map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = fs::read_to_string(path)
            .map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_tsv(&text)
    }
}

/// Formats with 12 significant digits.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        format!("{:.*}", (11 - exp).max(0) as usize, x)
    } else {
        format!("{x:.11e}")
    }
}

/// Ranks every feature seen in `rows` by MI with the label and keeps the
/// `top_n` best.
pub fn rank_and_select(
    corpus: &RawCorpus,
    rows: &[usize],
    top_n: usize,
) -> Result<FeatureVocabulary, FeatureError> {
    if top_n == 0 {
        return Err(FeatureError::ZeroTopN);
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptySlice);
    }
    // per feature: (present & malware, present & benign)
    let counts: HashMap<&str, (u64, u64)> = rows
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<&str, (u64, u64)>, &i| {
            let mal = corpus.records()[i].label == 1;
            for f in corpus.features(i) {
                let e = acc.entry(f.as_str()).or_default();
                if mal {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                let e = a.entry(k).or_default();
                e.0 += v.0;
                e.1 += v.1;
            }
            a
        });
    let n_mal = rows
        .iter()
        .filter(|&&i| corpus.records()[i].label == 1)
        .count() as u64;
    let n_ben = rows.len() as u64 - n_mal;
    let mut scored: Vec<(String, f64)> = counts
        .into_par_iter()
        .map(|(f, (n11, n10))| {
            let mi =
                mutual_information(n11, n10, n_mal - n11, n_ben - n10).expect("non-empty slice");
            (f.to_string(), mi)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(FeatureVocabulary::from_scored(scored))
}

/// Maps every app onto the vocabulary; out-of-vocabulary features are dropped.
pub fn vectorize(corpus: &RawCorpus, vocab: &FeatureVocabulary) -> SparseDataset {
    let lookup: HashMap<&str, u32> = vocab
        .entries()
        .iter()
        .map(|e| (e.feature.as_str(), e.index as u32))
        .collect();
    let rows: Vec<Vec<u32>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<u32> = corpus
                .features(i)
                .iter()
                .filter_map(|f| lookup.get(f.as_str()).copied())
                .collect();
            row.sort_unstable();
            row
        })
        .collect();
    SparseDataset {
        vocab_size: vocab.len(),
        ids: corpus.records().iter().map(|r| r.sha256.clone()).collect(),
        rows,
        labels: corpus.records().iter().map(|r| r.label).collect(),
        timestamps: corpus.records().iter().map(|r| r.timestamp).collect(),
    }
}
