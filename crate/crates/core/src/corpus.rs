//! App corpus ingestion: manifest CSV, per-app feature files, and the
//! persisted single-file corpus.
//!
//! Persisted layout (`driftbench-corpus v1`):
//!
//! ```text
//! driftbench-corpus v1
//! # optional comment lines (provenance)
//! records <n>
//! <sha256>,<label>,<YYYY-MM-DD>,<source>,<app_id>      (n lines)
//! features
//! <sha256> <k>                                          (per record, in record order)
//! <category::value>                                     (k lines, ascending)
//! end
//! ```

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::util::{format_day, parse_day, write_atomic};

pub const MANIFEST_HEADER: &str = "sha256,label,first_seen,source";
pub const CORPUS_MAGIC: &str = "driftbench-corpus v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("missing feature files for {} app(s): {}", .0.len(), .0.join(", "))]
    MissingFeatureFiles(Vec<String>),
    #[error("{file} line {line}: {msg}")]
    FeatureLine {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("corpus file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invalid corpus: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identity, first-seen day and ground truth of one app.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppRecord {
    pub sha256: String,
    pub app_id: Option<String>,
    /// Days since 1970-01-01.
    pub timestamp: i64,
    /// 0 = benign, 1 = malware.
    pub label: u8,
    pub source: Option<String>,
}

impl AppRecord {
    fn sort_key(&self) -> (i64, &str) {
        (self.timestamp, self.sha256.as_str())
    }
}

/// Normalizes and validates a sha256 token. Uppercase hex is accepted and
/// lowercased.
pub fn normalize_sha256(raw: &str) -> Option<String> {
    if raw.len() == 64 && raw.bytes().all(|b| b.is_ascii_hexdigit()) {
        Some(raw.to_ascii_lowercase())
    } else {
        None
    }
}

fn valid_tag(s: &str) -> bool {
    !s.bytes()
        .any(|b| b == b',' || b == b'"' || b.is_ascii_control())
}

/// Temporally ordered apps with their deduplicated feature sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawCorpus {
    records: Vec<AppRecord>,
    features: Vec<Vec<String>>,
}

impl RawCorpus {
    /// Validates, deduplicates feature sets and sorts by `(timestamp, sha256)`.
    pub fn new(records: Vec<AppRecord>, features: Vec<Vec<String>>) -> Result<Self, CorpusError> {
        if records.len() != features.len() {
            return Err(CorpusError::Invalid(format!(
                "{} records but {} feature sets",
                records.len(),
                features.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if normalize_sha256(&r.sha256).as_deref() != Some(r.sha256.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "malformed sha256 {:?}",
                    r.sha256
                )));
            }
            if r.label > 1 {
                return Err(CorpusError::Invalid(format!(
                    "{}: label {} not in {{0,1}}",
                    r.sha256, r.label
                )));
            }
            if r.timestamp < 0 {
                return Err(CorpusError::Invalid(format!(
                    "{}: negative timestamp",
                    r.sha256
                )));
            }
            for tag in r.source.iter().chain(r.app_id.iter()) {
                if !valid_tag(tag) {
                    return Err(CorpusError::Invalid(format!(
                        "{}: invalid tag {tag:?}",
                        r.sha256
                    )));
                }
            }
            if !seen.insert(r.sha256.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "duplicate sha256 {}",
                    r.sha256
                )));
            }
        }
        let mut pairs: Vec<(AppRecord, Vec<String>)> = records
            .into_iter()
            .zip(features)
            .map(|(r, mut f)| {
                f.sort_unstable();
                f.dedup();
                (r, f)
            })
            .collect();
        for (r, fs) in &pairs {
            if let Some(bad) = fs.iter().find(|f| f.contains('\n') || !f.contains("::")) {
                return Err(CorpusError::Invalid(format!(
                    "{}: bad feature {bad:?}",
                    r.sha256
                )));
            }
        }
        pairs.sort_by(|a, b| a.0.sort_key().cmp(&b.0.sort_key()));
        let (records, features) = pairs.into_iter().unzip();
        Ok(Self { records, features })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AppRecord] {
        &self.records
    }

    /// Sorted, deduplicated feature strings of app `i`.
    pub fn features(&self, i: usize) -> &[String] {
        &self.features[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AppRecord, &[String])> {
        self.records
            .iter()
            .zip(self.features.iter().map(Vec::as_slice))
    }
}

/// Parses a manifest CSV. Records are returned in file order.
pub fn load_manifest(path: &Path) -> Result<Vec<AppRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_manifest(file)
}

pub fn parse_manifest<R: Read>(reader: R) -> Result<Vec<AppRecord>, CorpusError> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| CorpusError::Manifest {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            return Err(CorpusError::Manifest {
                line: 1,
                msg: "missing header".into(),
            })
        }
    };
    if header.trim_end_matches('\r') != MANIFEST_HEADER {
        return Err(CorpusError::Manifest {
            line: 1,
            msg: format!("expected header `{MANIFEST_HEADER}`, found `{header}`"),
        });
    }
    let mut records = Vec::new();
    let mut first_line = std::collections::HashMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let bad = |msg: String| CorpusError::Manifest { line: line_no, msg };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let sha256 = normalize_sha256(fields[0])
            .ok_or_else(|| bad(format!("malformed sha256 {:?}", fields[0])))?;
        let label = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("unknown label {other:?}"))),
        };
        let timestamp = parse_day(fields[2])
            .filter(|d| *d >= 0)
            .ok_or_else(|| bad(format!("unparseable date {:?}", fields[2])))?;
        let source = (!fields[3].is_empty()).then(|| fields[3].to_string());
        if let Some(prev) = first_line.insert(sha256.clone(), line_no) {
            return Err(bad(format!(
                "duplicate sha256 {sha256} (first seen on line {prev})"
            )));
        }
        records.push(AppRecord {
            sha256,
            app_id: None,
            timestamp,
            label,
            source,
        });
    }
    Ok(records)
}

fn parse_feature_file(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        match line.split_once("::") {
            Some((cat, _)) if !cat.is_empty() => out.push(line.to_string()),
            _ => {
                return Err(CorpusError::FeatureLine {
                    file: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected `category::value`, found {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

/// Reads `<sha256>.txt` for every record from `dir` and builds the corpus.
pub fn load_feature_files(records: Vec<AppRecord>, dir: &Path) -> Result<RawCorpus, CorpusError> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !dir.join(format!("{}.txt", r.sha256)).is_file())
        .map(|r| r.sha256.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingFeatureFiles(missing));
    }
    let features = records
        .par_iter()
        .map(|r| parse_feature_file(&dir.join(format!("{}.txt", r.sha256))))
        .collect::<Result<Vec<_>, _>>()?;
    RawCorpus::new(records, features)
}

/// Serializes the corpus; `comments` become `# ` lines after the magic line.
pub fn write_corpus<W: Write>(corpus: &RawCorpus, comments: &[String], mut w: W) -> io::Result<()> {
    writeln!(w, "{CORPUS_MAGIC}")?;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "records {}", corpus.len())?;
    for r in &corpus.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.sha256,
            r.label,
            format_day(r.timestamp),
            r.source.as_deref().unwrap_or(""),
            r.app_id.as_deref().unwrap_or("")
        )?;
    }
    writeln!(w, "features")?;
    for (r, fs) in corpus.iter() {
        writeln!(w, "{} {}", r.sha256, fs.len())?;
        for f in fs {
            writeln!(w, "{f}")?;
        }
    }
    writeln!(w, "end")
}

pub fn save_corpus(corpus: &RawCorpus, path: &Path) -> Result<(), CorpusError> {
    save_corpus_with_comments(corpus, &[], path)
}

pub fn save_corpus_with_comments(
    corpus: &RawCorpus,
    comments: &[String],
    path: &Path,
) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    write_corpus(corpus, comments, &mut buf).expect("writing to memory");
    write_atomic(path, &buf).map_err(io_err(path))
}

pub fn load_corpus(path: &Path) -> Result<RawCorpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    read_corpus(&text)
}

/// Parses a persisted corpus. Fails without returning partial data.
pub fn read_corpus(text: &str) -> Result<RawCorpus, CorpusError> {
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .peekable();
    let fmt = |line: usize, msg: &str| CorpusError::Format {
        line,
        msg: msg.to_string(),
    };
    let mut next = |expect: &str| -> Result<(usize, &str), CorpusError> {
        lines
            .next()
            .ok_or_else(|| fmt(0, &format!("unexpected end of file, expected {expect}")))
    };

    let (n, magic) = next("header")?;
    if magic != CORPUS_MAGIC {
        return Err(fmt(
            n,
            &format!("expected `{CORPUS_MAGIC}`, found {magic:?}"),
        ));
    }
    let (mut n, mut line) = next("record count")?;
    while line.starts_with('#') {
        (n, line) = next("record count")?;
    }
    let count: usize = line
        .strip_prefix("records ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| fmt(n, "expected `records <n>`"))?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, line) = next("record")?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(fmt(n, "expected 5 fields"));
        }
        let sha256 = normalize_sha256(f[0]).ok_or_else(|| fmt(n, "malformed sha256"))?;
        let label = match f[1] {
            "0" => 0,
            "1" => 1,
            _ => return Err(fmt(n, "bad label")),
        };
        let timestamp = parse_day(f[2]).ok_or_else(|| fmt(n, "bad date"))?;
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        records.push(AppRecord {
            sha256,
            app_id: opt(f[4]),
            timestamp,
            label,
            source: opt(f[3]),
        });
    }
    let (n, line) = next("`features`")?;
    if line != "features" {
        return Err(fmt(n, "expected `features`"));
    }
    let mut features = Vec::with_capacity(count);
    for r in &records {
        let (n, line) = next("feature block")?;
        let (sha, k) = line
            .split_once(' ')
            .ok_or_else(|| fmt(n, "expected `<sha256> <count>`"))?;
        if sha != r.sha256 {
            return Err(fmt(n, "feature block out of order"));
        }
        let k: usize = k.parse().map_err(|_| fmt(n, "bad feature count"))?;
        let mut fs = Vec::with_capacity(k);
        for _ in 0..k {
            let (_, f) = next("feature")?;
            fs.push(f.to_string());
        }
        features.push(fs);
    }
    let (n, line) = next("`end`")?;
    if line != "end" {
        return Err(fmt(n, "expected `end`"));
    }
    if lines.any(|(_, l)| !l.is_empty()) {
        return Err(fmt(n + 1, "trailing data after `end`"));
    }
    RawCorpus::new(records, features)
}
