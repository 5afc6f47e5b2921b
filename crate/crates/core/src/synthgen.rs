//! Synthetic corpora with controllable concept drift.
//!
//! Each app gets a uniform timestamp over the span and a label; its features
//! are independent Bernoulli draws from the class profile active on its day.
//! A drift event at day offset `D` with rotation `r` shifts both profiles by
//! `r` positions (feature `f` takes the old presence rate of `f - r mod V`)
//! for every app on or after `D`; rotations of successive events add up.
//!
//! Every app draws from its own generator seeded by `derive_seed`, so the
//! output does not depend on how generation is split across threads.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AppRecord, CorpusError, RawCorpus, MANIFEST_HEADER};
use crate::util::{derive_seed, format_day, parse_day, write_atomic};

const CATEGORIES: [&str; 5] = ["permission", "api_call", "intent", "activity", "url"];

// sub-streams of the master seed
const STREAM_LABELS: u64 = 0;
const STREAM_CORRECTION: u64 = 1;
const STREAM_APPS: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error("synth spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Per-class presence probabilities before any drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profiles {
    /// Features `0..malware_block` fire with `high_rate` in malware and
    /// `low_rate` in benign apps; the next `benign_block` features the other
    /// way round; all remaining features fire with `background_rate`.
    Block {
        malware_block: usize,
        benign_block: usize,
        high_rate: f64,
        low_rate: f64,
        background_rate: f64,
    },
    Explicit {
        malware: Vec<f64>,
        benign: Vec<f64>,
    },
}

impl Default for Profiles {
    fn default() -> Self {
        Profiles::Block {
            malware_block: 16,
            benign_block: 16,
            high_rate: 0.5,
            low_rate: 0.05,
            background_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    /// Days after the span start.
    pub day: i64,
    pub rotation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_apps: usize,
    pub malware_ratio: f64,
    pub vocab_size: usize,
    pub profiles: Profiles,
    pub drift: Vec<DriftEvent>,
    /// First day of the span, `YYYY-MM-DD`.
    pub start: String,
    pub span_days: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_apps: 10_000,
            malware_ratio: 0.10,
            vocab_size: 200,
            profiles: Profiles::default(),
            drift: Vec::new(),
            start: "2016-01-01".into(),
            span_days: 1461,
        }
    }
}

/// Name of synthetic feature `f`.
pub fn feature_name(f: usize) -> String {
    format!("{}::feat_{f:05}", CATEGORIES[f % CATEGORIES.len()])
}

/// Synthetic sha256 of app `ordinal`.
pub fn synthetic_sha256(seed: u64, ordinal: usize) -> String {
    hex::encode(Sha256::digest(format!("{seed}:{ordinal}").as_bytes()))
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn start_day(&self) -> Result<i64, SynthError> {
        parse_day(&self.start)
            .ok_or_else(|| SynthError::Invalid(format!("start {:?} is not YYYY-MM-DD", self.start)))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if !(self.malware_ratio > 0.0 && self.malware_ratio < 1.0) {
            return bad(format!("malware_ratio {} not in (0,1)", self.malware_ratio));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.span_days < 1 {
            return bad(format!("span_days {} < 1", self.span_days));
        }
        if self.start_day()? < 0 {
            return bad("start precedes 1970-01-01".into());
        }
        for e in &self.drift {
            if e.rotation >= self.vocab_size {
                return bad(format!(
                    "rotation {} >= vocab_size {}",
                    e.rotation, self.vocab_size
                ));
            }
            if e.day < 0 || e.day >= self.span_days {
                return bad(format!("drift day {} outside the span", e.day));
            }
        }
        let rate_ok = |p: &f64| (0.0..=1.0).contains(p);
        match &self.profiles {
            Profiles::Block {
                malware_block,
                benign_block,
                high_rate,
                low_rate,
                background_rate,
            } => {
                if malware_block + benign_block > self.vocab_size {
                    return bad("informative blocks exceed vocab_size".into());
                }
                if ![high_rate, low_rate, background_rate]
                    .into_iter()
                    .all(rate_ok)
                {
                    return bad("presence rates must lie in [0,1]".into());
                }
            }
            Profiles::Explicit { malware, benign } => {
                if malware.len() != self.vocab_size || benign.len() != self.vocab_size {
                    return bad("explicit profiles must have vocab_size entries".into());
                }
                if !malware.iter().chain(benign).all(rate_ok) {
                    return bad("presence rates must lie in [0,1]".into());
                }
            }
        }
        Ok(())
    }

    /// `(malware, benign)` presence rates before drift.
    pub fn base_profiles(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.profiles {
            Profiles::Block {
                malware_block,
                benign_block,
                high_rate,
                low_rate,
                background_rate,
            } => {
                let (mb, bb) = (*malware_block, *benign_block);
                let rate = |f: usize, malware: bool| match (f < mb, f < mb + bb) {
                    (true, _) => {
                        if malware {
                            *high_rate
                        } else {
                            *low_rate
                        }
                    }
                    (false, true) => {
                        if malware {
                            *low_rate
                        } else {
                            *high_rate
                        }
                    }
                    _ => *background_rate,
                };
                let v = self.vocab_size;
                (
                    (0..v).map(|f| rate(f, true)).collect(),
                    (0..v).map(|f| rate(f, false)).collect(),
                )
            }
            Profiles::Explicit { malware, benign } => (malware.clone(), benign.clone()),
        }
    }

    /// Total rotation in effect `offset` days after the span start.
    pub fn rotation_at(&self, offset: i64) -> usize {
        self.drift
            .iter()
            .filter(|e| e.day <= offset)
            .map(|e| e.rotation)
            .sum::<usize>()
            % self.vocab_size
    }

    /// `(malware, benign)` presence rates `offset` days after the span start.
    pub fn profiles_at(&self, offset: i64) -> (Vec<f64>, Vec<f64>) {
        let (mut m, mut b) = self.base_profiles();
        let r = self.rotation_at(offset);
        m.rotate_right(r);
        b.rotate_right(r);
        (m, b)
    }

    pub fn n_malware(&self) -> usize {
        (self.n_apps as f64 * self.malware_ratio).floor() as usize
    }
}

/// Generated apps in ordinal order, with the feature indices each one carries.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<AppRecord>,
    pub features: Vec<Vec<usize>>,
    /// Day offset of each app from the span start.
    pub offsets: Vec<i64>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let start = spec.start_day()?;
    let n = spec.n_apps;

    let mut label_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_LABELS));
    let mut labels: Vec<u8> = (0..n)
        .map(|_| u8::from(label_rng.random_bool(spec.malware_ratio)))
        .collect();
    // flip a seeded random subset of the surplus class to hit floor(n * ratio)
    let target = spec.n_malware();
    let drawn = labels.iter().filter(|&&y| y == 1).count();
    let (from, to, excess) = if drawn > target {
        (1, 0, drawn - target)
    } else {
        (0, 1, target - drawn)
    };
    let mut pool: Vec<usize> = (0..n).filter(|&i| labels[i] == from).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        STREAM_CORRECTION,
    )));
    for &i in &pool[..excess] {
        labels[i] = to;
    }

    // the active rotation only changes on drift days
    let profile_cache: HashMap<usize, (Vec<f64>, Vec<f64>)> = std::iter::once(0)
        .chain(spec.drift.iter().map(|e| e.day))
        .map(|d| (spec.rotation_at(d), spec.profiles_at(d)))
        .collect();
    let app_seed = derive_seed(spec.seed, STREAM_APPS);

    let (offsets, features): (Vec<i64>, Vec<Vec<usize>>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(app_seed, i as u64));
            let offset = rng.random_range(0..spec.span_days);
            let (mal, ben) = &profile_cache[&spec.rotation_at(offset)];
            let probs = if labels[i] == 1 { mal } else { ben };
            let feats = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| rng.random_bool(p))
                .map(|(f, _)| f)
                .collect();
            (offset, feats)
        })
        .unzip();

    let records = (0..n)
        .map(|i| AppRecord {
            sha256: synthetic_sha256(spec.seed, i),
            app_id: None,
            timestamp: start + offsets[i],
            label: labels[i],
            source: Some("synth".into()),
        })
        .collect();
    Ok(SynthCorpus {
        records,
        features,
        offsets,
    })
}

impl SynthCorpus {
    pub fn feature_names(&self, i: usize) -> Vec<String> {
        self.features[i].iter().map(|&f| feature_name(f)).collect()
    }

    pub fn to_raw_corpus(&self) -> Result<RawCorpus, SynthError> {
        let features = (0..self.records.len())
            .map(|i| self.feature_names(i))
            .collect();
        Ok(RawCorpus::new(self.records.clone(), features)?)
    }

    pub fn manifest_csv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.sha256,
                r.label,
                format_day(r.timestamp),
                r.source.as_deref().unwrap_or("")
            ));
        }
        out
    }

    /// Writes `manifest.csv`, `features/<sha256>.txt` and the `synth.json`
    /// sidecar (normally the generating spec plus provenance).
    pub fn write_to<S: Serialize>(&self, dir: &Path, sidecar: &S) -> Result<(), SynthError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| SynthError::Io { path, source }
        };
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir).map_err(io(&feat_dir))?;
        (0..self.records.len()).into_par_iter().try_for_each(|i| {
            let path = feat_dir.join(format!("{}.txt", self.records[i].sha256));
            let mut body = String::new();
            for name in self.feature_names(i) {
                body.push_str(&name);
                body.push('\n');
            }
            fs::write(&path, body).map_err(io(&path))
        })?;
        let manifest = dir.join("manifest.csv");
        write_atomic(&manifest, self.manifest_csv().as_bytes()).map_err(io(&manifest))?;
        let json = serde_json::to_string_pretty(sidecar)? + "\n";
        let sidecar_path = dir.join("synth.json");
        write_atomic(&sidecar_path, json.as_bytes()).map_err(io(&sidecar_path))?;
        Ok(())
    }
}
