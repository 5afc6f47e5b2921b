//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use driftbench::cli::initial_months;
use driftbench::features::{rank_and_select, vectorize};
use driftbench::synthgen::{generate, DriftEvent, SynthSpec};
use driftbench::SparseDataset;

pub fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// One drift event halfway through a four-year span.
pub fn drift_spec(seed: u64, n_apps: usize) -> SynthSpec {
    SynthSpec {
        seed,
        n_apps,
        drift: vec![DriftEvent {
            day: 730,
            rotation: 8,
        }],
        ..SynthSpec::default()
    }
}

/// Synthetic corpus through the real feature pipeline: MI ranked on the
/// first twelve months, every seen feature kept.
pub fn synth_dataset(spec: &SynthSpec) -> SparseDataset {
    let raw = generate(spec).unwrap().to_raw_corpus().unwrap();
    let rows = initial_months(&raw, 12);
    let vocab = rank_and_select(&raw, &rows, spec.vocab_size).unwrap();
    vectorize(&raw, &vocab)
}

/// Brute-force k-NN: full sort by (Hamming distance, ordinal).
pub fn knn_brute(train: &[Vec<u32>], labels: &[u8], query: &[u32], k: usize) -> f64 {
    let mut d: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let sym = t.iter().filter(|x| !query.contains(x)).count()
                + query.iter().filter(|x| !t.contains(x)).count();
            (sym, i)
        })
        .collect();
    d.sort();
    let k = k.min(train.len());
    d[..k].iter().filter(|&&(_, i)| labels[i] == 1).count() as f64 / k as f64
}

/// Runs the CLI in-process and asserts the exit code.
pub fn cli_ok(args: &[&str]) {
    let mut full = vec!["driftbench"];
    full.extend_from_slice(args);
    let code = driftbench::cli::run(full.clone());
    assert_eq!(code, 0, "driftbench {:?} exited with {code}", &full[1..]);
}

/// All regular files below `dir`, relative, sorted.
pub fn list_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
