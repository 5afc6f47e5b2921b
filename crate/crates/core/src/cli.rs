//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then the TOML file
//! given by `--config`, then command-line flags. The resolved [`RunConfig`]
//! is embedded in every JSON report, and its hash appears in every emitted
//! file. `--out` and `--threads` are not part of the config: they change where
//! and how fast a run executes, never what it produces.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::active::{run_active_loop, ActiveConfig, AverageMode};
use crate::corpus::{
    load_corpus, load_feature_files, load_manifest, save_corpus_with_comments, RawCorpus,
};
use crate::dataset::SparseDataset;
use crate::features::{rank_and_select, vectorize};
use crate::metrics::{
    aggregate, compute_metrics, confusion, pct, Averages, ConfusionMatrix, MetricRecord,
};
use crate::models::{predict, Family, Hyperparams};
use crate::synthgen::{generate, SynthSpec};
use crate::tuning::{default_grid, grid_search, CandidateScore, Grid};
use crate::util::{derive_seed, format_day, month_index, write_atomic};
use crate::windows::{make_batches, plan_monthly, plan_windows, MonthlyExport, PlanExport};

pub const TOOL: &str = "driftbench";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Column set of `windows.csv`.
pub const WINDOWS_CSV_HEADER: &str = "window,model,precision,recall,f1,val_f1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum MiScope {
    /// Rank features on the initial training months only.
    #[default]
    Train,
    /// Rank features on the whole corpus.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Defaults to `<out>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `<out>/features`.
    pub features_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Defaults to `<out>/corpus.txt`.
    pub corpus: Option<PathBuf>,
    pub top_n: usize,
    pub mi_scope: MiScope,
    /// Calendar months, counted from the first app, forming the MI slice
    /// when `mi_scope = "train"`.
    pub train_months: usize,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            top_n: 2919,
            mi_scope: MiScope::Train,
            train_months: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsConfig {
    /// Defaults to `<out>/dataset.sparse`.
    pub dataset: Option<PathBuf>,
    pub batch_size: usize,
    pub mal_per_batch: usize,
    pub train_batches: usize,
    pub families: Vec<Family>,
}

impl Default for WindowsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            batch_size: 5000,
            mal_per_batch: 300,
            train_batches: 6,
            families: Family::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    /// Defaults to `<out>/dataset.sparse`.
    pub dataset: Option<PathBuf>,
    pub initial_span: usize,
    pub budget: usize,
    pub family: Family,
    pub threshold: f64,
    pub retune: bool,
    pub averaging: AverageMode,
    pub val_fraction: f64,
}

impl Default for ActiveSection {
    fn default() -> Self {
        Self {
            dataset: None,
            initial_span: 12,
            budget: 50,
            family: Family::Svm,
            threshold: 0.5,
            retune: false,
            averaging: AverageMode::Uniform,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: Option<PathBuf>,
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub ingest: IngestConfig,
    pub features: FeaturesConfig,
    pub windows: WindowsConfig,
    pub active: ActiveSection,
    pub synth: SynthConfig,
    /// Grid candidates; a family without entries uses its default grid.
    pub grid: Vec<Hyperparams>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn grid_for(&self, family: Family) -> Result<Grid> {
        let entries: Vec<Hyperparams> = self
            .grid
            .iter()
            .filter(|h| h.family() == family)
            .cloned()
            .collect();
        let grid = if entries.is_empty() {
            default_grid(family)
        } else {
            Grid::new(entries)?
        };
        for hp in &grid.candidates {
            hp.validate()?;
        }
        Ok(grid)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "driftbench",
    version,
    about = "Temporal drift benchmarking of binary malware classifiers"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for outputs (and default inputs).
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Worker threads; 0 or unset uses all cores.
    #[arg(long, global = true, env = "DRIFTBENCH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a manifest and feature files into `corpus.txt`.
    Ingest {
        /// Manifest CSV [default: <out>/manifest.csv].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory of `<sha256>.txt` feature files [default: <out>/features].
        #[arg(long)]
        features_dir: Option<PathBuf>,
    },
    /// Rank features by mutual information; write `vocab.tsv` and `dataset.sparse`.
    Features {
        /// Corpus from `ingest` [default: <out>/corpus.txt].
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Number of features to keep.
        #[arg(long)]
        top_n: Option<usize>,
        /// Rows used to rank features.
        #[arg(long, value_enum)]
        mi_scope: Option<MiScope>,
        /// Months at the start of the timeline that form the ranking slice.
        #[arg(long)]
        train_months: Option<usize>,
    },
    /// Sliding-window evaluation; write `plan.json` and `windows.json`.
    Windows {
        /// Dataset from `features` [default: <out>/dataset.sparse].
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Apps per batch.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Malware apps per batch.
        #[arg(long)]
        mal_per_batch: Option<usize>,
        /// Training batches per window.
        #[arg(long)]
        train_batches: Option<usize>,
        /// Comma-separated families, e.g. `svm,rf`.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<Family>>,
    },
    /// Monthly active-learning loop; write `active-<family>-b<budget>.json`.
    Active {
        /// Dataset from `features` [default: <out>/dataset.sparse].
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Months in the initial training set.
        #[arg(long)]
        initial_span: Option<usize>,
        /// Labels revealed per month.
        #[arg(long)]
        budget: Option<usize>,
        /// Model family.
        #[arg(long)]
        family: Option<Family>,
        /// Decision threshold on the malware probability.
        #[arg(long)]
        threshold: Option<f64>,
        /// Re-run the grid search at every retrain.
        #[arg(long)]
        retune: bool,
    },
    /// Generate a synthetic corpus (`manifest.csv`, `features/`, `synth.json`).
    Synth {
        /// Generator spec (JSON).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Consolidate a run directory into `report.json` and CSV tables.
    Report {
        /// Run directory to summarise [default: --out].
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Features { .. } => "features",
            Command::Windows { .. } => "windows",
            Command::Active { .. } => "active",
            Command::Synth { .. } => "synth",
            Command::Report { .. } => "report",
        }
    }
}

/// Tool version, command, config hash and seed, stamped on every output.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn line(&self) -> String {
        format!(
            "{} {} command={} config={} seed={}",
            self.tool, self.version, self.command, self.config_hash, self.seed
        )
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    provenance: &'a Provenance,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    prov: Provenance,
}

impl Ctx {
    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let report = Report {
            provenance: &self.prov,
            config: &self.cfg,
            body,
        };
        let text = serde_json::to_string_pretty(&report)? + "\n";
        let path = self.out.join(name);
        write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    fn input(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn comments(&self) -> Vec<String> {
        vec![self.prov.line()]
    }
}

/// Failure classes mapped onto exit codes 1 (usage) and 2 (runtime).
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

/// Folds flag values into the config.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    match &cli.command {
        Command::Ingest {
            manifest,
            features_dir,
        } => {
            set(&mut cfg.ingest.manifest, &manifest.clone().map(Some));
            set(
                &mut cfg.ingest.features_dir,
                &features_dir.clone().map(Some),
            );
        }
        Command::Features {
            corpus,
            top_n,
            mi_scope,
            train_months,
        } => {
            set(&mut cfg.features.corpus, &corpus.clone().map(Some));
            set(&mut cfg.features.top_n, top_n);
            set(&mut cfg.features.mi_scope, mi_scope);
            set(&mut cfg.features.train_months, train_months);
        }
        Command::Windows {
            dataset,
            batch_size,
            mal_per_batch,
            train_batches,
            families,
        } => {
            set(&mut cfg.windows.dataset, &dataset.clone().map(Some));
            set(&mut cfg.windows.batch_size, batch_size);
            set(&mut cfg.windows.mal_per_batch, mal_per_batch);
            set(&mut cfg.windows.train_batches, train_batches);
            set(&mut cfg.windows.families, families);
        }
        Command::Active {
            dataset,
            initial_span,
            budget,
            family,
            threshold,
            retune,
        } => {
            set(&mut cfg.active.dataset, &dataset.clone().map(Some));
            set(&mut cfg.active.initial_span, initial_span);
            set(&mut cfg.active.budget, budget);
            set(&mut cfg.active.family, family);
            set(&mut cfg.active.threshold, threshold);
            cfg.active.retune |= *retune;
        }
        Command::Synth { spec } => set(&mut cfg.synth.spec, &spec.clone().map(Some)),
        Command::Report { .. } => {}
    }
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = resolve(cli).map_err(|e| Failure::Usage(e.context("config")))?;
    let command = cli.command.name();
    if let Command::Synth { .. } = cli.command {
        // the spec file carries its own seed unless --seed overrides it
        if cli.seed.is_none() {
            let spec = read_spec(&cfg).map_err(Failure::Usage)?;
            cfg.seed = spec.seed;
        }
    }
    let prov = Provenance {
        tool: TOOL,
        version: VERSION,
        command,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        prov,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(anyhow!(e).context("threads")))?;
    pool.install(|| match &cli.command {
        Command::Ingest { .. } => cmd_ingest(&ctx).context("ingest"),
        Command::Features { .. } => cmd_features(&ctx).context("features"),
        Command::Windows { .. } => cmd_windows(&ctx).context("windows"),
        Command::Active { .. } => cmd_active(&ctx).context("active"),
        Command::Synth { .. } => cmd_synth(&ctx).context("synth"),
        Command::Report { run_dir } => cmd_report(&ctx, run_dir.as_deref()).context("report"),
    })
    .map_err(Failure::Runtime)
}

fn read_spec(cfg: &RunConfig) -> Result<SynthSpec> {
    let path = cfg
        .synth
        .spec
        .as_ref()
        .ok_or_else(|| anyhow!("synth: --spec is required"))?;
    let text =
        fs::read_to_string(path).with_context(|| format!("synth: reading {}", path.display()))?;
    SynthSpec::from_json(&text).with_context(|| format!("synth: {}", path.display()))
}

#[derive(Serialize)]
struct IngestSummary {
    n_apps: usize,
    n_malware: usize,
    first_day: Option<String>,
    last_day: Option<String>,
    n_distinct_features: usize,
}

fn cmd_ingest(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.input(&ctx.cfg.ingest.manifest, "manifest.csv");
    let dir = ctx.input(&ctx.cfg.ingest.features_dir, "features");
    let records = load_manifest(&manifest).context("corpus")?;
    let corpus = load_feature_files(records, &dir).context("corpus")?;
    save_corpus_with_comments(&corpus, &ctx.comments(), &ctx.out.join("corpus.txt"))
        .context("corpus")?;
    let mut distinct: Vec<&str> = corpus
        .iter()
        .flat_map(|(_, f)| f.iter().map(String::as_str))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    let recs = corpus.records();
    ctx.write_json(
        "ingest.json",
        IngestSummary {
            n_apps: corpus.len(),
            n_malware: recs.iter().filter(|r| r.label == 1).count(),
            first_day: recs.first().map(|r| format_day(r.timestamp)),
            last_day: recs.last().map(|r| format_day(r.timestamp)),
            n_distinct_features: distinct.len(),
        },
    )
}

/// Rows of the first `months` calendar months, counted from the first app.
pub fn initial_months(corpus: &RawCorpus, months: usize) -> Vec<usize> {
    let Some(first) = corpus.records().first() else {
        return Vec::new();
    };
    let end = month_index(first.timestamp) + months as i64;
    (0..corpus.len())
        .filter(|&i| month_index(corpus.records()[i].timestamp) < end)
        .collect()
}

#[derive(Serialize)]
struct FeaturesSummary {
    mi_scope: MiScope,
    slice_rows: usize,
    slice_malware: usize,
    vocab_size: usize,
    n_apps: usize,
    empty_rows: usize,
}

fn cmd_features(ctx: &Ctx) -> Result<()> {
    let fc = &ctx.cfg.features;
    let path = ctx.input(&fc.corpus, "corpus.txt");
    let corpus = load_corpus(&path).context("corpus")?;
    let rows = match fc.mi_scope {
        MiScope::All => (0..corpus.len()).collect(),
        MiScope::Train => initial_months(&corpus, fc.train_months),
    };
    let vocab = rank_and_select(&corpus, &rows, fc.top_n).context("features")?;
    let ds = vectorize(&corpus, &vocab);
    vocab
        .save(&ctx.out.join("vocab.tsv"), &ctx.comments())
        .context("features")?;
    ds.save(&ctx.out.join("dataset.sparse"), &ctx.comments())
        .context("features")?;
    ctx.write_json(
        "features.json",
        FeaturesSummary {
            mi_scope: fc.mi_scope,
            slice_rows: rows.len(),
            slice_malware: rows
                .iter()
                .filter(|&&i| corpus.records()[i].label == 1)
                .count(),
            vocab_size: vocab.len(),
            n_apps: ds.len(),
            empty_rows: ds.rows.iter().filter(|r| r.is_empty()).count(),
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowResult {
    pub window: usize,
    pub model: Family,
    pub params: String,
    pub seed: u64,
    pub val_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricRecord,
    pub grid: Vec<CandidateScore>,
}

#[derive(Serialize)]
struct ModelAverages {
    model: Family,
    val_f1: f64,
    test: Averages,
}

#[derive(Serialize)]
struct WindowsBody {
    results: Vec<WindowResult>,
    averages: Vec<ModelAverages>,
}

/// Seed of family `family` in window `window`.
pub fn window_seed(master: u64, window: usize, family: Family) -> u64 {
    let slot = Family::ALL
        .iter()
        .position(|f| *f == family)
        .expect("known family");
    derive_seed(derive_seed(master, window as u64), slot as u64)
}

fn cmd_windows(ctx: &Ctx) -> Result<()> {
    let wc = &ctx.cfg.windows;
    let ds = SparseDataset::load(&ctx.input(&wc.dataset, "dataset.sparse")).context("dataset")?;
    let batches = make_batches(&ds, wc.batch_size, wc.mal_per_batch).context("windows")?;
    let plan = plan_windows(&batches, wc.train_batches).context("windows")?;
    ctx.write_json(
        "plan.json",
        PlanExport::new(&ds, wc.batch_size, wc.mal_per_batch, &batches, &plan),
    )?;

    let grids: Vec<Grid> = wc
        .families
        .iter()
        .map(|&f| ctx.cfg.grid_for(f))
        .collect::<Result<_>>()
        .context("models")?;
    let results: Vec<Vec<WindowResult>> = plan
        .windows
        .par_iter()
        .map(|w| {
            let train_rows = w.train_rows(&batches);
            let val_rows = &batches[w.val_batch].row_ids;
            let test_rows = &batches[w.test_batch].row_ids;
            let (train, val, test) = (ds.view(&train_rows), ds.view(val_rows), ds.view(test_rows));
            grids
                .iter()
                .map(|grid| {
                    let seed = window_seed(ctx.cfg.seed, w.index, grid.family);
                    let tuned = grid_search(grid, &train, &val, seed).with_context(|| {
                        format!("tuning: window {} model {}", w.index, grid.family)
                    })?;
                    let scores = tuned.best.score(&test).context("models")?;
                    let cm = confusion(&test.labels, &predict(&scores, 0.5)?)?;
                    Ok(WindowResult {
                        window: w.index,
                        model: grid.family,
                        params: tuned.best.hyperparams.describe(),
                        seed,
                        val_f1: tuned.best_f1(),
                        n_train: train.len(),
                        n_test: test.len(),
                        metrics: compute_metrics(&cm).context("metrics")?,
                        confusion: cm,
                        grid: tuned.table,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let results: Vec<WindowResult> = results.into_iter().flatten().collect();
    let averages = wc
        .families
        .iter()
        .map(|&f| {
            let mine: Vec<&WindowResult> = results.iter().filter(|r| r.model == f).collect();
            let records: Vec<MetricRecord> = mine.iter().map(|r| r.metrics.clone()).collect();
            Ok(ModelAverages {
                model: f,
                val_f1: mine.iter().map(|r| r.val_f1).sum::<f64>() / mine.len() as f64,
                test: aggregate(&records).context("metrics")?,
            })
        })
        .collect::<Result<_>>()?;
    ctx.write_json("windows.json", WindowsBody { results, averages })
}

/// File name of an active-learning trace.
pub fn active_file_name(family: Family, budget: usize) -> String {
    format!("active-{family}-b{budget}.json")
}

fn cmd_active(ctx: &Ctx) -> Result<()> {
    let ac = &ctx.cfg.active;
    let ds = SparseDataset::load(&ctx.input(&ac.dataset, "dataset.sparse")).context("dataset")?;
    let split = plan_monthly(&ds, ac.initial_span).context("windows")?;
    let grid = ctx.cfg.grid_for(ac.family).context("models")?;
    let mut config = ActiveConfig::new(grid, ac.budget, ctx.cfg.seed);
    config.threshold = ac.threshold;
    config.retune = ac.retune;
    config.averaging = ac.averaging;
    config.val_fraction = ac.val_fraction;
    let trace = run_active_loop(&config, &split, &ds).context("active")?;

    #[derive(Serialize)]
    struct Body {
        split: MonthlyExport,
        trace: crate::active::ActiveTrace,
    }
    let split = MonthlyExport::new(&ds, ac.initial_span, &split);
    ctx.write_json(
        &active_file_name(ac.family, ac.budget),
        Body { split, trace },
    )
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let mut spec = read_spec(&ctx.cfg)?;
    spec.seed = ctx.cfg.seed;
    let corpus = generate(&spec).context("synthgen")?;

    #[derive(Serialize)]
    struct Body<'a> {
        spec: &'a SynthSpec,
        n_malware: usize,
    }
    let sidecar = Report {
        provenance: &ctx.prov,
        config: &ctx.cfg,
        body: Body {
            spec: &spec,
            n_malware: spec.n_malware(),
        },
    };
    corpus.write_to(&ctx.out, &sidecar).context("synthgen")
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn num(v: &Value, path: &[&str]) -> Result<f64> {
    let mut at = v;
    for key in path {
        at = at
            .get(key)
            .ok_or_else(|| anyhow!("missing field {}", path.join(".")))?;
    }
    at.as_f64()
        .ok_or_else(|| anyhow!("field {} is not a number", path.join(".")))
}

fn text<'a>(v: &'a Value, key: &str) -> Result<&'a str> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow!("missing string field {key}"))
}

#[derive(Serialize)]
struct SourceRef {
    file: String,
    provenance: Value,
}

#[derive(Serialize)]
struct WindowModelSummary {
    model: String,
    windows: usize,
    precision: String,
    recall: String,
    f1: String,
    val_f1: String,
}

#[derive(Serialize)]
struct ActiveSummary {
    family: String,
    budget: u64,
    months: usize,
    fnr: String,
    fpr: String,
    f1: String,
}

#[derive(Serialize)]
struct ReportBody {
    sources: Vec<SourceRef>,
    windows: Vec<WindowModelSummary>,
    active: Vec<ActiveSummary>,
}

fn cmd_report(ctx: &Ctx, run_dir: Option<&Path>) -> Result<()> {
    let dir = run_dir.unwrap_or(&ctx.out);
    let header = format!("# {}", ctx.prov.line());
    let mut sources = Vec::new();
    let mut windows = Vec::new();
    let mut active = Vec::new();

    let wpath = dir.join("windows.json");
    if wpath.is_file() {
        let doc = read_json(&wpath)?;
        sources.push(SourceRef {
            file: "windows.json".into(),
            provenance: doc["provenance"].clone(),
        });
        let results = doc["results"]
            .as_array()
            .ok_or_else(|| anyhow!("windows.json: missing results"))?;
        let mut csv = format!("{header}\n{WINDOWS_CSV_HEADER}\n");
        let mut models: Vec<String> = Vec::new();
        let mut table: Vec<(u64, String, f64)> = Vec::new();
        for r in results {
            let (w, model) = (
                r["window"]
                    .as_u64()
                    .ok_or_else(|| anyhow!("windows.json: bad window"))?,
                text(r, "model")?,
            );
            let (p, rc, f1, vf1) = (
                num(r, &["metrics", "precision"])?,
                num(r, &["metrics", "recall"])?,
                num(r, &["metrics", "f1"])?,
                num(r, &["val_f1"])?,
            );
            csv.push_str(&format!("{w},{model},{p:.6},{rc:.6},{f1:.6},{vf1:.6}\n"));
            if !models.iter().any(|m| m == model) {
                models.push(model.to_string());
            }
            table.push((w, model.to_string(), f1));
        }
        ctx.write_text("windows.csv", &csv)?;

        let mut plot = format!("{header}\nwindow,{}\n", models.join(","));
        let mut ws: Vec<u64> = table.iter().map(|t| t.0).collect();
        ws.dedup();
        for w in ws {
            let cells: Vec<String> = models
                .iter()
                .map(|m| {
                    table
                        .iter()
                        .find(|t| t.0 == w && &t.1 == m)
                        .map(|t| format!("{:.6}", t.2))
                        .unwrap_or_default()
                })
                .collect();
            plot.push_str(&format!("{w},{}\n", cells.join(",")));
        }
        ctx.write_text("plot.csv", &plot)?;

        for a in doc["averages"].as_array().into_iter().flatten() {
            windows.push(WindowModelSummary {
                model: text(a, "model")?.to_string(),
                windows: num(a, &["test", "periods"])? as usize,
                precision: pct(num(a, &["test", "precision"])?),
                recall: pct(num(a, &["test", "recall"])?),
                f1: pct(num(a, &["test", "f1"])?),
                val_f1: pct(num(a, &["val_f1"])?),
            });
        }
    }

    let mut traces: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("active-") && name.ends_with(".json")
        })
        .collect();
    traces.sort();
    if !traces.is_empty() {
        let mut csv =
            format!("{header}\nfamily,budget,month,n_rows,train_size,selected,fnr,fpr,f1\n");
        for path in &traces {
            let doc = read_json(path)?;
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            sources.push(SourceRef {
                file: name,
                provenance: doc["provenance"].clone(),
            });
            let trace = &doc["trace"];
            let family = text(trace, "family")?.to_string();
            let budget = num(trace, &["budget"])? as u64;
            let months = trace["months"]
                .as_array()
                .ok_or_else(|| anyhow!("trace without months"))?;
            for m in months {
                csv.push_str(&format!(
                    "{family},{budget},{},{},{},{},{:.6},{:.6},{:.6}\n",
                    text(m, "month")?,
                    num(m, &["n_rows"])?,
                    num(m, &["train_size"])?,
                    m["selected"].as_array().map_or(0, Vec::len),
                    num(m, &["metrics", "fnr"])?,
                    num(m, &["metrics", "fpr"])?,
                    num(m, &["metrics", "f1"])?,
                ));
            }
            active.push(ActiveSummary {
                family,
                budget,
                months: months.len(),
                fnr: text(&trace["table"], "fnr")?.to_string(),
                fpr: text(&trace["table"], "fpr")?.to_string(),
                f1: text(&trace["table"], "f1")?.to_string(),
            });
        }
        ctx.write_text("active.csv", &csv)?;
    }
    if sources.is_empty() {
        bail!("{} holds no windows.json or active-*.json", dir.display());
    }
    ctx.write_json(
        "report.json",
        ReportBody {
            sources,
            windows,
            active,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n[windows]\nbatch_size = 100\nfamilies = [\"svm\", \"nb\"]\n[[grid]]\nfamily = \"svm\"\nc = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.windows.batch_size, 100);
        assert_eq!(cfg.windows.mal_per_batch, 300);
        assert_eq!(cfg.windows.families, vec![Family::Svm, Family::Nb]);
        let g = cfg.grid_for(Family::Svm).unwrap();
        assert_eq!(g.candidates.len(), 1);
        assert_eq!(cfg.grid_for(Family::Knn).unwrap().candidates.len(), 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[windows]\nbatchsize = 3\n").is_err());
    }

    #[test]
    fn hash_ignores_nothing_but_tracks_values() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.active.budget = 51;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["driftbench", "frobnicate"]), 1);
        assert_eq!(run(["driftbench", "windows", "--families", "svm,xgb"]), 1);
        assert_eq!(run(["driftbench", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["driftbench", "--out", out, "features"]), 2);
    }
}
