//! Experiment scenarios: how relations and graphs are split into training,
//! validation and test phases, the resolved run configuration, and the
//! per-seed train/test pipeline with its on-disk results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedConfig;
use crate::episodic::{
    fingerprint, log_csv, meta_test, meta_train, stream_seed, Checkpoint, EpisodicError, LogRow, PredictionReport,
    RankingConfig, RankingSetup, TrainConfig,
};
use crate::extract::{build_episodes, EpisodeTask, ExtractConfig, ExtractError, Extractor, SampleBank, StructureMode};
use crate::hetgraph::{CorpusSplit, GraphCorpus, GraphError, HeterogeneousGraph};
use crate::metrics::{mean_std, MetricRow, REPORT_COLUMNS};
use crate::model::{ModelConfig, ModelParams, Variant};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario {scenario} requirement violated: {detail}")]
    Requirement { scenario: Scenario, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Episodic(#[from] EpisodicError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Schema {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Relations of one graph split across phases.
    SingleHg,
    /// Several graphs sharing one type vocabulary.
    MultiHgSingleHet,
    /// Training and test graphs with disjoint type vocabularies.
    MultiHgMultiHet,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::SingleHg, Scenario::MultiHgSingleHet, Scenario::MultiHgMultiHet];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SingleHg => "single-hg",
            Scenario::MultiHgSingleHet => "multi-hg-single-het",
            Scenario::MultiHgMultiHet => "multi-hg-multi-het",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected single-hg, multi-hg-single-het or multi-hg-multi-het)"))
    }
}

/// Graph id with the relation names it contributes to a phase.
pub type PhaseEntry = (String, Vec<String>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub scenario: Scenario,
    pub train: Vec<PhaseEntry>,
    pub val: Vec<PhaseEntry>,
    pub test: Vec<PhaseEntry>,
    /// How relation counts were scaled, when they were.
    pub note: Option<String>,
}

impl ScenarioSplit {
    fn names(phase: &[PhaseEntry]) -> BTreeSet<String> {
        phase.iter().flat_map(|(_, r)| r.iter().cloned()).collect()
    }

    pub fn base_relations(&self) -> BTreeSet<String> {
        Self::names(&self.train)
    }

    pub fn novel_relations(&self) -> BTreeSet<String> {
        Self::names(&self.test)
    }
}

/// Train/val/test relation counts for one graph with `n` relations: 5/3/rest
/// from ten relations up, otherwise half/three tenths/rest with each phase
/// keeping at least one.
pub fn single_hg_counts(n: usize) -> Option<(usize, usize, usize)> {
    if n >= 10 {
        return Some((5, 3, n - 8));
    }
    if n < 3 {
        return None;
    }
    let train = (n / 2).max(1);
    let val = (n * 3 / 10).max(1);
    Some((train, val, n - train - val))
}

fn vocabulary(g: &HeterogeneousGraph) -> BTreeSet<&str> {
    g.object_types().iter().map(String::as_str).collect()
}

/// Phase assignment for `which`. Deterministic under `seed`.
pub fn build_scenario(corpus: &GraphCorpus, which: Scenario, seed: u64) -> Result<ScenarioSplit, ScenarioError> {
    let fail = |detail: String| ScenarioError::Requirement { scenario: which, detail };
    match which {
        Scenario::SingleHg => {
            let g = corpus
                .graphs()
                .iter()
                .fold(None::<&HeterogeneousGraph>, |best, g| match best {
                    Some(b) if b.relations().len() >= g.relations().len() => Some(b),
                    _ => Some(g),
                })
                .ok_or_else(|| fail("corpus has no graphs".into()))?;
            let n = g.relations().len();
            let (tr, va, _) = single_hg_counts(n)
                .ok_or_else(|| fail(format!("graph {} has {n} relations, at least 3 are needed", g.id())))?;
            let mut names: Vec<String> = g.relations().keys().cloned().collect();
            names.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(seed, "single-hg-split")));
            let test = names.split_off(tr + va);
            let val = names.split_off(tr);
            let note = (n < 10).then(|| {
                format!(
                    "graph {} has {n} relations: split {}/{}/{} instead of 5/3/rest",
                    g.id(),
                    names.len(),
                    val.len(),
                    test.len()
                )
            });
            let entry = |mut r: Vec<String>| {
                r.sort();
                vec![(g.id().to_string(), r)]
            };
            Ok(ScenarioSplit {
                scenario: which,
                train: entry(names),
                val: entry(val),
                test: entry(test),
                note,
            })
        }
        Scenario::MultiHgSingleHet | Scenario::MultiHgMultiHet => {
            let (train, val, test) = (corpus.train_graphs(), corpus.val_graphs(), corpus.test_graphs());
            if train.is_empty() || test.is_empty() {
                return Err(fail("the corpus split needs at least one training and one test graph".into()));
            }
            if which == Scenario::MultiHgSingleHet {
                let reference = vocabulary(train[0]);
                let odd: Vec<&str> = train
                    .iter()
                    .chain(&val)
                    .chain(&test)
                    .filter(|g| vocabulary(g) != reference)
                    .map(|g| g.id())
                    .collect();
                if !odd.is_empty() {
                    return Err(fail(format!(
                        "graphs {} use a different type vocabulary than {}",
                        odd.join(", "),
                        train[0].id()
                    )));
                }
            } else {
                let seen: BTreeSet<&str> = train.iter().chain(&val).flat_map(|g| vocabulary(g)).collect();
                let clashes: Vec<String> = test
                    .iter()
                    .filter_map(|g| {
                        let shared: Vec<&str> = vocabulary(g).intersection(&seen).copied().collect();
                        (!shared.is_empty()).then(|| format!("{} shares {}", g.id(), shared.join(", ")))
                    })
                    .collect();
                if !clashes.is_empty() {
                    return Err(fail(format!(
                        "test graphs reuse training object types: {}",
                        clashes.join("; ")
                    )));
                }
            }
            Ok(ScenarioSplit {
                scenario: which,
                train: SampleBank::all_relations(&train),
                val: SampleBank::all_relations(&val),
                test: SampleBank::all_relations(&test),
                note: None,
            })
        }
    }
}

/// Corpus whose training and validation graphs come from `train` and whose
/// test graphs are every graph of `test`.
pub fn transfer_corpus(train: &GraphCorpus, test: &GraphCorpus) -> Result<GraphCorpus, ScenarioError> {
    let mut graphs: Vec<HeterogeneousGraph> = train
        .train_graphs()
        .into_iter()
        .chain(train.val_graphs())
        .cloned()
        .collect();
    graphs.extend(test.graphs().iter().cloned());
    let split = CorpusSplit {
        train: train.split().train.clone(),
        val: train.split().val.clone(),
        test: test.graphs().iter().map(|g| g.id().to_string()).collect(),
    };
    Ok(GraphCorpus::new(graphs, split)?)
}

/// Every setting of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub extract: ExtractConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ranking: RankingConfig,
    pub embed_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            extract: ExtractConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ranking: RankingConfig::default(),
            embed_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Standard,
    /// Sized for one laptop core.
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Preset::Standard),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!("unknown preset `{s}` (expected standard or desk)")),
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Standard => Self::default(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn desk() -> Self {
        let d = 16;
        Self {
            extract: ExtractConfig {
                m: 2,
                embed: EmbedConfig {
                    dim: 16,
                    walks_per_object: 20,
                    ..EmbedConfig::default()
                },
                ..ExtractConfig::default()
            },
            model: ModelConfig {
                d_h: d,
                d_att: d,
                d_sage: d,
                d_gv: d,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                val_episodes: 30,
                val_every: 100,
                test_episodes: 200,
                ..TrainConfig::default()
            },
            ranking: RankingConfig {
                episodes: 5,
                ..RankingConfig::default()
            },
            embed_seed: 0,
        }
    }

    /// Wiring for `v`: the model variant plus the matching structure mode.
    pub fn for_variant(&self, v: Variant) -> Self {
        let mut out = self.clone();
        out.model.variant = v;
        out.extract.mode = if v == Variant::TwoHop {
            StructureMode::TwoHop
        } else {
            StructureMode::TopPaths
        };
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        self.extract.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.n_slots != self.extract.n_type_max {
            return Err(format!(
                "model n_slots ({}) must equal extract n_type_max ({})",
                self.model.n_slots, self.extract.n_type_max
            ));
        }
        if (self.model.variant == Variant::TwoHop) != (self.extract.mode == StructureMode::TwoHop) {
            return Err("variant 2hop and structure mode two-hop must be used together".into());
        }
        Ok(())
    }
}

/// Extracted samples of every phase of a split.
pub struct PreparedScenario {
    pub split: ScenarioSplit,
    pub extractor: Extractor,
    pub train: SampleBank,
    pub val: SampleBank,
    pub test: SampleBank,
}

impl PreparedScenario {
    pub fn new(
        corpus: &GraphCorpus,
        split: ScenarioSplit,
        extract: &ExtractConfig,
        embed_seed: u64,
    ) -> Result<Self, ScenarioError> {
        Self::from_extractor(Extractor::new(corpus, extract.clone(), embed_seed)?, split)
    }

    pub fn from_extractor(extractor: Extractor, split: ScenarioSplit) -> Result<Self, ScenarioError> {
        let train = SampleBank::build(&extractor, &split.train)?;
        let val = SampleBank::build(&extractor, &split.val)?;
        let test = SampleBank::build(&extractor, &split.test)?;
        for s in train.skipped.iter().chain(&val.skipped).chain(&test.skipped) {
            log::warn!("no path within l_max for {} ({}, {}) of {}", s.relation, s.u, s.v, s.graph_id);
        }
        Ok(Self {
            split,
            extractor,
            train,
            val,
            test,
        })
    }

    /// Same split and embeddings under another extraction config.
    pub fn reconfigured(&self, extract: &ExtractConfig) -> Result<Self, ScenarioError> {
        Self::from_extractor(self.extractor.reconfigured(extract.clone())?, self.split.clone())
    }

    pub fn skipped(&self) -> usize {
        self.train.skipped.len() + self.val.skipped.len() + self.test.skipped.len()
    }
}

/// Relations per episode for a phase: the configured count, capped by the
/// most any graph of the phase can supply.
pub fn phase_n_rel(bank: &SampleBank, n_rel: usize, need: usize) -> usize {
    let most = bank
        .graphs
        .iter()
        .map(|g| g.relations.iter().filter(|r| r.samples.len() >= need).count())
        .max()
        .unwrap_or(0);
    n_rel.min(most)
}

fn phase_episodes(
    bank: &SampleBank,
    phase: &str,
    count: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<EpisodeTask>, usize), ScenarioError> {
    let need = cfg.k_spt + cfg.k_qry;
    let n_rel = phase_n_rel(bank, cfg.n_rel, need);
    if n_rel < 2 {
        return Err(ScenarioError::InsufficientData(format!(
            "{phase} phase offers {n_rel} relation(s) with {need} usable pairs; episodes need at least 2"
        )));
    }
    if n_rel < cfg.n_rel {
        log::warn!("{phase} episodes use {n_rel} relations instead of {}", cfg.n_rel);
    }
    let eps = build_episodes(bank, count, n_rel, cfg.k_spt, cfg.k_qry, stream_seed(seed, phase))?;
    Ok((eps, n_rel))
}

/// Machine-readable summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub variant: Variant,
    pub seed: u64,
    pub k_spt: usize,
    pub k_qry: usize,
    /// Relations per episode in the train, val and test phases.
    pub n_rel: [usize; 3],
    pub train_episodes: usize,
    pub metrics: MetricRow,
    pub best_val_accuracy: Option<f64>,
    pub best_episode: u64,
    pub stopped_early: bool,
    pub mean_test_loss: f64,
    pub skipped_samples: usize,
    pub ranking_skipped: usize,
    pub fingerprint: String,
    pub params_digest: String,
    pub note: Option<String>,
}

pub struct RunArtifacts {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub predictions: PredictionReport,
}

/// Meta-trains on the training phase, keeps the best validation checkpoint
/// and meta-tests it.
pub fn run_seed(prep: &PreparedScenario, cfg: &RunConfig, seed: u64) -> Result<RunArtifacts, ScenarioError> {
    cfg.validate().map_err(ScenarioError::Config)?;
    if prep.extractor.config() != &cfg.extract {
        return Err(ScenarioError::Config(
            "prepared samples were extracted under a different configuration".into(),
        ));
    }
    let t = &cfg.train;
    let (train, n_train) = phase_episodes(&prep.train, "train", t.episodes, t, seed)?;
    let (val, n_val) = if prep.split.val.is_empty() || t.val_episodes == 0 {
        (Vec::new(), 0)
    } else {
        phase_episodes(&prep.val, "val", t.val_episodes, t, seed)?
    };
    let fp = fingerprint(&cfg.model, &cfg.extract);
    let outcome = meta_train(&train, &val, &cfg.model, t, seed, &fp)?;
    let (predictions, n_test) = evaluate_params(prep, cfg, seed, &outcome.best.params)?;
    let report = RunReport {
        scenario: prep.split.scenario,
        variant: cfg.model.variant,
        seed,
        k_spt: t.k_spt,
        k_qry: t.k_qry,
        n_rel: [n_train, n_val, n_test],
        train_episodes: train.len(),
        metrics: predictions.metrics.clone(),
        best_val_accuracy: outcome.best_val_accuracy,
        best_episode: outcome.best.episode,
        stopped_early: outcome.stopped_early,
        mean_test_loss: predictions.mean_loss,
        skipped_samples: prep.skipped(),
        ranking_skipped: predictions.ranking_skipped,
        fingerprint: fp,
        params_digest: outcome.best.params.digest(),
        note: prep.split.note.clone(),
    };
    Ok(RunArtifacts {
        report,
        checkpoint: outcome.best,
        log: outcome.log,
        predictions,
    })
}

/// Meta-tests `params` on the run's test episodes and ranking queries.
pub fn evaluate_params(
    prep: &PreparedScenario,
    cfg: &RunConfig,
    seed: u64,
    params: &ModelParams,
) -> Result<(PredictionReport, usize), ScenarioError> {
    let (test, n_test) = phase_episodes(&prep.test, "test", cfg.train.test_episodes, &cfg.train, seed)?;
    let ranking = (cfg.ranking.episodes > 0).then(|| RankingSetup {
        extractor: &prep.extractor,
        cfg: cfg.ranking.clone(),
        novel_relations: prep.split.novel_relations(),
        seed: stream_seed(seed, "ranking"),
    });
    Ok((meta_test(params, &cfg.model, &test, ranking.as_ref())?, n_test))
}

pub fn run_dir(root: &Path, scenario: Scenario, variant: Variant, seed: u64) -> PathBuf {
    root.join(scenario.name()).join(variant.name()).join(seed.to_string())
}

fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// One-row CSV with the report columns.
pub fn metrics_csv(m: &MetricRow) -> String {
    let cells: Vec<String> = m.values().into_iter().map(format_cell).collect();
    format!("{}\n{}\n", REPORT_COLUMNS.join(","), cells.join(","))
}

/// Writes `checkpoint.bin`, `train_log.csv`, `report.json` and
/// `metrics.csv` under `runs/<scenario>/<variant>/<seed>/`.
pub fn write_run(root: &Path, run: &RunArtifacts) -> Result<PathBuf, ScenarioError> {
    let r = &run.report;
    let dir = run_dir(root, r.scenario, r.variant, r.seed);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let ck = dir.join("checkpoint.bin");
    run.checkpoint.save(&ck).map_err(EpisodicError::from)?;
    let files = [
        ("train_log.csv", log_csv(&run.log)),
        (
            "report.json",
            serde_json::to_string_pretty(r).expect("report serializes") + "\n",
        ),
        ("metrics.csv", metrics_csv(&r.metrics)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(dir)
}

/// Every `report.json` below `root`, in path order.
pub fn load_reports(root: &Path) -> Result<Vec<RunReport>, ScenarioError> {
    let mut paths = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                paths.push(path);
            }
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            serde_json::from_str(&text).map_err(|source| ScenarioError::Schema { path: p, source })
        })
        .collect()
}

/// Mean and standard deviation of each report column over the runs of one
/// scenario, variant and shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub variant: Variant,
    pub k_spt: usize,
    pub runs: usize,
    pub mean: [Option<f64>; 8],
    pub std: [Option<f64>; 8],
}

impl SummaryRow {
    pub fn accuracy(&self) -> f64 {
        self.mean[0].expect("accuracy is always present")
    }
}

pub fn summarize(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Scenario, usize, Variant), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.scenario, r.k_spt, r.variant)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((scenario, k_spt, variant), runs)| {
            let mut mean = [None; 8];
            let mut std = [None; 8];
            for c in 0..8 {
                let xs: Vec<f64> = runs.iter().filter_map(|r| r.metrics.values()[c]).collect();
                if !xs.is_empty() {
                    let (m, s) = mean_std(&xs);
                    mean[c] = Some(m);
                    std[c] = Some(s);
                }
            }
            SummaryRow {
                scenario,
                variant,
                k_spt,
                runs: runs.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// A variant whose mean accuracy beats the full model in the same setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub scenario: Scenario,
    pub k_spt: usize,
    pub variant: Variant,
    pub full_accuracy: f64,
    pub variant_accuracy: f64,
}

impl fmt::Display for Inversion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "inversion: {} K_spt={} {} {:.4} > full {:.4}",
            self.scenario, self.k_spt, self.variant, self.variant_accuracy, self.full_accuracy
        )
    }
}

pub fn inversions(rows: &[SummaryRow]) -> Vec<Inversion> {
    let mut out = Vec::new();
    for full in rows.iter().filter(|r| r.variant == Variant::Full) {
        for r in rows
            .iter()
            .filter(|r| r.variant != Variant::Full && r.scenario == full.scenario && r.k_spt == full.k_spt)
        {
            if r.accuracy() > full.accuracy() {
                out.push(Inversion {
                    scenario: r.scenario,
                    k_spt: r.k_spt,
                    variant: r.variant,
                    full_accuracy: full.accuracy(),
                    variant_accuracy: r.accuracy(),
                });
            }
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut header = vec!["scenario".to_string(), "variant".into(), "k_spt".into(), "runs".into()];
    for c in REPORT_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    let mut out = header.join(",") + "\n";
    for r in rows {
        let mut cells = vec![r.scenario.to_string(), r.variant.to_string(), r.k_spt.to_string(), r.runs.to_string()];
        for c in 0..8 {
            cells.push(format_cell(r.mean[c]));
            cells.push(format_cell(r.std[c]));
        }
        out += &(cells.join(",") + "\n");
    }
    out
}

/// Fixed-width table, one row per scenario/variant/shot count.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = format!("{:<20} {:<9} {:>5} {:>4}", "scenario", "variant", "K", "runs");
    for c in REPORT_COLUMNS {
        out += &format!(" {c:>15}");
    }
    out.push('\n');
    for r in rows {
        out += &format!("{:<20} {:<9} {:>5} {:>4}", r.scenario.name(), r.variant.name(), r.k_spt, r.runs);
        for c in 0..8 {
            let cell = match (r.mean[c], r.std[c]) {
                (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
                _ => "-".into(),
            };
            out += &format!(" {cell:>15}");
        }
        out.push('\n');
    }
    out
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Full]
}

/// Scenario file: which corpus (or corpora) and which scenario to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub corpus: PathBuf,
    /// Separate corpus for meta-testing; its graphs replace the test split.
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
}

impl ScenarioSpec {
    /// Reads a spec; relative corpus paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut spec: ScenarioSpec = serde_json::from_str(&text).map_err(|source| ScenarioError::Schema {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        spec.corpus = base.join(&spec.corpus);
        spec.test_corpus = spec.test_corpus.map(|p| base.join(p));
        Ok(spec)
    }
}
