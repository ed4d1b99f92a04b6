use std::fs;
use std::path::{Path, PathBuf};

use hetrel::episodic::Checkpoint;
use hetrel::extract::{load_pair_cache, save_pair_cache, ExtractConfig, Extractor, PairCacheKey};
use hetrel::hetgraph::{load_corpus, save_corpus, GraphCorpus};
use hetrel::model::Variant;
use hetrel::scenarios::{
    build_scenario, evaluate_params, inversions, load_reports, metrics_csv, run_dir, run_seed, summarize,
    summary_csv, summary_table, transfer_corpus, PreparedScenario, RunConfig, RunReport, Scenario, ScenarioSpec,
};
use hetrel::synthgen::generate_corpus;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{AblateArgs, Command, ConfigArgs, DataArgs, EmbedArgs, EvalArgs, ExtractArgs, GenArgs, ReportArgs, TrainArgs};
use crate::config::{io_error, resolve, resolve_generator};
use crate::error::{CliError, CliResult, ErrorClass};

pub fn run(command: Command) -> CliResult<()> {
    let jobs = match &command {
        Command::Extract(a) => a.jobs,
        Command::Eval(a) => a.jobs,
        _ => 1,
    };
    if jobs == 0 {
        return Err(CliError::new(ErrorClass::Config, "--jobs must be at least 1"));
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    match command {
        Command::Gen(a) => gen(a),
        Command::Embed(a) => embed(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, body).map_err(|e| io_error(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("config serializes"));
}

fn gen(a: GenArgs) -> CliResult<()> {
    let cfg = resolve_generator(&a)?;
    if a.print_config {
        print_json(&cfg);
        return Ok(());
    }
    let generated = generate_corpus(&cfg)?;
    save_corpus(&generated.corpus, &a.out)?;
    info!(
        "wrote {} graphs ({}) to {}",
        generated.corpus.graphs().len(),
        generated.corpus.content_hash(),
        a.out.display()
    );
    Ok(())
}

fn extractor(corpus: &GraphCorpus, cfg: &RunConfig, cache_dir: Option<&Path>) -> CliResult<Extractor> {
    Ok(match cache_dir {
        Some(dir) => Extractor::with_cache_dir(corpus, cfg.extract.clone(), cfg.embed_seed, dir)?,
        None => Extractor::new(corpus, cfg.extract.clone(), cfg.embed_seed)?,
    })
}

fn embed(a: EmbedArgs) -> CliResult<()> {
    let cfg = resolve(&a.config, Variant::Full)?;
    if a.config.print_config {
        print_json(&cfg);
        return Ok(());
    }
    let corpus = load_corpus(&a.corpus)?;
    let ex = extractor(&corpus, &cfg, Some(&a.cache_dir))?;
    info!("{} embedding tables in {}", ex.graph_ids().count(), a.cache_dir.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult<()> {
    let mut cfg = resolve(&a.config, a.variant)?;
    if let Some(seed) = a.seed {
        cfg.extract.seed = seed;
    }
    if a.config.print_config {
        print_json(&cfg);
        return Ok(());
    }
    let corpus = load_corpus(&a.corpus)?;
    let ex = extractor(&corpus, &cfg, a.cache_dir.as_deref())?;
    let key = PairCacheKey::new(&corpus, &cfg.extract, cfg.embed_seed);
    if a.out.exists() && load_pair_cache(&a.out, &key, &ex)? {
        info!("{} is up to date", a.out.display());
        return Ok(());
    }
    let (mut total, mut missing) = (0, 0);
    for g in corpus.graphs() {
        for pairs in g.relations().values() {
            let sets = ex.pairs(g.id(), pairs)?;
            total += sets.len();
            missing += sets.iter().filter(|s| s.is_none()).count();
        }
    }
    if missing > 0 {
        warn!("{missing} of {total} labeled pairs have no path within l_max");
    }
    save_pair_cache(&a.out, &key, &ex)?;
    info!("extracted {total} pairs into {}", a.out.display());
    Ok(())
}

/// Corpus, scenario, seeds and variants of a run.
struct Plan {
    corpus: GraphCorpus,
    scenario: Scenario,
    seeds: Vec<u64>,
    variants: Vec<Variant>,
}

fn load_plan(data: &DataArgs, variant: Option<Variant>) -> CliResult<Plan> {
    let (corpus_path, test_path, scenario, seeds, variants) = match &data.spec {
        Some(path) => {
            let spec = ScenarioSpec::load(path)?;
            (spec.corpus, spec.test_corpus, spec.scenario, spec.seeds, spec.variants)
        }
        None => (
            data.corpus.clone().expect("clap requires --corpus without --spec"),
            data.test_corpus.clone(),
            Scenario::MultiHgMultiHet,
            vec![0],
            vec![Variant::Full],
        ),
    };
    let mut corpus = load_corpus(&corpus_path)?;
    if let Some(p) = test_path {
        corpus = transfer_corpus(&corpus, &load_corpus(&p)?)?;
    }
    Ok(Plan {
        corpus,
        scenario: data.scenario.unwrap_or(scenario),
        seeds: data.seeds.clone().map_or(seeds, |s| s.0),
        variants: variant.map_or(variants, |v| vec![v]),
    })
}

/// Extracted scenarios, one per distinct extraction config.
struct Preparer<'a> {
    plan: &'a Plan,
    data: &'a DataArgs,
    done: Vec<(ExtractConfig, PreparedScenario)>,
}

impl<'a> Preparer<'a> {
    fn new(plan: &'a Plan, data: &'a DataArgs) -> Self {
        Self {
            plan,
            data,
            done: Vec::new(),
        }
    }

    fn get(&mut self, cfg: &RunConfig) -> CliResult<&PreparedScenario> {
        if let Some(i) = self.done.iter().position(|(c, _)| c == &cfg.extract) {
            return Ok(&self.done[i].1);
        }
        let prep = match self.done.first() {
            Some((_, first)) if first.extractor.config().embed == cfg.extract.embed => first.reconfigured(&cfg.extract)?,
            _ => {
                let split = build_scenario(&self.plan.corpus, self.plan.scenario, self.data.split_seed)?;
                let ex = extractor(&self.plan.corpus, cfg, self.data.cache_dir.as_deref())?;
                if let Some(path) = &self.data.samples {
                    let key = PairCacheKey::new(&self.plan.corpus, &cfg.extract, cfg.embed_seed);
                    if !load_pair_cache(path, &key, &ex)? {
                        warn!("{} holds samples of another corpus or configuration; ignored", path.display());
                    }
                }
                PreparedScenario::from_extractor(ex, split)?
            }
        };
        if let Some(note) = &prep.split.note {
            info!("{note}");
        }
        self.done.push((cfg.extract.clone(), prep));
        Ok(&self.done.last().expect("just pushed").1)
    }
}

fn train_variants(
    plan: &Plan,
    data: &DataArgs,
    config: &ConfigArgs,
    variants: &[Variant],
    runs: &Path,
) -> CliResult<Vec<RunReport>> {
    let mut preparer = Preparer::new(plan, data);
    let mut reports = Vec::new();
    for &variant in variants {
        let cfg = resolve(config, variant)?;
        let prep = preparer.get(&cfg)?;
        for &seed in &plan.seeds {
            let run = run_seed(prep, &cfg, seed)?;
            let dir = hetrel::scenarios::write_run(runs, &run)?;
            write_file(
                &dir.join("config.json"),
                &(serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"),
            )?;
            info!(
                "{} {} seed {seed}: accuracy {:.4}",
                plan.scenario,
                variant,
                run.report.metrics.accuracy
            );
            reports.push(run.report);
        }
    }
    Ok(reports)
}

fn print_configs(config: &ConfigArgs, variants: &[Variant]) -> CliResult<()> {
    for &v in variants {
        print_json(&resolve(config, v)?);
    }
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    if a.config.print_config {
        return print_configs(&a.config, &[a.variant.unwrap_or(Variant::Full)]);
    }
    let plan = load_plan(&a.data, a.variant)?;
    train_variants(&plan, &a.data, &a.config, &plan.variants, &a.runs)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    scenario: Scenario,
    variant: Variant,
    seed: u64,
    checkpoint_episode: u64,
    n_rel: usize,
    metrics: hetrel::metrics::MetricRow,
    mean_test_loss: f64,
    ranking_skipped: usize,
    params_digest: String,
}

fn eval(a: EvalArgs) -> CliResult<()> {
    if a.config.print_config {
        return print_configs(&a.config, &[a.variant.unwrap_or(Variant::Full)]);
    }
    let plan = load_plan(&a.data, a.variant)?;
    let mut preparer = Preparer::new(&plan, &a.data);
    for &variant in &plan.variants {
        let cfg = resolve(&a.config, variant)?;
        let fp = hetrel::episodic::fingerprint(&cfg.model, &cfg.extract);
        let prep = preparer.get(&cfg)?;
        let outcomes: Vec<CliResult<()>> = plan
            .seeds
            .par_iter()
            .map(|&seed| {
                let dir = run_dir(&a.runs, plan.scenario, variant, seed);
                let path = dir.join("checkpoint.bin");
                if !path.exists() {
                    return Err(CliError::new(ErrorClass::MissingFile, format!("{}: no checkpoint", path.display())));
                }
                let ck = Checkpoint::load(&path).map_err(|e| CliError::from(e).context(&path))?;
                ck.check_fingerprint(&fp).map_err(|e| CliError::from(e).context(&path))?;
                let (pred, n_rel) = evaluate_params(prep, &cfg, seed, &ck.params)?;
                let report = EvalReport {
                    scenario: plan.scenario,
                    variant,
                    seed,
                    checkpoint_episode: ck.episode,
                    n_rel,
                    metrics: pred.metrics.clone(),
                    mean_test_loss: pred.mean_loss,
                    ranking_skipped: pred.ranking_skipped,
                    params_digest: ck.params.digest(),
                };
                write_file(
                    &dir.join("eval.json"),
                    &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
                )?;
                write_file(&dir.join("eval_metrics.csv"), &metrics_csv(&pred.metrics))?;
                info!("{} {variant} seed {seed}: accuracy {:.4}", plan.scenario, pred.metrics.accuracy);
                Ok(())
            })
            .collect();
        outcomes.into_iter().collect::<CliResult<Vec<()>>>()?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> CliResult<()> {
    if a.config.print_config {
        return print_configs(&a.config, &Variant::ALL);
    }
    let plan = load_plan(&a.data, None)?;
    let reports = train_variants(&plan, &a.data, &a.config, &Variant::ALL, &a.runs)?;
    let rows = summarize(&reports);
    write_file(&a.runs.join("ablation.csv"), &summary_csv(&rows))?;
    let text = table_with_inversions(&rows);
    write_file(&a.runs.join("ablation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn table_with_inversions(rows: &[hetrel::scenarios::SummaryRow]) -> String {
    let mut text = summary_table(rows);
    for inv in inversions(rows) {
        warn!("{inv}");
        text.push_str(&format!("{inv}\n"));
    }
    text
}

fn report(a: ReportArgs) -> CliResult<()> {
    if !a.runs.is_dir() {
        return Err(CliError::new(
            ErrorClass::MissingFile,
            format!("{}: no such runs directory", a.runs.display()),
        ));
    }
    let reports = load_reports(&a.runs)?;
    if reports.is_empty() {
        return Err(CliError::new(
            ErrorClass::Data,
            format!("{}: no run reports found", a.runs.display()),
        ));
    }
    let rows = summarize(&reports);
    let out: PathBuf = a.out.unwrap_or_else(|| a.runs.clone());
    write_file(&out.join("summary.csv"), &summary_csv(&rows))?;
    let text = table_with_inversions(&rows);
    write_file(&out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}
