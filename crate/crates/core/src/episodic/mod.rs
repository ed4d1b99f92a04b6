//! Episodic meta-training and meta-testing.
//!
//! Training is prototypical: each episode builds relation prototypes from
//! its support pairs, scores the query pairs against them and takes one
//! optimizer step on the query loss. Testing runs the same forward pass with
//! frozen parameters.

mod checkpoint;
mod optim;

use std::collections::{BTreeMap, BTreeSet};

use autodiff::{AutodiffError, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use optim::{Optimizer, OptimizerKind};

use crate::extract::{EpisodeTask, ExtractConfig, ExtractError, Extractor, SubgraphSet};
use crate::hetgraph::ObjectId;
use crate::hyperproto::{classify, episode_loss, pool_groups, probability_rows, HyperBatch};
use crate::metrics::{accuracy, macro_f1, ranking_summary, CloseCounting, MetricError, MetricRow, RankedList};
use crate::model::{ModelConfig, ModelError, ModelParams, ParamBinder};
use crate::twoview::{embed_subgraphs, SubgraphBatch};

#[derive(Debug, Error)]
pub enum EpisodicError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite value in episode {episode} (graph {graph}, relations {relations}): {detail}")]
    NonFinite {
        episode: usize,
        graph: String,
        relations: String,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<AutodiffError> for EpisodicError {
    fn from(e: AutodiffError) -> Self {
        EpisodicError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    /// Training episodes between validation passes.
    pub val_every: usize,
    /// Validation passes without improvement before stopping; 0 disables.
    pub patience: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub n_rel: usize,
    pub k_spt: usize,
    pub k_qry: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            val_episodes: 200,
            test_episodes: 500,
            val_every: 250,
            patience: 0,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            n_rel: 3,
            k_spt: 3,
            k_qry: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_rel == 0 || self.k_spt == 0 || self.k_qry == 0 {
            return Err("n_rel, k_spt and k_qry must be positive".into());
        }
        if self.val_every == 0 {
            return Err("val_every must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        Ok(())
    }
}

/// Seed of one phase's episode stream.
pub fn stream_seed(seed: u64, phase: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(phase.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Digest of everything that shapes the parameters' meaning.
pub fn fingerprint(model: &ModelConfig, extract: &ExtractConfig) -> String {
    let text = serde_json::to_string(&(model, extract)).expect("configs serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Stacked subgraphs of one episode: support pairs first, then queries.
pub struct PreparedEpisode {
    batch: SubgraphBatch,
    /// Hyper-graph groups: one per relation (its support subgraphs), then
    /// one per query pair.
    groups: Vec<Vec<usize>>,
    labels: Vec<usize>,
    n_rel: usize,
}

impl PreparedEpisode {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Indexes a task and creates any missing projections in `params`.
pub fn prepare_episode(
    task: &EpisodeTask,
    cfg: &ModelConfig,
    params: &mut ModelParams,
) -> Result<PreparedEpisode, ModelError> {
    let n_rel = task.relation_names.len();
    let mut subs = Vec::new();
    let mut groups = vec![Vec::new(); n_rel];
    for (set, label) in &task.support {
        if *label >= n_rel {
            return Err(ModelError::Invalid(format!("support label {label} with {n_rel} relations")));
        }
        for sg in &set.subgraphs {
            groups[*label].push(subs.len());
            subs.push(sg);
        }
    }
    if let Some(y) = groups.iter().position(Vec::is_empty) {
        return Err(ModelError::Invalid(format!("relation {y} has no support subgraphs")));
    }
    for (set, _) in &task.query {
        groups.push((subs.len()..subs.len() + set.subgraphs.len()).collect());
        subs.extend(&set.subgraphs);
    }
    let batch = SubgraphBatch::new(&subs, cfg)?;
    batch.ensure_params(params, cfg);
    Ok(PreparedEpisode {
        batch,
        groups,
        labels: task.query.iter().map(|(_, l)| *l).collect(),
        n_rel,
    })
}

/// Variables of one episode's forward pass.
pub struct EpisodeOutput {
    /// One row per stacked subgraph.
    pub z: autodiff::Var,
    pub prototypes: autodiff::Var,
    /// One row per query pair.
    pub pairs: autodiff::Var,
    /// Flat `queries x relations` probabilities.
    pub probs: autodiff::Var,
    pub loss: autodiff::Var,
}

pub fn forward_episode(p: &ParamBinder, prep: &PreparedEpisode, cfg: &ModelConfig) -> Result<EpisodeOutput, ModelError> {
    let t = p.tape();
    let z = embed_subgraphs(p, &prep.batch, cfg)?;
    let hyper = t.with_value(z, |zv| HyperBatch::new(zv, &prep.groups, cfg.theta_ho, cfg.theta_he))?;
    let pooled = pool_groups(p, &hyper, z, cfg)?;
    let prototypes = t.gather_rows(pooled, &(0..prep.n_rel).collect::<Vec<_>>())?;
    let pairs = t.gather_rows(pooled, &(prep.n_rel..prep.groups.len()).collect::<Vec<_>>())?;
    let probs = classify(t, pairs, prototypes)?;
    let loss = episode_loss(t, probs, &prep.labels, prep.n_rel)?;
    Ok(EpisodeOutput {
        z,
        prototypes,
        pairs,
        probs,
        loss,
    })
}

/// Embeddings of whole pairs (pooled over each pair's subgraphs).
pub fn pair_embeddings(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    sets: &[&SubgraphSet],
) -> Result<Vec<Vec<f64>>, ModelError> {
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    let mut subs = Vec::new();
    let mut groups = Vec::new();
    for set in sets {
        groups.push((subs.len()..subs.len() + set.subgraphs.len()).collect());
        subs.extend(&set.subgraphs);
    }
    let batch = SubgraphBatch::new(&subs, cfg)?;
    batch.ensure_params(params, cfg);
    let tape = Tape::new();
    let p = ParamBinder::new(&tape, params, false);
    let z = embed_subgraphs(&p, &batch, cfg)?;
    let hyper = tape.with_value(z, |zv| HyperBatch::new(zv, &groups, cfg.theta_ho, cfg.theta_he))?;
    let pooled = tape.value(pool_groups(&p, &hyper, z, cfg)?);
    Ok((0..pooled.rows()).map(|r| pooled.row_slice(r).to_vec()).collect())
}

fn non_finite(e: ModelError, task: &EpisodeTask) -> EpisodicError {
    match e {
        ModelError::Autodiff(AutodiffError::NonFinite { op }) => {
            let err = EpisodicError::NonFinite {
                episode: task.id,
                graph: task.graph_id.clone(),
                relations: task.relation_names.join(","),
                detail: format!("{op} produced a non-finite value"),
            };
            log::error!("{err}");
            err
        }
        other => EpisodicError::Model(other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("episode,loss,val_accuracy\n");
    for r in rows {
        let val = r.val_accuracy.map(|a| format!("{a:.17}")).unwrap_or_default();
        out.push_str(&format!("{},{:.17},{}\n", r.episode, r.loss, val));
    }
    out
}

pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (the final ones when no
    /// validation ran).
    pub best: Checkpoint,
    pub final_params: ModelParams,
    pub log: Vec<LogRow>,
    pub best_val_accuracy: Option<f64>,
    pub stopped_early: bool,
}

/// One optimizer step per training episode, validating every
/// `cfg.val_every` episodes and after the last one.
pub fn meta_train(
    train: &[EpisodeTask],
    val: &[EpisodeTask],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    fingerprint: &str,
) -> Result<TrainOutcome, EpisodicError> {
    cfg.validate().map_err(EpisodicError::Config)?;
    model_cfg.validate().map_err(EpisodicError::Config)?;
    let mut params = ModelParams::new(model_cfg, seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut log = Vec::with_capacity(train.len());
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for (i, task) in train.iter().enumerate() {
        let prep = prepare_episode(task, model_cfg, &mut params)?;
        let tape = Tape::new();
        let grads = {
            let p = ParamBinder::new(&tape, &params, true);
            let out = forward_episode(&p, &prep, model_cfg).map_err(|e| non_finite(e, task))?;
            let loss = tape.value(out.loss).item();
            log.push(LogRow {
                episode: i + 1,
                loss,
                val_accuracy: None,
            });
            let g = tape.backward(out.loss)?;
            p.gradients(&g)
        };
        if grads.values().any(|g| !g.is_finite()) {
            return Err(non_finite(
                ModelError::Autodiff(AutodiffError::NonFinite { op: "backward" }),
                task,
            ));
        }
        opt.step(&mut params, &grads);

        let done = i + 1;
        if !val.is_empty() && (done % cfg.val_every == 0 || done == train.len()) {
            let acc = evaluate_accuracy(&mut params, model_cfg, val)?;
            log.last_mut().expect("row pushed").val_accuracy = Some(acc);
            log::info!("episode {done}: loss {:.4}, validation accuracy {acc:.4}", log[i].loss);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, done, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let consumed = log.len() as u64;
    let (best_val_accuracy, episode, best_params) = match best {
        Some((acc, at, p)) => (Some(acc), at as u64, p),
        None => (None, consumed, params.clone()),
    };
    Ok(TrainOutcome {
        best: Checkpoint {
            fingerprint: fingerprint.to_string(),
            episode,
            sampler_seed: stream_seed(seed, "train"),
            sampler_position: consumed,
            params: best_params,
        },
        final_params: params,
        log,
        best_val_accuracy,
        stopped_early,
    })
}

/// Query accuracy pooled over `episodes`, parameters frozen.
pub fn evaluate_accuracy(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    episodes: &[EpisodeTask],
) -> Result<f64, EpisodicError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for task in episodes {
        let pred = predict_episode(params, cfg, task)?;
        hits += pred.predictions.iter().zip(&pred.labels).filter(|(p, l)| p == l).count();
        total += pred.labels.len();
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePrediction {
    pub id: usize,
    pub graph_id: String,
    pub relation_names: Vec<String>,
    pub query_pairs: Vec<(ObjectId, ObjectId)>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Index of the largest probability; the first wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict_episode(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    task: &EpisodeTask,
) -> Result<EpisodePrediction, EpisodicError> {
    let prep = prepare_episode(task, cfg, params)?;
    let tape = Tape::new();
    let p = ParamBinder::new(&tape, params, false);
    let out = forward_episode(&p, &prep, cfg).map_err(|e| non_finite(e, task))?;
    let probabilities = probability_rows(&tape.value(out.probs), prep.n_rel);
    let protos = tape.value(out.prototypes);
    Ok(EpisodePrediction {
        id: task.id,
        graph_id: task.graph_id.clone(),
        relation_names: task.relation_names.clone(),
        query_pairs: task.query.iter().map(|(s, _)| (s.u, s.v)).collect(),
        labels: prep.labels.clone(),
        predictions: probabilities.iter().map(|r| argmax(r)).collect(),
        prototypes: (0..protos.rows()).map(|r| protos.row_slice(r).to_vec()).collect(),
        probabilities,
        loss: tape.value(out.loss).item(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingConfig {
    /// Test episodes that produce ranked lists.
    pub episodes: usize,
    /// Query objects ranked per episode.
    pub queries_per_episode: usize,
    pub pool_cap: usize,
    pub counting: CloseCounting,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            queries_per_episode: 2,
            pool_cap: 100,
            counting: CloseCounting::PerOccurrence,
        }
    }
}

/// Longest cutoff used by the report; shorter pools are skipped.
pub const MAX_RANK_K: usize = 20;

pub struct RankingSetup<'a> {
    pub extractor: &'a Extractor,
    pub cfg: RankingConfig,
    /// Relations held out from training; candidates holding any of them with
    /// the query object count as close.
    pub novel_relations: BTreeSet<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub episodes: Vec<EpisodePrediction>,
    /// Per ranked query object, one list per episode relation.
    pub rankings: Vec<Vec<RankedList>>,
    /// Query objects skipped for having fewer than `MAX_RANK_K` candidates.
    pub ranking_skipped: usize,
    pub metrics: MetricRow,
    pub mean_loss: f64,
}

/// Frozen-parameter evaluation. `params` is never modified; projections
/// for unseen feature widths live in a scratch copy.
pub fn meta_test(
    params: &ModelParams,
    cfg: &ModelConfig,
    episodes: &[EpisodeTask],
    ranking: Option<&RankingSetup>,
) -> Result<PredictionReport, EpisodicError> {
    if episodes.is_empty() {
        return Err(EpisodicError::Config("no test episodes".into()));
    }
    let mut scratch = params.clone();
    let mut preds = Vec::with_capacity(episodes.len());
    let (mut acc, mut f1, mut loss) = (0.0, 0.0, 0.0);
    for task in episodes {
        let p = predict_episode(&mut scratch, cfg, task)?;
        acc += accuracy(&p.predictions, &p.labels)?;
        f1 += macro_f1(&p.predictions, &p.labels, p.relation_names.len())?;
        loss += p.loss;
        preds.push(p);
    }
    let n = episodes.len() as f64;

    let mut rankings = Vec::new();
    let mut skipped = 0;
    if let Some(setup) = ranking {
        for (task, pred) in episodes.iter().zip(&preds).take(setup.cfg.episodes) {
            let (lists, s) = rank_episode(&mut scratch, cfg, task, pred, setup)?;
            rankings.extend(lists);
            skipped += s;
        }
    }
    let counting = ranking.map(|r| r.cfg.counting).unwrap_or_default();
    let [ndcg10, ndcg20, map10, map20, prc10, prc20] = ranking_summary(&rankings, counting)?;
    Ok(PredictionReport {
        episodes: preds,
        rankings,
        ranking_skipped: skipped,
        metrics: MetricRow {
            accuracy: acc / n,
            macro_f1: f1 / n,
            ndcg10,
            ndcg20,
            map10,
            map20,
            prc10,
            prc20,
        },
        mean_loss: loss / n,
    })
}

fn rank_episode(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    task: &EpisodeTask,
    pred: &EpisodePrediction,
    setup: &RankingSetup,
) -> Result<(Vec<Vec<RankedList>>, usize), EpisodicError> {
    let g = setup
        .extractor
        .graph(&task.graph_id)
        .ok_or_else(|| ExtractError::UnknownGraph(task.graph_id.clone()))?
        .clone();
    let mut queries: Vec<ObjectId> = Vec::new();
    for (set, _) in &task.query {
        if !queries.contains(&set.u) {
            queries.push(set.u);
        }
    }
    queries.truncate(setup.cfg.queries_per_episode);

    let has = |u: ObjectId, c: ObjectId, names: &dyn Fn(&str) -> bool| g.relations_of_pair(u, c).into_iter().any(names);
    let mut out = Vec::new();
    let mut skipped = 0;
    for u in queries {
        let episode_rel = |n: &str| task.relation_names.iter().any(|r| r == n);
        let mut positives = Vec::new();
        let mut others = Vec::new();
        for c in g.objects_of_type(g.type_of(u)).filter(|&c| c != u) {
            if has(u, c, &episode_rel) {
                positives.push(c);
            } else {
                others.push(c);
            }
        }
        let room = setup.cfg.pool_cap.saturating_sub(positives.len());
        if others.len() > room {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::extract::pair_seed(setup.seed, &task.graph_id, task.id, u));
            others.shuffle(&mut rng);
            others.truncate(room);
        }
        let mut pool: Vec<ObjectId> = positives.into_iter().chain(others).collect();
        pool.sort_unstable();
        if pool.len() < MAX_RANK_K {
            skipped += 1;
            continue;
        }

        let pairs: Vec<(ObjectId, ObjectId)> = pool.iter().map(|&c| (u, c)).collect();
        let sets = setup.extractor.pairs(&task.graph_id, &pairs)?;
        let found: Vec<&SubgraphSet> = sets.iter().flatten().map(|s| s.as_ref()).collect();
        let mut embs = Vec::with_capacity(found.len());
        for chunk in found.chunks(16) {
            embs.extend(pair_embeddings(params, cfg, chunk)?);
        }
        let mut emb_iter = embs.into_iter();
        let embedded: Vec<Option<Vec<f64>>> = sets.iter().map(|s| s.as_ref().and_then(|_| emb_iter.next())).collect();

        let mut lists = Vec::with_capacity(task.relation_names.len());
        for (y, name) in task.relation_names.iter().enumerate() {
            let proto = &pred.prototypes[y];
            let mut scored: Vec<(f64, ObjectId)> = pool
                .iter()
                .zip(&embedded)
                .map(|(&c, e)| {
                    let s = e.as_ref().map_or(f64::NEG_INFINITY, |e| {
                        -e.iter().zip(proto).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    });
                    (s, c)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let candidates: Vec<ObjectId> = scored.iter().map(|&(_, c)| c).collect();
            let this = |n: &str| n == name;
            let novel = |n: &str| setup.novel_relations.contains(n);
            lists.push(RankedList {
                query: u,
                relation: y,
                relevant: candidates.iter().map(|&c| has(u, c, &this)).collect(),
                close: candidates.iter().map(|&c| has(u, c, &novel)).collect(),
                candidates,
            });
        }
        out.push(lists);
    }
    Ok((out, skipped))
}

/// Mean training loss of the first and last `window` episodes.
pub fn loss_trend(log: &[LogRow], window: usize) -> Option<(f64, f64)> {
    if window == 0 || log.len() < window {
        return None;
    }
    let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    Some((mean(&log[..window]), mean(&log[log.len() - window..])))
}

/// Gradient of the episode loss for every parameter, by name.
pub fn episode_gradients(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    task: &EpisodeTask,
) -> Result<(f64, BTreeMap<String, autodiff::Tensor>), EpisodicError> {
    let prep = prepare_episode(task, cfg, params)?;
    let tape = Tape::new();
    let p = ParamBinder::new(&tape, params, true);
    let out = forward_episode(&p, &prep, cfg)?;
    let loss = tape.value(out.loss).item();
    let grads = tape.backward(out.loss)?;
    Ok((loss, p.gradients(&grads)))
}

/// Episode loss at fixed parameters (no gradient bookkeeping).
pub fn episode_loss_value(params: &mut ModelParams, cfg: &ModelConfig, task: &EpisodeTask) -> Result<f64, EpisodicError> {
    let prep = prepare_episode(task, cfg, params)?;
    let tape = Tape::new();
    let p = ParamBinder::new(&tape, params, false);
    Ok(tape.value(forward_episode(&p, &prep, cfg)?.loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbedConfig;
    use crate::extract::{build_episodes, SampleBank};
    use crate::model::Variant;
    use crate::synthgen::{generate_corpus, GeneratorConfig};

    fn extract_cfg() -> ExtractConfig {
        ExtractConfig {
            k_path: 50,
            l_max: 5,
            m: 1,
            n_type_max: 3,
            embed: EmbedConfig {
                dim: 8,
                walks_per_object: 10,
                ..EmbedConfig::default()
            },
            ..ExtractConfig::default()
        }
    }

    fn model_cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            d_h: 4,
            d_att: 4,
            d_sage: 4,
            d_gv: 4,
            n_slots: 3,
            d_max: 7,
            variant,
            ..ModelConfig::default()
        }
    }

    struct Fixture {
        extractor: Extractor,
        train: SampleBank,
        test: SampleBank,
    }

    fn fixture(gen: &GeneratorConfig) -> Fixture {
        let corpus = generate_corpus(gen).unwrap().corpus;
        let extractor = Extractor::new(&corpus, extract_cfg(), 0).unwrap();
        let train = SampleBank::build(&extractor, &SampleBank::all_relations(&corpus.train_graphs())).unwrap();
        let test = SampleBank::build(&extractor, &SampleBank::all_relations(&corpus.test_graphs())).unwrap();
        Fixture { extractor, train, test }
    }

    fn default_fixture() -> Fixture {
        fixture(&GeneratorConfig::default())
    }

    fn train_cfg(episodes: usize, lr: f64, optimizer: OptimizerKind) -> TrainConfig {
        TrainConfig {
            episodes,
            learning_rate: lr,
            optimizer,
            val_every: 1000,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::Full);
        let eps = build_episodes(&f.train, 5, 3, 3, 10, 1).unwrap();
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let out = meta_train(&eps, &[], &cfg, &train_cfg(5, 0.0, kind), 4, "fp").unwrap();
            let mut fresh = ModelParams::new(&cfg, 4);
            for (name, t) in out.final_params.iter() {
                fresh.ensure(name, t.rows(), t.cols());
                assert_eq!(fresh.get(name), Some(t), "{name}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::Full);
        let eps = build_episodes(&f.train, 6, 3, 3, 10, 2).unwrap();
        let val = build_episodes(&f.train, 2, 3, 3, 10, 3).unwrap();
        let tc = TrainConfig {
            val_every: 3,
            ..train_cfg(6, 1e-2, OptimizerKind::Adam)
        };
        let a = meta_train(&eps, &val, &cfg, &tc, 9, "fp").unwrap();
        let b = meta_train(&eps, &val, &cfg, &tc, 9, "fp").unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_params.digest(), b.final_params.digest());
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        assert_eq!(a.log.iter().filter(|r| r.val_accuracy.is_some()).count(), 2);
    }

    #[test]
    fn sgd_step_is_minus_lr_times_gradient() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::Full);
        let eps = build_episodes(&f.train, 1, 3, 3, 10, 5).unwrap();
        let lr = 0.05;
        let mut before = ModelParams::new(&cfg, 1);
        let (_, grads) = episode_gradients(&mut before, &cfg, &eps[0]).unwrap();
        let out = meta_train(&eps, &[], &cfg, &train_cfg(1, lr, OptimizerKind::Sgd), 1, "fp").unwrap();
        for (name, t) in out.final_params.iter() {
            let (b, g) = (before.get(name).unwrap(), &grads[name]);
            for ((x, x0), gi) in t.data().iter().zip(b.data()).zip(g.data()) {
                assert!((x - (x0 - lr * gi)).abs() < 1e-12, "{name}");
            }
        }
        assert!(grads.values().any(|g| g.data().iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn checkpoint_reload_forward_is_bit_exact() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::Full);
        let eps = build_episodes(&f.train, 3, 3, 3, 10, 6).unwrap();
        let out = meta_train(&eps, &[], &cfg, &train_cfg(3, 1e-2, OptimizerKind::Adam), 2, "fp").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        out.best.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let test = build_episodes(&f.test, 2, 3, 3, 10, 7).unwrap();
        let a = meta_test(&out.best.params, &cfg, &test, None).unwrap();
        let b = meta_test(&loaded.params, &cfg, &test, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn meta_test_never_updates_parameters() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::Full);
        let params = ModelParams::new(&cfg, 3);
        let digest = params.digest();
        let test = build_episodes(&f.test, 3, 3, 3, 10, 8).unwrap();
        let setup = RankingSetup {
            extractor: &f.extractor,
            cfg: RankingConfig {
                episodes: 1,
                queries_per_episode: 1,
                ..RankingConfig::default()
            },
            novel_relations: BTreeSet::new(),
            seed: 0,
        };
        let a = meta_test(&params, &cfg, &test, Some(&setup)).unwrap();
        assert_eq!(params.digest(), digest);
        let b = meta_test(&params, &cfg, &test, Some(&setup)).unwrap();
        assert_eq!(a, b);
        for group in &a.rankings {
            for rl in group {
                rl.validate().unwrap();
                assert!(rl.candidates.len() >= MAX_RANK_K);
            }
        }
    }

    #[test]
    fn object_view_ablation_gets_no_gradient() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::NoOv);
        let eps = build_episodes(&f.train, 1, 3, 3, 10, 9).unwrap();
        let mut params = ModelParams::new(&cfg, 0);
        let (_, grads) = episode_gradients(&mut params, &cfg, &eps[0]).unwrap();
        let ov: Vec<&String> = grads.keys().filter(|n| n.starts_with("ov.att") || n.starts_with("ov.type")).collect();
        assert!(!ov.is_empty());
        for name in ov {
            assert!(grads[name].data().iter().all(|&x| x == 0.0), "{name}");
        }
        assert!(grads["gv.out"].data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn hyper_ablation_changes_probabilities() {
        let f = default_fixture();
        let test = build_episodes(&f.test, 2, 3, 3, 10, 10).unwrap();
        let full = model_cfg(Variant::Full);
        let plain = model_cfg(Variant::NoHyper);
        let a = meta_test(&ModelParams::new(&full, 0), &full, &test, None).unwrap();
        let b = meta_test(&ModelParams::new(&plain, 0), &plain, &test, None).unwrap();
        assert_ne!(
            a.episodes.iter().map(|e| &e.probabilities).collect::<Vec<_>>(),
            b.episodes.iter().map(|e| &e.probabilities).collect::<Vec<_>>()
        );
    }

    #[test]
    fn training_loss_falls() {
        let f = default_fixture();
        let cfg = model_cfg(Variant::Full);
        let eps = build_episodes(&f.train, 200, 3, 3, 10, 11).unwrap();
        let out = meta_train(&eps, &[], &cfg, &train_cfg(200, 1e-2, OptimizerKind::Adam), 0, "fp").unwrap();
        let (first, last) = loss_trend(&out.log, 50).unwrap();
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn untrained_five_way_accuracy_near_chance() {
        let f = fixture(&GeneratorConfig {
            n_graphs: 2,
            n_object_types: 8,
            motif_catalog_size: 4,
            n_relations_per_graph: 5,
            ..GeneratorConfig::default()
        });
        let cfg = model_cfg(Variant::Full);
        let test = build_episodes(&f.test, 10, 5, 3, 10, 12).unwrap();
        let report = meta_test(&ModelParams::new(&cfg, 0), &cfg, &test, None).unwrap();
        let items: usize = report.episodes.iter().map(|e| e.labels.len()).sum();
        assert!(items >= 500);
        assert!((report.metrics.accuracy - 0.2).abs() <= 0.1, "{}", report.metrics.accuracy);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let f = default_fixture();
        let eps = build_episodes(&f.train, 1, 3, 3, 10, 1).unwrap();
        let bad = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(matches!(
            meta_train(&eps, &[], &model_cfg(Variant::Full), &bad, 0, "fp"),
            Err(EpisodicError::Config(_))
        ));
        assert!(meta_test(&ModelParams::empty(0), &model_cfg(Variant::Full), &[], None).is_err());
    }
}
