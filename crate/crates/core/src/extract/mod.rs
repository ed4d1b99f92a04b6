//! Task generation: graph structures between query pairs, normalized
//! subgraphs, and few-shot episodes assembled from them.

mod cache;
mod paths;
mod subgraph;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::{pretrain_embeddings, EmbedConfig, EmbedError, EmbeddingTable};
use crate::hetgraph::{GraphCorpus, HeterogeneousGraph, ObjectId};

pub use cache::{load_pair_cache, save_pair_cache, PairCacheKey};
pub use paths::{
    enumerate_paths, extract_structure, path_order, path_score, top_paths, two_hop_structure, GraphStructure,
    ScoredPath,
};
pub use subgraph::{
    generate_subgraphs, repair_isolated, type_mean, type_similarity, NormalizedSubgraph, SubLink, SubgraphConfig,
    SubgraphSet, SYNTHETIC_LINK,
};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("query pair joins object {0} to itself")]
    SamePair(ObjectId),
    #[error("no path between {u} and {v} within {l_max} hops")]
    NoPath { u: ObjectId, v: ObjectId, l_max: usize },
    #[error("unknown graph {0}")]
    UnknownGraph(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    CacheSchema {
        path: std::path::PathBuf,
        source: serde_json::Error,
    },
}

/// How the structure around a query pair is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureMode {
    /// Union of the top scored paths.
    TopPaths,
    /// Union of the two-hop neighborhoods of both query objects.
    TwoHop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub k_path: usize,
    pub l_max: usize,
    /// Enumeration stops after this many paths per pair.
    pub path_cap: usize,
    pub n_type_min: usize,
    pub n_type_max: usize,
    pub m: usize,
    pub mode: StructureMode,
    /// Seed for subgraph type draws; independent of the training seed so
    /// extracted samples can be shared across runs.
    pub seed: u64,
    pub embed: EmbedConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            k_path: 500,
            l_max: 6,
            path_cap: 50_000,
            n_type_min: 2,
            n_type_max: 6,
            m: 20,
            mode: StructureMode::TopPaths,
            seed: 0,
            embed: EmbedConfig::default(),
        }
    }
}

impl ExtractConfig {
    pub fn subgraph(&self) -> SubgraphConfig {
        SubgraphConfig {
            n_type_min: self.n_type_min,
            n_type_max: self.n_type_max,
            m: self.m,
        }
    }

    pub fn n_subg(&self) -> usize {
        self.subgraph().n_subg()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_type_min < 2 || self.n_type_max < self.n_type_min {
            return Err(format!(
                "n_type range [{}, {}] must satisfy 2 <= min <= max",
                self.n_type_min, self.n_type_max
            ));
        }
        if self.k_path == 0 || self.l_max == 0 || self.m == 0 || self.path_cap == 0 {
            return Err("k_path, l_max, m and path_cap must be positive".into());
        }
        Ok(())
    }
}

/// Seed for one pair's subgraph draws.
pub fn pair_seed(seed: u64, graph_id: &str, u: ObjectId, v: ObjectId) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(graph_id.as_bytes());
    h.update([0]);
    h.update((u as u64).to_le_bytes());
    h.update((v as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Structure plus subgraphs for one pair of `g`.
pub fn extract_pair(
    g: &HeterogeneousGraph,
    emb: &EmbeddingTable,
    u: ObjectId,
    v: ObjectId,
    cfg: &ExtractConfig,
) -> Result<SubgraphSet, ExtractError> {
    let s = match cfg.mode {
        StructureMode::TopPaths => extract_structure(g, u, v, cfg.k_path, cfg.l_max, cfg.path_cap)?,
        StructureMode::TwoHop => two_hop_structure(g, u, v, cfg.l_max)?,
    };
    Ok(generate_subgraphs(g, &s, emb, &cfg.subgraph(), pair_seed(cfg.seed, g.id(), u, v)))
}

/// Graph id and query pair.
pub type PairKey = (String, ObjectId, ObjectId);

/// Graphs with their embeddings and a memo of extracted pairs.
pub struct Extractor {
    cfg: ExtractConfig,
    graphs: BTreeMap<String, (Arc<HeterogeneousGraph>, Arc<EmbeddingTable>)>,
    cache: Mutex<HashMap<PairKey, Option<Arc<SubgraphSet>>>>,
}

impl Extractor {
    /// Embeds every graph of `corpus` (seeded by `embed_seed`).
    pub fn new(corpus: &GraphCorpus, cfg: ExtractConfig, embed_seed: u64) -> Result<Self, ExtractError> {
        let tables: Vec<EmbeddingTable> = corpus
            .graphs()
            .par_iter()
            .map(|g| pretrain_embeddings(g, &cfg.embed, embed_seed))
            .collect::<Result<_, _>>()?;
        let graphs = corpus
            .graphs()
            .iter()
            .zip(tables)
            .map(|(g, t)| (g.id().to_string(), (Arc::new(g.clone()), Arc::new(t))))
            .collect();
        Ok(Self::with_embeddings(cfg, graphs))
    }

    pub fn with_embeddings(
        cfg: ExtractConfig,
        graphs: BTreeMap<String, (Arc<HeterogeneousGraph>, Arc<EmbeddingTable>)>,
    ) -> Self {
        Self {
            cfg,
            graphs,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Same graphs and embeddings under another extraction config, with an
    /// empty pair memo. The embedding settings must match.
    pub fn reconfigured(&self, cfg: ExtractConfig) -> Result<Self, ExtractError> {
        if cfg.embed != self.cfg.embed {
            return Err(ExtractError::Config(
                "reconfigured extractor must keep the embedding settings".into(),
            ));
        }
        Ok(Self::with_embeddings(cfg, self.graphs.clone()))
    }

    pub fn graph_ids(&self) -> impl Iterator<Item = &str> {
        self.graphs.keys().map(String::as_str)
    }

    pub fn config(&self) -> &ExtractConfig {
        &self.cfg
    }

    pub fn graph(&self, id: &str) -> Option<&Arc<HeterogeneousGraph>> {
        self.graphs.get(id).map(|(g, _)| g)
    }

    pub fn embeddings(&self, id: &str) -> Option<&Arc<EmbeddingTable>> {
        self.graphs.get(id).map(|(_, e)| e)
    }

    /// Extracted subgraphs for `(u, v)`, or `Ok(None)` when no path joins
    /// them within `l_max`.
    pub fn pair(&self, graph_id: &str, u: ObjectId, v: ObjectId) -> Result<Option<Arc<SubgraphSet>>, ExtractError> {
        let key = (graph_id.to_string(), u, v);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let (g, emb) = self
            .graphs
            .get(graph_id)
            .ok_or_else(|| ExtractError::UnknownGraph(graph_id.to_string()))?;
        let value = match extract_pair(g, emb, u, v, &self.cfg) {
            Ok(set) => Some(Arc::new(set)),
            Err(ExtractError::NoPath { .. }) => None,
            Err(e) => return Err(e),
        };
        self.cache.lock().expect("cache lock").insert(key, value.clone());
        Ok(value)
    }

    /// Every memoized pair, in key order.
    pub fn memo(&self) -> Vec<(PairKey, Option<Arc<SubgraphSet>>)> {
        let cache = self.cache.lock().expect("cache lock");
        let mut out: Vec<_> = cache.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Adds precomputed pairs to the memo.
    pub fn preload(&self, entries: impl IntoIterator<Item = (PairKey, Option<Arc<SubgraphSet>>)>) {
        self.cache.lock().expect("cache lock").extend(entries);
    }

    /// Extracts many pairs in parallel, preserving input order.
    pub fn pairs(
        &self,
        graph_id: &str,
        pairs: &[(ObjectId, ObjectId)],
    ) -> Result<Vec<Option<Arc<SubgraphSet>>>, ExtractError> {
        pairs.par_iter().map(|&(u, v)| self.pair(graph_id, u, v)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BankRelation {
    pub name: String,
    pub samples: Vec<Arc<SubgraphSet>>,
}

#[derive(Debug, Clone)]
pub struct BankGraph {
    pub graph_id: String,
    pub relations: Vec<BankRelation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedSample {
    pub graph_id: String,
    pub relation: String,
    pub u: ObjectId,
    pub v: ObjectId,
}

/// Extracted labeled samples of one phase (train, val or test).
#[derive(Debug, Clone, Default)]
pub struct SampleBank {
    pub graphs: Vec<BankGraph>,
    /// Labeled pairs without a path within `l_max`.
    pub skipped: Vec<SkippedSample>,
}

impl SampleBank {
    /// Extracts every labeled pair of the named relations of each graph.
    pub fn build(extractor: &Extractor, phase: &[(String, Vec<String>)]) -> Result<Self, ExtractError> {
        let mut bank = SampleBank::default();
        for (graph_id, relation_names) in phase {
            let g = extractor
                .graph(graph_id)
                .ok_or_else(|| ExtractError::UnknownGraph(graph_id.clone()))?
                .clone();
            let mut relations = Vec::new();
            for name in relation_names {
                let pairs = g
                    .relations()
                    .get(name)
                    .ok_or_else(|| ExtractError::InsufficientData(format!("graph {graph_id} has no relation {name}")))?;
                let sets = extractor.pairs(graph_id, pairs)?;
                let mut samples = Vec::new();
                for (&(u, v), set) in pairs.iter().zip(sets) {
                    match set {
                        Some(s) => samples.push(s),
                        None => bank.skipped.push(SkippedSample {
                            graph_id: graph_id.clone(),
                            relation: name.clone(),
                            u,
                            v,
                        }),
                    }
                }
                relations.push(BankRelation {
                    name: name.clone(),
                    samples,
                });
            }
            bank.graphs.push(BankGraph {
                graph_id: graph_id.clone(),
                relations,
            });
        }
        Ok(bank)
    }

    /// Every relation of every listed graph.
    pub fn all_relations(graphs: &[&HeterogeneousGraph]) -> Vec<(String, Vec<String>)> {
        graphs
            .iter()
            .map(|g| (g.id().to_string(), g.relations().keys().cloned().collect()))
            .collect()
    }
}

/// One few-shot task: labeled support and query pairs from a single graph.
#[derive(Debug, Clone)]
pub struct EpisodeTask {
    pub id: usize,
    pub graph_id: String,
    pub relation_names: Vec<String>,
    pub support: Vec<(Arc<SubgraphSet>, usize)>,
    pub query: Vec<(Arc<SubgraphSet>, usize)>,
}

/// Samples `n_episodes` tasks. Each picks a graph with enough data, then
/// `n_rel` relations, then disjoint support and query pairs per relation.
pub fn build_episodes(
    bank: &SampleBank,
    n_episodes: usize,
    n_rel: usize,
    k_spt: usize,
    k_qry: usize,
    seed: u64,
) -> Result<Vec<EpisodeTask>, ExtractError> {
    let need = k_spt + k_qry;
    let eligible: Vec<(&BankGraph, Vec<&BankRelation>)> = bank
        .graphs
        .iter()
        .map(|g| (g, g.relations.iter().filter(|r| r.samples.len() >= need).collect::<Vec<_>>()))
        .filter(|(_, rels)| rels.len() >= n_rel)
        .collect();
    if eligible.is_empty() || n_rel == 0 {
        let detail = bank
            .graphs
            .iter()
            .map(|g| {
                let short: Vec<String> = g
                    .relations
                    .iter()
                    .filter(|r| r.samples.len() < need)
                    .map(|r| format!("{} has {}", r.name, r.samples.len()))
                    .collect();
                format!(
                    "graph {} has {} relations ({} with fewer than {need} usable pairs{}{})",
                    g.graph_id,
                    g.relations.len(),
                    short.len(),
                    if short.is_empty() { "" } else { ": " },
                    short.join(", ")
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ExtractError::InsufficientData(format!(
            "no graph offers {n_rel} relations with {need} usable pairs each; {detail}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    for id in 0..n_episodes {
        let (g, rels) = eligible.choose(&mut rng).expect("eligible graphs");
        let chosen: Vec<&&BankRelation> = rels.choose_multiple(&mut rng, n_rel).collect();
        let mut used: HashSet<(ObjectId, ObjectId)> = HashSet::new();
        let mut support = Vec::with_capacity(n_rel * k_spt);
        let mut query = Vec::with_capacity(n_rel * k_qry);
        for (label, rel) in chosen.iter().enumerate() {
            let mut picks: Vec<&Arc<SubgraphSet>> = rel.samples.iter().collect();
            picks.shuffle(&mut rng);
            let fresh: Vec<&Arc<SubgraphSet>> = picks
                .into_iter()
                .filter(|s| used.insert((s.u.min(s.v), s.u.max(s.v))))
                .take(need)
                .collect();
            if fresh.len() < need {
                return Err(ExtractError::InsufficientData(format!(
                    "graph {}: relation {} shares too many pairs with other relations",
                    g.graph_id, rel.name
                )));
            }
            support.extend(fresh[..k_spt].iter().map(|s| (Arc::clone(s), label)));
            query.extend(fresh[k_spt..].iter().map(|s| (Arc::clone(s), label)));
        }
        episodes.push(EpisodeTask {
            id,
            graph_id: g.graph_id.clone(),
            relation_names: chosen.iter().map(|r| r.name.clone()).collect(),
            support,
            query,
        });
    }
    Ok(episodes)
}
