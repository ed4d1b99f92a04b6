//! On-disk copies of extraction work: per-graph embedding tables and the
//! memo of extracted pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ExtractConfig, ExtractError, Extractor, NormalizedSubgraph, SubLink, SubgraphSet};
use crate::embed::{load_cache, pretrain_embeddings, save_cache, CacheKey, EmbeddingTable};
use crate::hetgraph::{GraphCorpus, ObjectId, TypeId};

const PAIR_CACHE_VERSION: u32 = 1;

/// What a pair cache was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCacheKey {
    pub corpus_hash: String,
    pub config: ExtractConfig,
    pub embed_seed: u64,
    pub version: u32,
}

impl PairCacheKey {
    pub fn new(corpus: &GraphCorpus, config: &ExtractConfig, embed_seed: u64) -> Self {
        Self {
            corpus_hash: corpus.content_hash(),
            config: config.clone(),
            embed_seed,
            version: PAIR_CACHE_VERSION,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SubgraphRecord {
    objects: Vec<ObjectId>,
    object_types: Vec<TypeId>,
    features: Vec<Vec<f64>>,
    links: Vec<(usize, usize, TypeId)>,
    selected_types: Vec<TypeId>,
    selected_type_names: Vec<String>,
    u: usize,
    v: usize,
}

impl From<&NormalizedSubgraph> for SubgraphRecord {
    fn from(s: &NormalizedSubgraph) -> Self {
        Self {
            objects: s.objects.clone(),
            object_types: s.object_types.clone(),
            features: s.features.clone(),
            links: s.links.iter().map(|l| (l.a, l.b, l.link_type)).collect(),
            selected_types: s.selected_types.clone(),
            selected_type_names: s.selected_type_names.clone(),
            u: s.u,
            v: s.v,
        }
    }
}

impl From<SubgraphRecord> for NormalizedSubgraph {
    fn from(r: SubgraphRecord) -> Self {
        NormalizedSubgraph::new(
            r.objects,
            r.object_types,
            r.features,
            r.links.into_iter().map(|(a, b, link_type)| SubLink { a, b, link_type }).collect(),
            r.selected_types,
            r.selected_type_names,
            r.u,
            r.v,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    graph_id: String,
    u: ObjectId,
    v: ObjectId,
    /// `None` when no path joins the pair.
    subgraphs: Option<Vec<SubgraphRecord>>,
}

#[derive(Serialize, Deserialize)]
struct PairCacheFile {
    key: PairCacheKey,
    pairs: Vec<PairRecord>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExtractError + '_ {
    move |source| ExtractError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes every pair extracted so far, in key order.
pub fn save_pair_cache(path: &Path, key: &PairCacheKey, extractor: &Extractor) -> Result<(), ExtractError> {
    let pairs = extractor
        .memo()
        .into_iter()
        .map(|((graph_id, u, v), set)| PairRecord {
            graph_id,
            u,
            v,
            subgraphs: set.map(|s| s.subgraphs.iter().map(SubgraphRecord::from).collect()),
        })
        .collect();
    let file = PairCacheFile {
        key: key.clone(),
        pairs,
    };
    let text = serde_json::to_string(&file).expect("cache serializes");
    fs::write(path, text).map_err(io(path))
}

/// Seeds `extractor`'s memo from `path`. Returns `Ok(false)` when the file
/// was written for another key.
pub fn load_pair_cache(path: &Path, key: &PairCacheKey, extractor: &Extractor) -> Result<bool, ExtractError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let file: PairCacheFile = serde_json::from_str(&text).map_err(|source| ExtractError::CacheSchema {
        path: path.to_path_buf(),
        source,
    })?;
    if &file.key != key {
        return Ok(false);
    }
    let entries = file.pairs.into_iter().map(|r| {
        let set = r.subgraphs.map(|subs| {
            Arc::new(SubgraphSet {
                graph_id: r.graph_id.clone(),
                u: r.u,
                v: r.v,
                subgraphs: subs.into_iter().map(NormalizedSubgraph::from).collect(),
            })
        });
        ((r.graph_id, r.u, r.v), set)
    });
    extractor.preload(entries);
    Ok(true)
}

fn table_path(dir: &Path, graph_id: &str) -> PathBuf {
    let safe: String = graph_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.emb"))
}

impl Extractor {
    /// Like [`Extractor::new`], reusing tables stored in `dir` and writing
    /// the ones it had to compute.
    pub fn with_cache_dir(
        corpus: &GraphCorpus,
        cfg: ExtractConfig,
        embed_seed: u64,
        dir: &Path,
    ) -> Result<Self, ExtractError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut graphs = BTreeMap::new();
        for g in corpus.graphs() {
            let key = CacheKey::new(g, &cfg.embed, embed_seed);
            let path = table_path(dir, g.id());
            let cached = if path.exists() { load_cache(&path, &key)? } else { None };
            let table: EmbeddingTable = match cached {
                Some(t) => t,
                None => {
                    let t = pretrain_embeddings(g, &cfg.embed, embed_seed)?;
                    save_cache(&path, &key, &t)?;
                    log::info!("embedded {} into {}", g.id(), path.display());
                    t
                }
            };
            graphs.insert(g.id().to_string(), (Arc::new(g.clone()), Arc::new(table)));
        }
        Ok(Self::with_embeddings(cfg, graphs))
    }
}
