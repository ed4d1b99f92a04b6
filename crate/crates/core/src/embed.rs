//! Object embeddings used to rank object types by similarity.
//!
//! Walk co-occurrences are turned into a positive PMI matrix whose leading
//! eigenpairs (largest magnitude, found by subspace iteration with a
//! Rayleigh-Ritz step) give `e_i = q_i * sqrt(|lambda|)` per component.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hetgraph::{GraphView, HeterogeneousGraph, ObjectId};

/// Bumped whenever the embedding computation changes.
pub const METHOD_VERSION: u32 = 1;
const CACHE_MAGIC: &[u8; 8] = b"HRELEMB\0";
const SUBSPACE_ITERATIONS: usize = 60;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("cannot embed an empty graph")]
    EmptyGraph,
    #[error("embedding cache io: {0}")]
    Io(#[from] io::Error),
    #[error("embedding cache is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMethod {
    /// Seeded truncated random walks.
    SampledWalks,
    /// The expected walk co-occurrences, computed from transition powers.
    ExpectedWalks,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    pub walks_per_object: usize,
    /// Objects per walk, start included.
    pub walk_length: usize,
    pub window: usize,
    pub method: EmbedMethod,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            walks_per_object: 80,
            walk_length: 10,
            window: 5,
            method: EmbedMethod::SampledWalks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Self {
        debug_assert!(vectors.iter().all(|v| v.len() == dim));
        Self { dim, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, obj: ObjectId) -> &[f64] {
        &self.vectors[obj]
    }
}

/// Embeds every object of `g`; identical inputs give identical tables.
pub fn pretrain_embeddings(g: &HeterogeneousGraph, cfg: &EmbedConfig, seed: u64) -> Result<EmbeddingTable, EmbedError> {
    if cfg.dim < 2 {
        return Err(EmbedError::Dimension(cfg.dim));
    }
    let n = g.node_count();
    if n == 0 {
        return Err(EmbedError::EmptyGraph);
    }
    let counts = match cfg.method {
        EmbedMethod::SampledWalks => sampled_cooccurrence(g, cfg, seed),
        EmbedMethod::ExpectedWalks => expected_cooccurrence(g, cfg),
    };
    let ppmi = positive_pmi(counts);
    Ok(spectral_embedding(&ppmi, cfg.dim, seed))
}

fn sampled_cooccurrence(g: &HeterogeneousGraph, cfg: &EmbedConfig, seed: u64) -> DMatrix<f64> {
    let n = g.node_count();
    let mut counts = DMatrix::zeros(n, n);
    let mut walk = Vec::with_capacity(cfg.walk_length);
    for start in 0..n {
        // one stream per start object
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start as u64);
        for _ in 0..cfg.walks_per_object {
            walk.clear();
            walk.push(start);
            while walk.len() < cfg.walk_length {
                let nbrs = g.neighbor_ids(*walk.last().expect("nonempty walk"));
                if nbrs.is_empty() {
                    break;
                }
                walk.push(nbrs[rng.gen_range(0..nbrs.len())]);
            }
            for i in 0..walk.len() {
                for j in i + 1..walk.len().min(i + cfg.window + 1) {
                    counts[(walk[i], walk[j])] += 1.0;
                    counts[(walk[j], walk[i])] += 1.0;
                }
            }
        }
    }
    counts
}

fn expected_cooccurrence(g: &HeterogeneousGraph, cfg: &EmbedConfig) -> DMatrix<f64> {
    let n = g.node_count();
    let mut transition = DMatrix::zeros(n, n);
    for a in 0..n {
        let nbrs = g.neighbor_ids(a);
        for &b in nbrs {
            transition[(a, b)] = 1.0 / nbrs.len() as f64;
        }
    }
    let mut counts = DMatrix::zeros(n, n);
    let mut power = DMatrix::identity(n, n);
    for k in 1..=cfg.window.min(cfg.walk_length.saturating_sub(1)) {
        power = &power * &transition;
        // walks of `walk_length` objects hold `walk_length - k` pairs at offset k
        counts += &power * (cfg.walks_per_object * (cfg.walk_length - k)) as f64;
    }
    let transposed = counts.transpose();
    counts + transposed
}

fn positive_pmi(counts: DMatrix<f64>) -> DMatrix<f64> {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return DMatrix::zeros(counts.nrows(), counts.ncols());
    }
    let rows: Vec<f64> = counts.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = counts.column_iter().map(|c| c.sum()).collect();
    DMatrix::from_fn(counts.nrows(), counts.ncols(), |i, j| {
        let c = counts[(i, j)];
        if c <= 0.0 {
            0.0
        } else {
            (c * total / (rows[i] * cols[j])).ln().max(0.0)
        }
    })
}

fn spectral_embedding(m: &DMatrix<f64>, dim: usize, seed: u64) -> EmbeddingTable {
    let n = m.nrows();
    let k = dim.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let start = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = start.qr().q();
    for _ in 0..SUBSPACE_ITERATIONS {
        q = (m * &q).qr().q();
    }
    let projected = q.transpose() * m * &q;
    let symmetric = (&projected + projected.transpose()) * 0.5;
    let eig = SymmetricEigen::new(symmetric);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let largest = order.first().map_or(0.0, |&i| eig.eigenvalues[i].abs());
    let ritz = &q * &eig.eigenvectors;
    let mut vectors = vec![vec![0.0; dim]; n];
    for (slot, &c) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[c].abs();
        // near-null directions carry no co-occurrence signal
        if largest == 0.0 || lambda <= 1e-9 * largest {
            continue;
        }
        let scale = lambda.sqrt();
        for (i, v) in vectors.iter_mut().enumerate() {
            v[slot] = ritz[(i, c)] * scale;
        }
    }
    EmbeddingTable::new(dim, vectors)
}

/// Identity of a cached table: graph, content digest, configuration, seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub graph_id: String,
    pub graph_digest: String,
    pub config: String,
    pub seed: u64,
    pub method_version: u32,
}

impl CacheKey {
    pub fn new(g: &HeterogeneousGraph, cfg: &EmbedConfig, seed: u64) -> Self {
        let mut h = Sha256::new();
        for o in g.objects() {
            h.update((o.id as u64).to_le_bytes());
            h.update((o.type_id as u64).to_le_bytes());
        }
        for l in g.links() {
            for x in [l.src, l.dst, l.link_type] {
                h.update((x as u64).to_le_bytes());
            }
        }
        Self {
            graph_id: g.id().to_string(),
            graph_digest: hex::encode(h.finalize()),
            config: serde_json::to_string(cfg).expect("config serializes"),
            seed,
            method_version: METHOD_VERSION,
        }
    }

    fn encode(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}\n{}",
            self.graph_id, self.graph_digest, self.config, self.seed, self.method_version
        )
    }
}

pub fn save_cache(path: &Path, key: &CacheKey, table: &EmbeddingTable) -> Result<(), EmbedError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    let key = key.encode();
    buf.extend_from_slice(&(key.len() as u64).to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    buf.extend_from_slice(&(table.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(table.dim as u64).to_le_bytes());
    for v in &table.vectors {
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Loads a cached table; `Ok(None)` when the file belongs to another key.
pub fn load_cache(path: &Path, key: &CacheKey) -> Result<Option<EmbeddingTable>, EmbedError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8], EmbedError> {
        if cur.len() < n {
            return Err(EmbedError::Corrupt("truncated".into()));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(8)? != CACHE_MAGIC {
        return Err(EmbedError::Corrupt("bad magic".into()));
    }
    let read_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let key_len = read_u64(take(8)?) as usize;
    let stored = std::str::from_utf8(take(key_len)?).map_err(|e| EmbedError::Corrupt(e.to_string()))?;
    if stored != key.encode() {
        return Ok(None);
    }
    let n = read_u64(take(8)?) as usize;
    let dim = read_u64(take(8)?) as usize;
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = take(dim * 8)?;
        vectors.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    Ok(Some(EmbeddingTable::new(dim, vectors)))
}
