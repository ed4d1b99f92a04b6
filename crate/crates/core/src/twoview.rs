//! Object-view and graph-view convolutions over normalized subgraphs.
//!
//! All subgraphs of an episode are stacked into one object matrix so the
//! whole episode runs as a few dozen tape operations. Index lists are built
//! once per batch by [`SubgraphBatch::new`].

use std::collections::BTreeMap;
use std::sync::Arc;

use autodiff::{RowGroups, Tensor, Var};

use crate::extract::NormalizedSubgraph;
use crate::hetgraph::{bfs_distances, GraphView};
use crate::model::{projection_name, ModelConfig, ModelError, ModelParams, ParamBinder};

/// Distance-and-rank encoding of local object `i`.
///
/// Query objects are labeled by convention (`u` as distances `(0, 1)`, `v`
/// as `(1, 0)`, rank 0); other objects use their distances to `u` and `v`
/// inside the subgraph, clamped to the last bucket, and their slot index.
pub fn structural_feature(sub: &NormalizedSubgraph, i: usize, d_max: usize, n_slots: usize) -> Vec<f64> {
    let du = bfs_distances(sub, sub.u);
    let dv = bfs_distances(sub, sub.v);
    structural_from(sub, i, &du, &dv, d_max, n_slots)
}

fn structural_from(
    sub: &NormalizedSubgraph,
    i: usize,
    du: &[Option<usize>],
    dv: &[Option<usize>],
    d_max: usize,
    n_slots: usize,
) -> Vec<f64> {
    let (a, b, rank) = if i == sub.u {
        (0, 1, 0)
    } else if i == sub.v {
        (1, 0, 0)
    } else {
        let far = d_max - 1;
        (
            du[i].unwrap_or(far).min(far),
            dv[i].unwrap_or(far).min(far),
            sub.slot_of(i),
        )
    };
    let mut out = vec![0.0; d_max + n_slots + 1];
    out[a] += 1.0;
    out[b] += 1.0;
    out[d_max + rank.min(n_slots)] = 1.0;
    out
}

struct ProjectionGroup {
    name: String,
    in_dim: usize,
    features: Tensor,
}

/// Index structures for a stack of subgraphs.
pub struct SubgraphBatch {
    n_subgraphs: usize,
    n_objects: usize,
    projections: Vec<ProjectionGroup>,
    /// Object row -> row of the concatenated projection outputs.
    projection_order: Vec<usize>,
    structural: Tensor,
    // object view: one segment per (subgraph, query object, slot)
    att_query: Vec<(usize, usize)>,
    att_neighbor: Vec<(usize, usize)>,
    neighbor_rows: Vec<usize>,
    segment_offsets: Arc<[usize]>,
    segment_sums: Arc<RowGroups>,
    /// Per (subgraph, slot): its `u` and `v` segments.
    slot_pairs: Arc<RowGroups>,
    slot_offsets: Arc<[usize]>,
    slot_sums: Arc<RowGroups>,
    // graph view
    neighbor_means: Arc<RowGroups>,
    pool_means: Arc<RowGroups>,
}

impl SubgraphBatch {
    pub fn new(subs: &[&NormalizedSubgraph], cfg: &ModelConfig) -> Result<Self, ModelError> {
        let mut by_projection: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut features: Vec<&[f64]> = Vec::new();
        let mut structural = Vec::new();
        let mut att_query = Vec::new();
        let mut att_neighbor = Vec::new();
        let mut neighbor_rows = Vec::new();
        let mut segment_offsets = vec![0];
        let mut slot_pairs = RowGroups::new();
        let mut slot_offsets = vec![0];
        let mut neighbor_lists: Vec<Vec<usize>> = Vec::new();
        let mut pools: Vec<Vec<usize>> = Vec::new();
        let mut base = 0;
        let mut n_segments = 0;

        for sub in subs {
            let n_type = sub.n_type();
            if n_type > cfg.n_slots {
                return Err(ModelError::TooManyTypes {
                    found: n_type,
                    max: cfg.n_slots,
                });
            }
            if sub.is_empty() {
                return Err(ModelError::Invalid("empty subgraph".into()));
            }
            let du = bfs_distances(*sub, sub.u);
            let dv = bfs_distances(*sub, sub.v);
            let slots: Vec<usize> = (0..sub.len()).map(|i| sub.slot_of(i)).collect();
            for i in 0..sub.len() {
                by_projection
                    .entry((slots[i], sub.features[i].len()))
                    .or_default()
                    .push(base + i);
                features.push(&sub.features[i]);
                structural.extend(structural_from(sub, i, &du, &dv, cfg.d_max, cfg.n_slots));
                neighbor_lists.push(sub.neighbor_ids(i).iter().map(|&j| base + j).collect());
            }
            pools.push((base..base + sub.len()).collect());

            for (q, dist) in [(sub.u, &du), (sub.v, &dv)] {
                for k in 1..=n_type {
                    for i in 0..sub.len() {
                        let near = dist[i].is_some_and(|d| d >= 1 && d <= cfg.hop);
                        if i != q && near && slots[i] == k {
                            att_query.push((base + q, k - 1));
                            att_neighbor.push((base + i, k - 1));
                            neighbor_rows.push(base + i);
                        }
                    }
                    segment_offsets.push(neighbor_rows.len());
                }
            }
            // segments of u occupy [n_segments, n_segments + n_type), then v's
            for k in 0..n_type {
                slot_pairs.push_group([(n_segments + k, 1.0), (n_segments + n_type + k, 1.0)]);
            }
            n_segments += 2 * n_type;
            slot_offsets.push(slot_offsets.last().copied().unwrap_or(0) + n_type);
            base += sub.len();
        }

        let mut projections = Vec::new();
        let mut projection_order = vec![0; base];
        let mut cursor = 0;
        for ((slot, in_dim), rows) in by_projection {
            let mut data = Vec::with_capacity(rows.len() * in_dim);
            for &r in &rows {
                data.extend_from_slice(features[r]);
                projection_order[r] = cursor;
                cursor += 1;
            }
            projections.push(ProjectionGroup {
                name: projection_name(slot, in_dim),
                in_dim,
                features: Tensor::new(rows.len(), in_dim, data)?,
            });
        }

        let segment_sums = RowGroups::contiguous(&segment_offsets);
        let slot_sums = RowGroups::contiguous(&slot_offsets);
        Ok(Self {
            n_subgraphs: subs.len(),
            n_objects: base,
            projections,
            projection_order,
            structural: Tensor::new(base, cfg.structural_dim(), structural)?,
            att_query,
            att_neighbor,
            neighbor_rows,
            segment_offsets: segment_offsets.into(),
            segment_sums: Arc::new(segment_sums),
            slot_pairs: Arc::new(slot_pairs),
            slot_offsets: slot_offsets.into(),
            slot_sums: Arc::new(slot_sums),
            neighbor_means: Arc::new(RowGroups::means(neighbor_lists)),
            pool_means: Arc::new(RowGroups::means(pools)),
        })
    }

    pub fn n_subgraphs(&self) -> usize {
        self.n_subgraphs
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    /// Creates missing projections; returns the names created.
    pub fn ensure_params(&self, params: &mut ModelParams, cfg: &ModelConfig) -> Vec<String> {
        let mut created = Vec::new();
        for g in &self.projections {
            if params.ensure(&g.name, g.in_dim, cfg.d_h) {
                log::debug!("created projection {} ({} x {})", g.name, g.in_dim, cfg.d_h);
                created.push(g.name.clone());
            }
        }
        created
    }
}

/// Outputs of the object view, kept for inspection.
pub struct ObjectView {
    /// One row per subgraph.
    pub z: Var,
    /// Neighbor attention, one entry per (segment, neighbor).
    pub alpha: Var,
    /// Slot weights, one entry per (subgraph, slot).
    pub beta: Var,
    pub segment_offsets: Arc<[usize]>,
    pub slot_offsets: Arc<[usize]>,
}

/// Slot-projected features, one row per stacked object.
pub fn project_features(p: &ParamBinder, batch: &SubgraphBatch) -> Result<Var, ModelError> {
    let t = p.tape();
    let mut parts = Vec::with_capacity(batch.projections.len());
    for g in &batch.projections {
        let x = t.constant(g.features.clone());
        parts.push(t.matmul(x, p.get(&g.name))?);
    }
    let stacked = t.concat_rows(&parts)?;
    Ok(t.gather_rows(stacked, &batch.projection_order)?)
}

pub fn object_view(p: &ParamBinder, batch: &SubgraphBatch, h: Var, cfg: &ModelConfig) -> Result<ObjectView, ModelError> {
    let t = p.tape();
    let a_self: Vec<Var> = (1..=cfg.n_slots).map(|k| p.get(&format!("ov.att.slot{k}.self"))).collect();
    let a_nb: Vec<Var> = (1..=cfg.n_slots).map(|k| p.get(&format!("ov.att.slot{k}.nb"))).collect();
    let s_self = t.matmul(h, t.concat_cols(&a_self)?)?;
    let s_nb = t.matmul(h, t.concat_cols(&a_nb)?)?;
    let logits = t.add(
        t.gather_elements(s_self, &batch.att_query)?,
        t.gather_elements(s_nb, &batch.att_neighbor)?,
    )?;
    let alpha = t.segment_softmax(t.leaky_relu(logits, cfg.leaky_slope)?, &batch.segment_offsets)?;
    let weighted = t.scale_rows(t.gather_rows(h, &batch.neighbor_rows)?, alpha)?;
    let slot_emb = t.leaky_relu(t.aggregate_rows(weighted, &batch.segment_sums)?, cfg.leaky_slope)?;
    let f = t.aggregate_rows(slot_emb, &batch.slot_pairs)?;

    let hidden = t.tanh(t.add_row(t.matmul(f, p.get("ov.type.w"))?, p.get("ov.type.b"))?)?;
    let w = t.matmul(hidden, p.get("ov.type.a"))?;
    let beta = t.segment_softmax(w, &batch.slot_offsets)?;
    let z = t.aggregate_rows(t.scale_rows(f, beta)?, &batch.slot_sums)?;
    Ok(ObjectView {
        z,
        alpha,
        beta,
        segment_offsets: Arc::clone(&batch.segment_offsets),
        slot_offsets: Arc::clone(&batch.slot_offsets),
    })
}

pub fn graph_view(p: &ParamBinder, batch: &SubgraphBatch, h: Var) -> Result<Var, ModelError> {
    let t = p.tape();
    let mut x = t.concat_cols(&[t.constant(batch.structural.clone()), h])?;
    for l in 1..=2 {
        let own = t.matmul(x, p.get(&format!("gv.l{l}.self")))?;
        let neigh = t.aggregate_rows(t.matmul(x, p.get(&format!("gv.l{l}.neigh")))?, &batch.neighbor_means)?;
        x = t.relu(t.add_row(t.add(own, neigh)?, p.get(&format!("gv.l{l}.b")))?)?;
    }
    let pooled = t.aggregate_rows(x, &batch.pool_means)?;
    Ok(t.relu(t.matmul(pooled, p.get("gv.out"))?)?)
}

/// `[z_ov ⧺ z_gv]` per subgraph, with views dropped per the variant.
pub fn embed_subgraphs(p: &ParamBinder, batch: &SubgraphBatch, cfg: &ModelConfig) -> Result<Var, ModelError> {
    let t = p.tape();
    let h = project_features(p, batch)?;
    let mut parts = Vec::new();
    if cfg.variant.uses_object_view() {
        parts.push(object_view(p, batch, h, cfg)?.z);
    }
    if cfg.variant.uses_graph_view() {
        parts.push(graph_view(p, batch, h)?);
    }
    Ok(t.concat_cols(&parts)?)
}
