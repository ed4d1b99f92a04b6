//! Hyper-graphs over subgraph embeddings, the two-channel hyper-GNN,
//! prototypes and pair embeddings, and distance-based classification.

use std::sync::Arc;

use autodiff::{RowGroups, Tape, Tensor, Var};

use crate::model::{ModelConfig, ModelError, ParamBinder};

/// Cosine similarity; zero vectors are dissimilar to everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Homophily,
    Heterophily,
}

/// Similarity graph over embeddings. Edges are unordered pairs `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGraph {
    pub n: usize,
    pub homophily: Vec<(usize, usize)>,
    pub heterophily: Vec<(usize, usize)>,
    pub theta_ho: f64,
    pub theta_he: f64,
}

impl HyperGraph {
    /// Sorted neighbor lists of one channel.
    pub fn neighbors(&self, channel: Channel) -> Vec<Vec<usize>> {
        let edges = match channel {
            Channel::Homophily => &self.homophily,
            Channel::Heterophily => &self.heterophily,
        };
        let mut out = vec![Vec::new(); self.n];
        for &(i, j) in edges {
            out[i].push(j);
            out[j].push(i);
        }
        out.iter_mut().for_each(|l| l.sort_unstable());
        out
    }
}

pub fn build_hypergraph(embs: &[&[f64]], theta_ho: f64, theta_he: f64) -> Result<HyperGraph, ModelError> {
    if theta_ho <= theta_he {
        return Err(ModelError::Invalid(format!(
            "theta_ho ({theta_ho}) must exceed theta_he ({theta_he})"
        )));
    }
    if embs.is_empty() {
        return Err(ModelError::Invalid("hyper-graph needs at least one node".into()));
    }
    let mut g = HyperGraph {
        n: embs.len(),
        homophily: Vec::new(),
        heterophily: Vec::new(),
        theta_ho,
        theta_he,
    };
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let c = cosine(embs[i], embs[j]);
            if c > theta_ho {
                g.homophily.push((i, j));
            } else if c < theta_he {
                g.heterophily.push((i, j));
            }
        }
    }
    Ok(g)
}

struct ChannelIndex {
    self_entries: Vec<(usize, usize)>,
    neighbor_entries: Vec<(usize, usize)>,
    neighbor_rows: Vec<usize>,
    offsets: Arc<[usize]>,
    sums: Arc<RowGroups>,
    has_neighbors: Vec<bool>,
}

impl ChannelIndex {
    fn new(lists: &[Vec<usize>]) -> Self {
        let mut idx = ChannelIndex {
            self_entries: Vec::new(),
            neighbor_entries: Vec::new(),
            neighbor_rows: Vec::new(),
            offsets: Arc::from(Vec::new()),
            sums: Arc::new(RowGroups::new()),
            has_neighbors: Vec::with_capacity(lists.len()),
        };
        let mut offsets = vec![0];
        for (i, l) in lists.iter().enumerate() {
            for &j in l {
                idx.self_entries.push((i, 0));
                idx.neighbor_entries.push((j, 1));
                idx.neighbor_rows.push(j);
            }
            offsets.push(idx.neighbor_rows.len());
            idx.has_neighbors.push(!l.is_empty());
        }
        idx.sums = Arc::new(RowGroups::contiguous(&offsets));
        idx.offsets = offsets.into();
        idx
    }
}

/// Several hyper-graphs stacked for one pass. Group `g` lists the rows of
/// the embedding matrix forming hyper-graph `g`.
pub struct HyperBatch {
    rows: Vec<usize>,
    graphs: Vec<HyperGraph>,
    homophily: ChannelIndex,
    heterophily: ChannelIndex,
    pool: Arc<RowGroups>,
    direct_pool: Arc<RowGroups>,
}

impl HyperBatch {
    /// Edges are decided on the current values of `z`.
    pub fn new(z: &Tensor, groups: &[Vec<usize>], theta_ho: f64, theta_he: f64) -> Result<Self, ModelError> {
        let mut rows = Vec::new();
        let mut graphs = Vec::with_capacity(groups.len());
        let mut ho = Vec::new();
        let mut he = Vec::new();
        let mut pools = Vec::with_capacity(groups.len());
        for group in groups {
            if let Some(&r) = group.iter().find(|&&r| r >= z.rows()) {
                return Err(ModelError::Invalid(format!("row {r} outside {} embeddings", z.rows())));
            }
            let embs: Vec<&[f64]> = group.iter().map(|&r| z.row_slice(r)).collect();
            let g = build_hypergraph(&embs, theta_ho, theta_he)?;
            let base = rows.len();
            for l in g.neighbors(Channel::Homophily) {
                ho.push(l.into_iter().map(|j| base + j).collect());
            }
            for l in g.neighbors(Channel::Heterophily) {
                he.push(l.into_iter().map(|j| base + j).collect());
            }
            pools.push((base..base + group.len()).collect::<Vec<_>>());
            rows.extend_from_slice(group);
            graphs.push(g);
        }
        Ok(Self {
            rows,
            graphs,
            homophily: ChannelIndex::new(&ho),
            heterophily: ChannelIndex::new(&he),
            pool: Arc::new(RowGroups::means(pools)),
            direct_pool: Arc::new(RowGroups::means(groups.iter().map(|g| g.iter().copied()))),
        })
    }

    pub fn graphs(&self) -> &[HyperGraph] {
        &self.graphs
    }
}

fn channel_layer(p: &ParamBinder, idx: &ChannelIndex, state: Var, name: &str, slope: f64) -> Result<Var, ModelError> {
    if idx.neighbor_rows.is_empty() {
        return Ok(state);
    }
    let t = p.tape();
    let a = t.concat_cols(&[p.get(&format!("{name}.self")), p.get(&format!("{name}.nb"))])?;
    let scores = t.matmul(state, a)?;
    let logits = t.add(
        t.gather_elements(scores, &idx.self_entries)?,
        t.gather_elements(scores, &idx.neighbor_entries)?,
    )?;
    let alpha = t.segment_softmax(t.leaky_relu(logits, slope)?, &idx.offsets)?;
    let weighted = t.scale_rows(t.gather_rows(state, &idx.neighbor_rows)?, alpha)?;
    let update = t.leaky_relu(t.aggregate_rows(weighted, &idx.sums)?, slope)?;
    // nodes without neighbors in this channel keep their previous state
    Ok(t.select_rows(&idx.has_neighbors, update, state)?)
}

/// Per-node `[z_ho ⧺ z_he]` after the configured number of layers.
pub fn hyper_gnn(p: &ParamBinder, batch: &HyperBatch, z: Var, cfg: &ModelConfig) -> Result<Var, ModelError> {
    let t = p.tape();
    let z0 = t.gather_rows(z, &batch.rows)?;
    let (mut ho, mut he) = (z0, z0);
    for l in 1..=cfg.hyper_layers {
        ho = channel_layer(p, &batch.homophily, ho, &format!("hyper.l{l}.ho"), cfg.leaky_slope)?;
        he = channel_layer(p, &batch.heterophily, he, &format!("hyper.l{l}.he"), cfg.leaky_slope)?;
    }
    Ok(t.concat_cols(&[ho, he])?)
}

/// One pooled row per group: mean hyper-GNN output, or the plain mean of
/// the group's embeddings when the variant drops the hyper-graph stage.
pub fn pool_groups(p: &ParamBinder, batch: &HyperBatch, z: Var, cfg: &ModelConfig) -> Result<Var, ModelError> {
    let t = p.tape();
    if !cfg.variant.uses_hyper() {
        return Ok(t.aggregate_rows(z, &batch.direct_pool)?);
    }
    let nodes = hyper_gnn(p, batch, z, cfg)?;
    Ok(t.aggregate_rows(nodes, &batch.pool)?)
}

/// Softmax over negative squared distances. Returns a column with
/// `queries x prototypes` entries; entry `q * P + y` is `p(y | q)`.
pub fn classify(t: &Tape, queries: Var, prototypes: Var) -> Result<Var, ModelError> {
    let [nq, dq] = t.shape(queries);
    let [np, dp] = t.shape(prototypes);
    if dq != dp || np == 0 {
        return Err(ModelError::Invalid(format!(
            "cannot compare {nq}x{dq} queries with {np}x{dp} prototypes"
        )));
    }
    let qi: Vec<usize> = (0..nq).flat_map(|q| std::iter::repeat_n(q, np)).collect();
    let pi: Vec<usize> = (0..nq).flat_map(|_| 0..np).collect();
    let diff = t.add(t.gather_rows(queries, &qi)?, t.neg(t.gather_rows(prototypes, &pi)?)?)?;
    let ones = t.constant(Tensor::new(dq, 1, vec![1.0; dq])?);
    let dist = t.matmul(t.mul(diff, diff)?, ones)?;
    let offsets: Vec<usize> = (0..=nq).map(|q| q * np).collect();
    Ok(t.segment_softmax(t.neg(dist)?, &offsets.into())?)
}

/// `-mean ln p(label)` with probabilities clamped at `1e-12`.
pub fn episode_loss(t: &Tape, probs: Var, labels: &[usize], n_classes: usize) -> Result<Var, ModelError> {
    if labels.is_empty() || labels.iter().any(|&y| y >= n_classes) {
        return Err(ModelError::Invalid("labels must be nonempty and within the class count".into()));
    }
    let picks: Vec<(usize, usize)> = labels.iter().enumerate().map(|(q, &y)| (q * n_classes + y, 0)).collect();
    let p = t.clamp_min(t.gather_elements(probs, &picks)?, 1e-12)?;
    Ok(t.neg(t.mean_rows(t.log(p)?)?)?)
}

/// Splits the flat column from [`classify`] into one row per query.
pub fn probability_rows(probs: &Tensor, n_classes: usize) -> Vec<Vec<f64>> {
    probs.data().chunks(n_classes).map(<[f64]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Variant};

    fn cfg(d: usize) -> ModelConfig {
        ModelConfig {
            d_h: d,
            d_gv: 4,
            variant: Variant::NoGv,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn threshold_examples() {
        let a = [1.0, 0.0];
        let near = [0.8, 0.6];
        let mid = [0.5, 0.75f64.sqrt()];
        let far = [0.1, 0.99f64.sqrt()];
        let g = build_hypergraph(&[&a, &near, &mid, &far], 0.75, 0.15).unwrap();
        assert!(g.homophily.contains(&(0, 1)));
        assert!(!g.homophily.contains(&(0, 2)) && !g.heterophily.contains(&(0, 2)));
        assert!(g.heterophily.contains(&(0, 3)));
        assert!(build_hypergraph(&[&a], 0.1, 0.2).is_err());
        let zero = [0.0, 0.0];
        let g = build_hypergraph(&[&a, &zero], 0.75, 0.15).unwrap();
        assert_eq!(g.heterophily, vec![(0, 1)]);
    }

    fn run_hyper(z: Tensor, groups: &[Vec<usize>], drop_he: bool) -> Tensor {
        let c = cfg(z.cols());
        let params = ModelParams::new(&c, 5);
        let mut batch = HyperBatch::new(&z, groups, c.theta_ho, c.theta_he).unwrap();
        if drop_he {
            batch.heterophily = ChannelIndex::new(&vec![Vec::new(); batch.rows.len()]);
        }
        let tape = Tape::new();
        let p = ParamBinder::new(&tape, &params, true);
        let zv = tape.constant(z);
        tape.value(hyper_gnn(&p, &batch, zv, &c).unwrap())
    }

    #[test]
    fn isolated_node_keeps_its_embedding() {
        let z = Tensor::from_rows(&[vec![0.3, -0.2, 0.5]]).unwrap();
        let out = run_hyper(z, &[vec![0]], false);
        assert_eq!(out.row_slice(0), &[0.3, -0.2, 0.5, 0.3, -0.2, 0.5]);
    }

    #[test]
    fn channels_are_separate() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0, 0.1], vec![0.9, 0.1, 0.1], vec![0.0, 1.0, 0.0], vec![0.1, 0.0, 1.0]])
            .unwrap();
        let all = run_hyper(z.clone(), &[vec![0, 1, 2, 3]], false);
        let no_he = run_hyper(z, &[vec![0, 1, 2, 3]], true);
        for r in 0..4 {
            assert_eq!(all.row_slice(r)[..3], no_he.row_slice(r)[..3]);
        }
        assert_ne!(all, no_he);
    }

    #[test]
    fn classify_examples() {
        let t = Tape::new();
        let q = t.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let one = t.constant(Tensor::from_rows(&[vec![3.0, 1.0]]).unwrap());
        assert_eq!(t.value(classify(&t, q, one).unwrap()).data(), &[1.0]);
        let two = t.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap());
        let p = t.value(classify(&t, q, two).unwrap());
        let e = (-1f64).exp();
        assert!((p.data()[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p.data()[0] - 0.73106).abs() < 1e-5);
        let eq = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap());
        assert_eq!(t.value(classify(&t, q, eq).unwrap()).data(), &[0.5, 0.5]);
        let bad = t.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        assert!(classify(&t, q, bad).is_err());
    }

    #[test]
    fn loss_examples() {
        let t = Tape::new();
        let perfect = t.constant(Tensor::column(vec![1.0, 0.0, 0.0, 1.0]));
        assert_eq!(t.value(episode_loss(&t, perfect, &[0, 1], 2).unwrap()).item(), 0.0);
        let uniform = t.constant(Tensor::column(vec![0.2; 5]));
        let l = t.value(episode_loss(&t, uniform, &[3], 5).unwrap()).item();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let half = t.constant(Tensor::column(vec![0.5, 0.5]));
        assert!((t.value(episode_loss(&t, half, &[1], 2).unwrap()).item() - 2f64.ln()).abs() < 1e-12);
        let zero = t.constant(Tensor::column(vec![0.0, 1.0]));
        let l = t.value(episode_loss(&t, zero, &[0], 2).unwrap()).item();
        assert!((l + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn pooling_is_order_invariant() {
        let rows = vec![vec![1.0, 0.2, 0.1], vec![0.9, 0.3, 0.1], vec![0.0, 1.0, 0.0], vec![-0.5, 0.1, 1.0]];
        let c = cfg(3);
        let params = ModelParams::new(&c, 9);
        let pool = |order: Vec<usize>| {
            let z = Tensor::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap();
            let batch = HyperBatch::new(&z, &[vec![0, 1, 2, 3]], c.theta_ho, c.theta_he).unwrap();
            let tape = Tape::new();
            let p = ParamBinder::new(&tape, &params, true);
            let zv = tape.constant(z);
            tape.value(pool_groups(&p, &batch, zv, &c).unwrap())
        };
        assert_eq!(pool(vec![0, 1, 2, 3]), pool(vec![3, 1, 0, 2]));
    }
}
