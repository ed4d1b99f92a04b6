//! Type-restricted subgraphs of a graph structure, repaired so every object
//! reaches both query objects, with types mapped to similarity-rank slots.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingTable;
use crate::hetgraph::{GraphView, HeterogeneousGraph, ObjectId, TypeId};

use super::paths::GraphStructure;

/// Link type carried by links added during repair.
pub const SYNTHETIC_LINK: TypeId = usize::MAX;

/// A link between local object indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubLink {
    pub a: usize,
    pub b: usize,
    pub link_type: TypeId,
}

impl SubLink {
    pub fn is_synthetic(&self) -> bool {
        self.link_type == SYNTHETIC_LINK
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSubgraph {
    /// Global ids, ascending; local index `i` refers to `objects[i]`.
    pub objects: Vec<ObjectId>,
    pub object_types: Vec<TypeId>,
    pub features: Vec<Vec<f64>>,
    pub links: Vec<SubLink>,
    /// Selected types in rank order: `selected_types[k - 1]` fills slot `k`.
    pub selected_types: Vec<TypeId>,
    /// Type names of `selected_types`, same order.
    pub selected_type_names: Vec<String>,
    pub u: usize,
    pub v: usize,
    adjacency: Vec<Vec<usize>>,
}

impl NormalizedSubgraph {
    pub fn new(
        objects: Vec<ObjectId>,
        object_types: Vec<TypeId>,
        features: Vec<Vec<f64>>,
        links: Vec<SubLink>,
        selected_types: Vec<TypeId>,
        selected_type_names: Vec<String>,
        u: usize,
        v: usize,
    ) -> Self {
        let adjacency = adjacency_of(objects.len(), &links);
        Self {
            objects,
            object_types,
            features,
            links,
            selected_types,
            selected_type_names,
            u,
            v,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn n_type(&self) -> usize {
        self.selected_types.len()
    }

    /// Rank slot (1-based) of a local object's type.
    pub fn slot_of(&self, local: usize) -> usize {
        let t = self.object_types[local];
        1 + self
            .selected_types
            .iter()
            .position(|&s| s == t)
            .expect("object types are selected types")
    }

    pub fn local_of(&self, global: ObjectId) -> Option<usize> {
        self.objects.binary_search(&global).ok()
    }

    pub fn synthetic_links(&self) -> usize {
        self.links.iter().filter(|l| l.is_synthetic()).count()
    }
}

impl GraphView for NormalizedSubgraph {
    fn node_count(&self) -> usize {
        self.objects.len()
    }

    fn neighbor_ids(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }
}

fn adjacency_of(n: usize, links: &[SubLink]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for l in links {
        adj[l.a].push(l.b);
        adj[l.b].push(l.a);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// The subgraphs generated for one query pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphSet {
    pub graph_id: String,
    pub u: ObjectId,
    pub v: ObjectId,
    pub subgraphs: Vec<NormalizedSubgraph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SubgraphConfig {
    pub n_type_min: usize,
    pub n_type_max: usize,
    /// Draws per `N_type` setting.
    pub m: usize,
}

impl Default for SubgraphConfig {
    fn default() -> Self {
        Self {
            n_type_min: 2,
            n_type_max: 6,
            m: 20,
        }
    }
}

impl SubgraphConfig {
    pub fn n_subg(&self) -> usize {
        self.m * (self.n_type_max + 1 - self.n_type_min)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean embedding of the structure's objects of type `t` (zero if none).
pub fn type_mean(t: TypeId, s: &GraphStructure, g: &HeterogeneousGraph, emb: &EmbeddingTable) -> Vec<f64> {
    let mut mean = vec![0.0; emb.dim()];
    let mut count = 0usize;
    for &o in &s.objects {
        if g.type_of(o) == t {
            count += 1;
            for (m, x) in mean.iter_mut().zip(emb.get(o)) {
                *m += x;
            }
        }
    }
    if count > 0 {
        mean.iter_mut().for_each(|m| *m /= count as f64);
    }
    mean
}

/// Cosine between the mean embeddings of two types within `s`; a zero mean
/// has similarity 0 with everything.
pub fn type_similarity(
    a_i: TypeId,
    a_j: TypeId,
    s: &GraphStructure,
    g: &HeterogeneousGraph,
    emb: &EmbeddingTable,
) -> f64 {
    cosine(&type_mean(a_i, s, g, emb), &type_mean(a_j, s, g, emb))
}

/// Adds synthetic links until every object reaches both query objects.
///
/// Non-query objects are visited in ascending index order. The first object
/// missing a query object gets a link to it (to `v` when it misses both) and
/// reachability is recomputed. If `u` and `v` are still apart once every
/// other object is settled, a final `u - v` link joins them. Returns the
/// number of links added.
pub fn repair_isolated(n: usize, links: &mut Vec<SubLink>, u: usize, v: usize) -> usize {
    let mut adj = adjacency_of(n, links);
    let mut added = 0;
    loop {
        let from_u = reach(&adj, u);
        let from_v = reach(&adj, v);
        let stray = (0..n).find(|&i| i != u && i != v && !(from_u[i] && from_v[i]));
        let (a, b) = match stray {
            Some(i) if !from_v[i] => (i, v),
            Some(i) => (i, u),
            None if !from_u[v] => (u, v),
            None => return added,
        };
        links.push(SubLink {
            a: a.min(b),
            b: a.max(b),
            link_type: SYNTHETIC_LINK,
        });
        adj[a].push(b);
        adj[b].push(a);
        added += 1;
    }
}

fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    seen
}

/// Draws `m` type subsets for every `N_type` in the configured range,
/// induces, repairs and rank-maps each subgraph.
pub fn generate_subgraphs(
    g: &HeterogeneousGraph,
    s: &GraphStructure,
    emb: &EmbeddingTable,
    cfg: &SubgraphConfig,
    seed: u64,
) -> SubgraphSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<TypeId, usize> = BTreeMap::new();
    for &o in &s.objects {
        *counts.entry(g.type_of(o)).or_default() += 1;
    }
    let (tu, tv) = (g.type_of(s.u), g.type_of(s.v));
    let mut forced = vec![tu];
    if tv != tu {
        forced.push(tv);
    }

    // rank key: summed similarity to both query types, then type name
    let means: BTreeMap<TypeId, Vec<f64>> = counts.keys().map(|&t| (t, type_mean(t, s, g, emb))).collect();
    let score = |t: TypeId| cosine(&means[&t], &means[&tu]) + cosine(&means[&t], &means[&tv]);

    let mut subgraphs = Vec::with_capacity(cfg.n_subg());
    for n_type in cfg.n_type_min..=cfg.n_type_max {
        for _ in 0..cfg.m {
            let target = n_type.min(counts.len()).max(forced.len());
            let mut selected = forced.clone();
            let mut pool: Vec<(TypeId, usize)> = counts
                .iter()
                .filter(|(t, _)| !forced.contains(t))
                .map(|(&t, &c)| (t, c))
                .collect();
            while selected.len() < target {
                let total: usize = pool.iter().map(|&(_, c)| c).sum();
                let mut pick = rng.gen_range(0..total);
                let idx = pool
                    .iter()
                    .position(|&(_, c)| {
                        if pick < c {
                            true
                        } else {
                            pick -= c;
                            false
                        }
                    })
                    .expect("pick falls inside the pool");
                selected.push(pool.remove(idx).0);
            }
            selected.sort_by(|&a, &b| {
                score(b)
                    .total_cmp(&score(a))
                    .then_with(|| g.type_name(a).cmp(g.type_name(b)))
            });
            subgraphs.push(induce(g, s, selected));
        }
    }
    SubgraphSet {
        graph_id: g.id().to_string(),
        u: s.u,
        v: s.v,
        subgraphs,
    }
}

fn induce(g: &HeterogeneousGraph, s: &GraphStructure, selected: Vec<TypeId>) -> NormalizedSubgraph {
    let objects: Vec<ObjectId> = s
        .objects
        .iter()
        .copied()
        .filter(|&o| selected.contains(&g.type_of(o)))
        .collect();
    let local = |o: ObjectId| objects.binary_search(&o).ok();
    let mut links: Vec<SubLink> = s
        .links
        .iter()
        .filter_map(|l| {
            Some(SubLink {
                a: local(l.src)?,
                b: local(l.dst)?,
                link_type: l.link_type,
            })
        })
        .collect();
    let u = local(s.u).expect("query types are selected");
    let v = local(s.v).expect("query types are selected");
    repair_isolated(objects.len(), &mut links, u, v);
    let object_types = objects.iter().map(|&o| g.type_of(o)).collect();
    let features = objects.iter().map(|&o| g.feature(o).to_vec()).collect();
    let names = selected.iter().map(|&t| g.type_name(t).to_string()).collect();
    NormalizedSubgraph::new(objects, object_types, features, links, selected, names, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{GraphParts, Link, RawObject};

    fn reaches_both(n: usize, links: &[SubLink], u: usize, v: usize) -> bool {
        let adj = adjacency_of(n, links);
        let (a, b) = (reach(&adj, u), reach(&adj, v));
        (0..n).all(|i| a[i] && b[i])
    }

    #[test]
    fn connected_subgraph_needs_no_repair() {
        let mut links = vec![SubLink { a: 0, b: 2, link_type: 0 }, SubLink { a: 2, b: 1, link_type: 0 }];
        assert_eq!(repair_isolated(3, &mut links, 0, 1), 0);
    }

    #[test]
    fn dropped_intermediate_is_bridged_once() {
        // u=0, v=1, q=2, r=3 after p is dropped: q-r and q-v survive
        let mut links = vec![SubLink { a: 2, b: 3, link_type: 0 }, SubLink { a: 1, b: 2, link_type: 0 }];
        assert_eq!(repair_isolated(4, &mut links, 0, 1), 1);
        assert_eq!(links[2], SubLink { a: 0, b: 2, link_type: SYNTHETIC_LINK });
        assert!(reaches_both(4, &links, 0, 1));
    }

    #[test]
    fn two_isolated_branches_take_two_links() {
        // u=0 and v=1 joined; branches 2-3 and 4-5 cut off from both
        let mut links = vec![
            SubLink { a: 0, b: 1, link_type: 0 },
            SubLink { a: 2, b: 3, link_type: 0 },
            SubLink { a: 4, b: 5, link_type: 0 },
        ];
        assert_eq!(repair_isolated(6, &mut links, 0, 1), 2);
        assert_eq!(links[3], SubLink { a: 1, b: 2, link_type: SYNTHETIC_LINK });
        assert_eq!(links[4], SubLink { a: 1, b: 4, link_type: SYNTHETIC_LINK });
        assert!(reaches_both(6, &links, 0, 1));
    }

    #[test]
    fn disconnected_queries_get_a_direct_link() {
        let mut links = vec![];
        assert_eq!(repair_isolated(2, &mut links, 0, 1), 1);
        assert!(reaches_both(2, &links, 0, 1));
    }

    fn fig4_graph() -> HeterogeneousGraph {
        // u=0 (A), v=1 (A), p=2 (B), q=3 (C), r=4 (C); r is a dead end off q
        HeterogeneousGraph::from_parts(GraphParts {
            id: "fig".into(),
            object_types: vec!["A".into(), "B".into(), "C".into()],
            link_types: vec!["x".into()],
            objects: [0, 0, 1, 2, 2]
                .iter()
                .enumerate()
                .map(|(id, &type_id)| RawObject {
                    id,
                    type_id,
                    feature: Some(vec![id as f64]),
                })
                .collect(),
            links: [(0, 2), (2, 3), (3, 4), (3, 1)]
                .iter()
                .map(|&(src, dst)| Link { src, dst, link_type: 0 })
                .collect(),
            relations: Default::default(),
        })
        .unwrap()
    }

    #[test]
    fn type_similarity_examples() {
        let g = fig4_graph();
        let s = super::super::paths::extract_structure(&g, 0, 1, 10, 6, 100).unwrap();
        let emb = EmbeddingTable::new(
            2,
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]],
        );
        assert_eq!(type_similarity(0, 0, &s, &g, &emb), 1.0);
        assert!(type_similarity(0, 1, &s, &g, &emb).abs() < 1e-15);
        assert!((type_similarity(0, 2, &s, &g, &emb) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn subgraph_set_size_and_invariants() {
        let g = fig4_graph();
        let s = super::super::paths::extract_structure(&g, 0, 1, 10, 6, 100).unwrap();
        let emb = EmbeddingTable::new(2, vec![vec![1.0, 0.2]; 5]);
        let cfg = SubgraphConfig { n_type_min: 2, n_type_max: 3, m: 4 };
        let set = generate_subgraphs(&g, &s, &emb, &cfg, 5);
        assert_eq!(set.subgraphs.len(), 8);
        for sg in &set.subgraphs {
            assert!(sg.selected_types.contains(&0));
            assert!(reaches_both(sg.len(), &sg.links, sg.u, sg.v));
        }
        // r lies on no u-v path; the 3-type draws keep all of S
        assert_eq!(s.objects, vec![0, 1, 2, 3]);
        assert!(set.subgraphs[4..].iter().all(|sg| sg.len() == 4 && sg.synthetic_links() == 0));
        assert_eq!(set, generate_subgraphs(&g, &s, &emb, &cfg, 5));
    }

    #[test]
    fn dropping_the_bridge_type_links_u_to_q() {
        let g = fig4_graph();
        let s = super::super::paths::extract_structure(&g, 0, 1, 10, 6, 100).unwrap();
        let sg = induce(&g, &s, vec![0, 2]);
        assert_eq!(sg.objects, vec![0, 1, 3]);
        let synthetic: Vec<_> = sg.links.iter().filter(|l| l.is_synthetic()).collect();
        assert_eq!(synthetic.len(), 1);
        assert_eq!((sg.objects[synthetic[0].a], sg.objects[synthetic[0].b]), (0, 3));
    }
}
