//! Seeded synthetic corpora with planted composite relations.
//!
//! Every graph has a pool of anchor objects. A relation is a fixed
//! combination of two or three motifs; each of its pairs `(u, v)` is joined
//! by one fresh instance of every motif in the combination. Motif
//! intermediates get dedicated object types, so the motifs present between
//! two anchors can be read back exactly when no noise edges are added.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hetgraph::{
    CorpusSplit, GraphCorpus, GraphError, GraphParts, HeterogeneousGraph, Link, ObjectId, RawObject, TypeId,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("infeasible generator config: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_graphs: usize,
    /// Base objects per graph; motif intermediates come on top.
    pub objects_per_graph: usize,
    pub n_object_types: usize,
    pub n_link_types: usize,
    pub n_relations_per_graph: usize,
    pub pairs_per_relation: usize,
    /// Extra planted pairs per relation that are not written as labels.
    pub heldout_pairs_per_relation: usize,
    pub motif_catalog_size: usize,
    pub feature_dim: usize,
    pub noise_edges_fraction: f64,
    /// Reuse one type vocabulary (names and id assignment) in every graph.
    pub shared_type_vocabulary: bool,
    /// Graph ids are this prefix plus an index.
    pub id_prefix: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_graphs: 6,
            objects_per_graph: 120,
            n_object_types: 5,
            n_link_types: 3,
            n_relations_per_graph: 3,
            pairs_per_relation: 20,
            heldout_pairs_per_relation: 5,
            motif_catalog_size: 3,
            feature_dim: 8,
            noise_edges_fraction: 0.1,
            shared_type_vocabulary: false,
            id_prefix: "g".into(),
        }
    }
}

/// Typed connection patterns between two anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Motif {
    /// `u - m - v`
    Wedge,
    /// two parallel wedges
    DoubleWedge,
    /// `u - m1 - m2 - v`
    Chain3,
    /// `u - m1 - m2 - m3 - v`
    Chain4,
}

impl Motif {
    pub const CATALOG: [Motif; 4] = [Motif::Wedge, Motif::DoubleWedge, Motif::Chain3, Motif::Chain4];

    /// Distinct intermediate object types the motif uses.
    pub fn type_count(self) -> usize {
        match self {
            Motif::Wedge | Motif::DoubleWedge => 1,
            Motif::Chain3 => 2,
            Motif::Chain4 => 3,
        }
    }

    pub fn new_objects(self) -> usize {
        match self {
            Motif::Wedge => 1,
            Motif::DoubleWedge | Motif::Chain3 => 2,
            Motif::Chain4 => 3,
        }
    }
}

/// Object types and link type used when instantiating one motif.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifTyping {
    pub motif: Motif,
    pub intermediate_types: Vec<TypeId>,
    pub link_type: TypeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeOrigin {
    Motif { motif: Motif, u: ObjectId, v: ObjectId },
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifInstance {
    pub objects: Vec<ObjectId>,
    pub links: Vec<Link>,
}

/// A graph under construction: object types, links and their origins.
#[derive(Debug, Clone, Default)]
pub struct GraphDraft {
    types: Vec<TypeId>,
    links: Vec<Link>,
    origins: Vec<EdgeOrigin>,
    link_keys: HashSet<(ObjectId, ObjectId, TypeId)>,
    instances: HashMap<(Motif, ObjectId, ObjectId), MotifInstance>,
}

impl GraphDraft {
    pub fn new(types: Vec<TypeId>) -> Self {
        Self {
            types,
            ..Self::default()
        }
    }

    pub fn add_object(&mut self, t: TypeId) -> ObjectId {
        self.types.push(t);
        self.types.len() - 1
    }

    /// Adds an undirected link unless it already exists; returns whether it
    /// was added.
    pub fn add_link(&mut self, a: ObjectId, b: ObjectId, t: TypeId, origin: EdgeOrigin) -> bool {
        if a == b || !self.link_keys.insert((a.min(b), a.max(b), t)) {
            return false;
        }
        self.links.push(Link {
            src: a,
            dst: b,
            link_type: t,
        });
        self.origins.push(origin);
        true
    }

    pub fn types(&self) -> &[TypeId] {
        &self.types
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn origins(&self) -> &[EdgeOrigin] {
        &self.origins
    }
}

/// Connects `u` and `v` with one instance of `typing.motif`. Repeating the
/// call for the same motif and pair returns the existing instance.
pub fn motif_instantiate(typing: &MotifTyping, (u, v): (ObjectId, ObjectId), draft: &mut GraphDraft) -> MotifInstance {
    let key = (typing.motif, u, v);
    if let Some(existing) = draft.instances.get(&key) {
        return existing.clone();
    }
    let t = &typing.intermediate_types;
    let chain: Vec<Vec<TypeId>> = match typing.motif {
        Motif::Wedge => vec![vec![t[0]]],
        Motif::DoubleWedge => vec![vec![t[0]], vec![t[0]]],
        Motif::Chain3 => vec![vec![t[0], t[1]]],
        Motif::Chain4 => vec![vec![t[0], t[1], t[2]]],
    };
    let origin = EdgeOrigin::Motif {
        motif: typing.motif,
        u,
        v,
    };
    let mut instance = MotifInstance {
        objects: Vec::new(),
        links: Vec::new(),
    };
    for path_types in chain {
        let mut prev = u;
        for &ty in &path_types {
            let m = draft.add_object(ty);
            instance.objects.push(m);
            draft.add_link(prev, m, typing.link_type, origin);
            instance.links.push(Link {
                src: prev,
                dst: m,
                link_type: typing.link_type,
            });
            prev = m;
        }
        draft.add_link(prev, v, typing.link_type, origin);
        instance.links.push(Link {
            src: prev,
            dst: v,
            link_type: typing.link_type,
        });
    }
    draft.instances.insert(key, instance.clone());
    instance
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRelation {
    pub name: String,
    /// Indices into [`Motif::CATALOG`].
    pub motif_ids: Vec<usize>,
    pub positive_pairs: Vec<(ObjectId, ObjectId)>,
    pub heldout_pairs: Vec<(ObjectId, ObjectId)>,
}

/// Generator output: the corpus plus the ground truth behind it.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub corpus: GraphCorpus,
    pub planted: BTreeMap<String, Vec<PlantedRelation>>,
    /// Per graph, one origin per entry of `graph.links()`.
    pub provenance: BTreeMap<String, Vec<EdgeOrigin>>,
    pub motif_typing: BTreeMap<String, Vec<MotifTyping>>,
}

/// Graph counts per split phase for `n` graphs.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let test = if n >= 2 { (n / 3).max(1) } else { 0 };
    let val = if n >= 4 { (n / 6).max(1) } else { 0 };
    (n - test - val, val, test)
}

/// Motif subsets of size 2..=3 (size 1 when the catalog has one motif),
/// smaller subsets first, each ascending.
pub fn motif_combinations(catalog_size: usize) -> Vec<Vec<usize>> {
    let lo = catalog_size.min(2);
    let hi = catalog_size.min(3);
    let mut out = Vec::new();
    for size in lo..=hi {
        for mask in 0u32..(1 << catalog_size) {
            if mask.count_ones() as usize == size {
                out.push((0..catalog_size).filter(|&i| mask & (1 << i) != 0).collect());
            }
        }
    }
    out.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn validate(cfg: &GeneratorConfig) -> Result<(), SynthError> {
    let counts = [
        ("n_graphs", cfg.n_graphs),
        ("objects_per_graph", cfg.objects_per_graph),
        ("n_object_types", cfg.n_object_types),
        ("n_link_types", cfg.n_link_types),
        ("n_relations_per_graph", cfg.n_relations_per_graph),
        ("pairs_per_relation", cfg.pairs_per_relation),
        ("motif_catalog_size", cfg.motif_catalog_size),
        ("feature_dim", cfg.feature_dim),
    ];
    if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
        return Err(SynthError::InvalidConfig(format!("{name} must be at least 1")));
    }
    if cfg.n_object_types < 3 {
        return Err(SynthError::InvalidConfig("n_object_types must be at least 3".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_edges_fraction) {
        return Err(SynthError::InvalidConfig("noise_edges_fraction must lie in [0, 1]".into()));
    }
    if cfg.motif_catalog_size > Motif::CATALOG.len() {
        return Err(SynthError::Infeasible(format!(
            "motif catalog holds {} motifs, {} requested",
            Motif::CATALOG.len(),
            cfg.motif_catalog_size
        )));
    }
    let needed: usize = 1 + Motif::CATALOG[..cfg.motif_catalog_size]
        .iter()
        .map(|m| m.type_count())
        .sum::<usize>();
    if needed > cfg.n_object_types {
        return Err(SynthError::Infeasible(format!(
            "motifs need {needed} object types, only {} configured",
            cfg.n_object_types
        )));
    }
    let combos = motif_combinations(cfg.motif_catalog_size).len();
    if cfg.n_relations_per_graph > combos {
        return Err(SynthError::Infeasible(format!(
            "{} relations requested but the catalog yields {combos} motif combinations",
            cfg.n_relations_per_graph
        )));
    }
    let anchors = anchor_count(cfg);
    let pairs_needed = cfg.n_relations_per_graph * (cfg.pairs_per_relation + cfg.heldout_pairs_per_relation);
    if pairs_needed * 2 > anchors * (anchors - 1) / 2 {
        return Err(SynthError::Infeasible(format!(
            "{pairs_needed} distinct anchor pairs needed from {anchors} anchors"
        )));
    }
    Ok(())
}

fn anchor_count(cfg: &GeneratorConfig) -> usize {
    (cfg.objects_per_graph / 2).max(2)
}

/// Builds the corpus described by `cfg`. Identical configs produce identical
/// corpora.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<GeneratedCorpus, SynthError> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared_roles = {
        let mut perm: Vec<TypeId> = (0..cfg.n_object_types).collect();
        perm.shuffle(&mut rng);
        perm
    };

    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    let mut planted = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    let mut motif_typing = BTreeMap::new();
    for gi in 0..cfg.n_graphs {
        let gid = format!("{}{gi}", cfg.id_prefix);
        let roles = if cfg.shared_type_vocabulary {
            shared_roles.clone()
        } else {
            let mut perm: Vec<TypeId> = (0..cfg.n_object_types).collect();
            perm.shuffle(&mut rng);
            perm
        };
        let built = generate_graph(cfg, &gid, &roles, &mut rng)?;
        planted.insert(gid.clone(), built.relations);
        provenance.insert(gid.clone(), built.origins);
        motif_typing.insert(gid.clone(), built.typing);
        graphs.push(built.graph);
    }

    let (n_train, n_val, _) = split_counts(cfg.n_graphs);
    let ids: Vec<String> = graphs.iter().map(|g| g.id().to_string()).collect();
    let split = CorpusSplit {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    };
    Ok(GeneratedCorpus {
        corpus: GraphCorpus::new(graphs, split)?,
        planted,
        provenance,
        motif_typing,
    })
}

struct BuiltGraph {
    graph: HeterogeneousGraph,
    relations: Vec<PlantedRelation>,
    origins: Vec<EdgeOrigin>,
    typing: Vec<MotifTyping>,
}

/// `roles[k]` is the type id playing role `k`: role 0 is the anchor type,
/// the next roles are motif intermediates, the rest are filler.
fn generate_graph(
    cfg: &GeneratorConfig,
    gid: &str,
    roles: &[TypeId],
    rng: &mut ChaCha8Rng,
) -> Result<BuiltGraph, SynthError> {
    let vocab_prefix = if cfg.shared_type_vocabulary {
        String::new()
    } else {
        format!("{gid}-")
    };
    let object_types: Vec<String> = (0..cfg.n_object_types)
        .map(|t| format!("{vocab_prefix}type{t}"))
        .collect();
    let link_types: Vec<String> = (0..cfg.n_link_types)
        .map(|t| format!("{vocab_prefix}link{t}"))
        .collect();

    let mut next_role = 1;
    let typing: Vec<MotifTyping> = Motif::CATALOG[..cfg.motif_catalog_size]
        .iter()
        .enumerate()
        .map(|(k, &motif)| {
            let intermediate_types = (0..motif.type_count())
                .map(|_| {
                    next_role += 1;
                    roles[next_role - 1]
                })
                .collect();
            MotifTyping {
                motif,
                intermediate_types,
                link_type: k % cfg.n_link_types,
            }
        })
        .collect();

    let anchor_type = roles[0];
    let n_anchor = anchor_count(cfg);
    let mut base_types: Vec<TypeId> = (0..cfg.objects_per_graph)
        .map(|i| {
            if i < n_anchor {
                anchor_type
            } else {
                roles[rng.gen_range(1..cfg.n_object_types)]
            }
        })
        .collect();
    base_types.shuffle(rng);
    let anchors: Vec<ObjectId> = (0..base_types.len()).filter(|&i| base_types[i] == anchor_type).collect();
    let mut draft = GraphDraft::new(base_types);

    let mut combos = motif_combinations(cfg.motif_catalog_size);
    combos.shuffle(rng);
    let mut used_pairs = HashSet::new();
    let mut relations = Vec::with_capacity(cfg.n_relations_per_graph);
    for (r, motif_ids) in combos.into_iter().take(cfg.n_relations_per_graph).enumerate() {
        let mut draw = |count: usize| -> Vec<(ObjectId, ObjectId)> {
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let a = anchors[rng.gen_range(0..anchors.len())];
                let b = anchors[rng.gen_range(0..anchors.len())];
                if a != b && used_pairs.insert((a.min(b), a.max(b))) {
                    out.push((a, b));
                }
            }
            out
        };
        let positive_pairs = draw(cfg.pairs_per_relation);
        let heldout_pairs = draw(cfg.heldout_pairs_per_relation);
        for &pair in positive_pairs.iter().chain(&heldout_pairs) {
            for &m in &motif_ids {
                motif_instantiate(&typing[m], pair, &mut draft);
            }
        }
        relations.push(PlantedRelation {
            name: format!("{gid}-rel{r}"),
            motif_ids,
            positive_pairs,
            heldout_pairs,
        });
    }

    let motif_links = draft.links().len();
    let n_noise = (cfg.noise_edges_fraction * motif_links as f64).round() as usize;
    let n_objects = draft.types().len();
    let mut added = 0;
    let mut attempts = 0;
    while added < n_noise && attempts < 100 * (n_noise + 1) {
        attempts += 1;
        let a = rng.gen_range(0..n_objects);
        let b = rng.gen_range(0..n_objects);
        let t = rng.gen_range(0..cfg.n_link_types);
        if draft.add_link(a, b, t, EdgeOrigin::Noise) {
            added += 1;
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..cfg.n_object_types)
        .map(|_| (0..cfg.feature_dim).map(|_| normal.sample(rng)).collect())
        .collect();
    let objects = draft
        .types()
        .iter()
        .enumerate()
        .map(|(id, &t)| RawObject {
            id,
            type_id: t,
            feature: Some(centers[t].iter().map(|c| c + 0.1 * normal.sample(rng)).collect()),
        })
        .collect();

    let graph = HeterogeneousGraph::from_parts(GraphParts {
        id: gid.to_string(),
        object_types,
        link_types,
        objects,
        links: draft.links().to_vec(),
        relations: relations
            .iter()
            .map(|r| (r.name.clone(), r.positive_pairs.clone()))
            .collect(),
    })?;
    debug_assert_eq!(graph.links().len(), draft.origins().len());
    Ok(BuiltGraph {
        graph,
        relations,
        origins: draft.origins().to_vec(),
        typing,
    })
}
