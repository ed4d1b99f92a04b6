//! Heterogeneous graph data model and corpus file IO.
//!
//! A [`HeterogeneousGraph`] holds typed objects, typed undirected links,
//! per-object feature vectors and the labeled relation pairs of that graph.
//! Graphs are immutable once built; every constructor path runs the full
//! invariant suite.
//!
//! Object ids are dense `0..n` within a graph, so an id doubles as an index.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type ObjectId = usize;
pub type TypeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph {graph}: {context} references unknown object {id}")]
    DanglingReference {
        graph: String,
        context: String,
        id: usize,
    },
    #[error("graph {graph}: duplicate link ({src}, {dst}, type {link_type})")]
    DuplicateLink {
        graph: String,
        src: usize,
        dst: usize,
        link_type: usize,
    },
    #[error("graph {graph}: self-loop on object {id}")]
    SelfLoop { graph: String, id: usize },
    #[error("graph {graph}: relation {relation} has no pairs")]
    EmptyRelation { graph: String, relation: String },
    #[error("graph {graph}: relation {relation} pair ({u}, {v}) joins an object to itself")]
    DegeneratePair {
        graph: String,
        relation: String,
        u: usize,
        v: usize,
    },
    #[error("graph {graph}: {what} type id {id} out of range ({count} declared)")]
    UnknownType {
        graph: String,
        what: &'static str,
        id: usize,
        count: usize,
    },
    #[error("graph {graph}: object ids must be dense 0..n and unique; found {id}")]
    BadObjectId { graph: String, id: usize },
    #[error("graph {graph}: objects of type {type_name} have feature dimensions {expected} and {found}")]
    FeatureDimension {
        graph: String,
        type_name: String,
        expected: usize,
        found: usize,
    },
    #[error("graph {graph}: type {type_name} mixes objects with and without features")]
    PartialFeatures { graph: String, type_name: String },
    #[error("graph {graph}: not heterogeneous (|A| + |R| = {total}, need > 2)")]
    NotHeterogeneous { graph: String, total: usize },
    #[error("graph {graph}: non-finite feature value on object {id}")]
    NonFiniteFeature { graph: String, id: usize },
    #[error("unknown object {0}")]
    UnknownObject(usize),
    #[error("split names unknown graph {0}")]
    UnknownGraph(String),
    #[error("graph {0} appears in more than one split (or twice in the corpus)")]
    DuplicateGraph(String),
    #[error("relation name {0} occurs in both training and test graphs")]
    RelationOverlap(String),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub type_id: TypeId,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    pub src: ObjectId,
    pub dst: ObjectId,
    pub link_type: TypeId,
}

/// Read access to an undirected graph addressed by dense indices.
pub trait GraphView {
    fn node_count(&self) -> usize;
    /// Distinct neighbors of `i` in ascending order.
    fn neighbor_ids(&self, i: usize) -> &[usize];
}

/// Unweighted BFS hop counts from `source`; `None` marks unreachable nodes.
pub fn bfs_distances<G: GraphView + ?Sized>(g: &G, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.node_count()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(x) = queue.pop_front() {
        let d = dist[x].expect("queued nodes have a distance");
        for &y in g.neighbor_ids(x) {
            if dist[y].is_none() {
                dist[y] = Some(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Hop distance between `a` and `b`, or `None` when they are disconnected.
pub fn shortest_distance<G: GraphView + ?Sized>(g: &G, a: usize, b: usize) -> Result<Option<usize>> {
    let n = g.node_count();
    for id in [a, b] {
        if id >= n {
            return Err(GraphError::UnknownObject(id));
        }
    }
    if a == b {
        return Ok(Some(0));
    }
    Ok(bfs_distances(g, a)[b])
}

/// Typed objects, typed undirected links, features and relation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousGraph {
    id: String,
    object_types: Vec<String>,
    link_types: Vec<String>,
    objects: Vec<ObjectRecord>,
    links: Vec<Link>,
    relations: BTreeMap<String, Vec<(ObjectId, ObjectId)>>,
    adjacency: Vec<Vec<(ObjectId, TypeId)>>,
    neighbor_ids: Vec<Vec<ObjectId>>,
}

/// Unvalidated object description; a missing feature is synthesized when the
/// whole type lacks features.
#[derive(Debug, Clone)]
pub struct RawObject {
    pub id: ObjectId,
    pub type_id: TypeId,
    pub feature: Option<Vec<f64>>,
}

/// Unvalidated graph contents handed to [`HeterogeneousGraph::from_parts`].
#[derive(Debug, Clone, Default)]
pub struct GraphParts {
    pub id: String,
    pub object_types: Vec<String>,
    pub link_types: Vec<String>,
    pub objects: Vec<RawObject>,
    pub links: Vec<Link>,
    pub relations: BTreeMap<String, Vec<(ObjectId, ObjectId)>>,
}

impl HeterogeneousGraph {
    /// Validates `parts` and builds the graph.
    ///
    /// Links are symmetrized: `(a, b, t)` and `(b, a, t)` describe the same
    /// undirected link and are merged. Listing the same orientation twice is
    /// a [`GraphError::DuplicateLink`].
    pub fn from_parts(parts: GraphParts) -> Result<Self> {
        let GraphParts {
            id,
            object_types,
            link_types,
            mut objects,
            links,
            relations,
        } = parts;
        let total = object_types.len() + link_types.len();
        if total <= 2 {
            return Err(GraphError::NotHeterogeneous { graph: id, total });
        }

        objects.sort_by_key(|o| o.id);
        for (expected, o) in objects.iter().enumerate() {
            if o.id != expected {
                return Err(GraphError::BadObjectId { graph: id, id: o.id });
            }
            if o.type_id >= object_types.len() {
                return Err(GraphError::UnknownType {
                    graph: id,
                    what: "object",
                    id: o.type_id,
                    count: object_types.len(),
                });
            }
        }
        let n = objects.len();

        let mut seen_directed = HashSet::new();
        let mut canonical = BTreeSet::new();
        let mut stored = Vec::new();
        for l in links {
            for end in [l.src, l.dst] {
                if end >= n {
                    return Err(GraphError::DanglingReference {
                        graph: id,
                        context: format!("link ({}, {}, {})", l.src, l.dst, l.link_type),
                        id: end,
                    });
                }
            }
            if l.link_type >= link_types.len() {
                return Err(GraphError::UnknownType {
                    graph: id,
                    what: "link",
                    id: l.link_type,
                    count: link_types.len(),
                });
            }
            if l.src == l.dst {
                return Err(GraphError::SelfLoop { graph: id, id: l.src });
            }
            if !seen_directed.insert((l.src, l.dst, l.link_type)) {
                return Err(GraphError::DuplicateLink {
                    graph: id,
                    src: l.src,
                    dst: l.dst,
                    link_type: l.link_type,
                });
            }
            let key = (l.src.min(l.dst), l.src.max(l.dst), l.link_type);
            if canonical.insert(key) {
                stored.push(l);
            }
        }

        let mut adjacency = vec![Vec::new(); n];
        for l in &stored {
            adjacency[l.src].push((l.dst, l.link_type));
            adjacency[l.dst].push((l.src, l.link_type));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let neighbor_ids: Vec<Vec<ObjectId>> = adjacency
            .iter()
            .map(|adj| {
                let mut ids: Vec<ObjectId> = adj.iter().map(|&(o, _)| o).collect();
                ids.dedup();
                ids
            })
            .collect();

        let objects = resolve_features(&id, &object_types, objects, &neighbor_ids)?;

        for (name, pairs) in &relations {
            if pairs.is_empty() {
                return Err(GraphError::EmptyRelation {
                    graph: id,
                    relation: name.clone(),
                });
            }
            for &(u, v) in pairs {
                for end in [u, v] {
                    if end >= n {
                        return Err(GraphError::DanglingReference {
                            graph: id,
                            context: format!("relation {name}"),
                            id: end,
                        });
                    }
                }
                if u == v {
                    return Err(GraphError::DegeneratePair {
                        graph: id,
                        relation: name.clone(),
                        u,
                        v,
                    });
                }
            }
        }

        Ok(Self {
            id,
            object_types,
            link_types,
            objects,
            links: stored,
            relations,
            adjacency,
            neighbor_ids,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn object_types(&self) -> &[String] {
        &self.object_types
    }

    pub fn link_types(&self) -> &[String] {
        &self.link_types
    }

    pub fn objects(&self) -> &[ObjectRecord] {
        &self.objects
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn relations(&self) -> &BTreeMap<String, Vec<(ObjectId, ObjectId)>> {
        &self.relations
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn type_of(&self, obj: ObjectId) -> TypeId {
        self.objects[obj].type_id
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.object_types[t]
    }

    pub fn feature(&self, obj: ObjectId) -> &[f64] {
        &self.objects[obj].feature
    }

    pub fn contains(&self, obj: ObjectId) -> bool {
        obj < self.objects.len()
    }

    /// `(neighbor, link type)` entries, ascending by neighbor then type.
    pub fn neighbors(&self, obj: ObjectId) -> Result<&[(ObjectId, TypeId)]> {
        self.adjacency
            .get(obj)
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownObject(obj))
    }

    /// Link types joining `a` and `b` (empty when not adjacent).
    pub fn link_types_between(&self, a: ObjectId, b: ObjectId) -> impl Iterator<Item = TypeId> + '_ {
        let adj = &self.adjacency[a];
        let start = adj.partition_point(|&(o, _)| o < b);
        adj[start..].iter().take_while(move |&&(o, _)| o == b).map(|&(_, t)| t)
    }

    pub fn objects_of_type(&self, t: TypeId) -> impl Iterator<Item = ObjectId> + '_ {
        self.objects.iter().filter(move |o| o.type_id == t).map(|o| o.id)
    }

    /// Relation names holding the unordered pair `{a, b}`.
    pub fn relations_of_pair(&self, a: ObjectId, b: ObjectId) -> Vec<&str> {
        self.relations
            .iter()
            .filter(|(_, pairs)| pairs.iter().any(|&(u, v)| (u, v) == (a, b) || (u, v) == (b, a)))
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

impl GraphView for HeterogeneousGraph {
    fn node_count(&self) -> usize {
        self.objects.len()
    }

    fn neighbor_ids(&self, i: usize) -> &[usize] {
        &self.neighbor_ids[i]
    }
}

fn resolve_features(
    graph: &str,
    object_types: &[String],
    objects: Vec<RawObject>,
    neighbor_ids: &[Vec<ObjectId>],
) -> Result<Vec<ObjectRecord>> {
    let mut has_feature = vec![None::<bool>; object_types.len()];
    let mut dims = vec![None::<usize>; object_types.len()];
    for o in &objects {
        let present = o.feature.as_ref().is_some_and(|f| !f.is_empty());
        match has_feature[o.type_id] {
            None => has_feature[o.type_id] = Some(present),
            Some(p) if p != present => {
                return Err(GraphError::PartialFeatures {
                    graph: graph.to_string(),
                    type_name: object_types[o.type_id].clone(),
                })
            }
            _ => {}
        }
        if let Some(f) = o.feature.as_ref().filter(|f| !f.is_empty()) {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::NonFiniteFeature {
                    graph: graph.to_string(),
                    id: o.id,
                });
            }
            match dims[o.type_id] {
                None => dims[o.type_id] = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(GraphError::FeatureDimension {
                        graph: graph.to_string(),
                        type_name: object_types[o.type_id].clone(),
                        expected: d,
                        found: f.len(),
                    })
                }
                _ => {}
            }
        }
    }

    let max_degree = neighbor_ids.iter().map(Vec::len).max().unwrap_or(0).max(1) as f64;
    Ok(objects
        .into_iter()
        .map(|o| {
            let feature = match o.feature {
                Some(f) if !f.is_empty() => f,
                _ => {
                    // one-hot(type) followed by normalized degree
                    let mut f = vec![0.0; object_types.len() + 1];
                    f[o.type_id] = 1.0;
                    f[object_types.len()] = neighbor_ids[o.id].len() as f64 / max_degree;
                    f
                }
            };
            ObjectRecord {
                id: o.id,
                type_id: o.type_id,
                feature,
            }
        })
        .collect())
}

/// Graph ids assigned to each phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// A set of graphs plus the train/val/test assignment of graph ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphCorpus {
    graphs: Vec<HeterogeneousGraph>,
    split: CorpusSplit,
}

impl GraphCorpus {
    pub fn new(graphs: Vec<HeterogeneousGraph>, split: CorpusSplit) -> Result<Self> {
        let mut ids = HashSet::new();
        for g in &graphs {
            if !ids.insert(g.id.clone()) {
                return Err(GraphError::DuplicateGraph(g.id.clone()));
            }
        }
        let mut assigned = HashSet::new();
        for gid in split.train.iter().chain(&split.val).chain(&split.test) {
            if !ids.contains(gid) {
                return Err(GraphError::UnknownGraph(gid.clone()));
            }
            if !assigned.insert(gid.clone()) {
                return Err(GraphError::DuplicateGraph(gid.clone()));
            }
        }
        let corpus = Self { graphs, split };
        let base: HashSet<&str> = corpus
            .phase_graphs(&corpus.split.train)
            .flat_map(|g| g.relations.keys().map(String::as_str))
            .collect();
        for g in corpus.phase_graphs(&corpus.split.test) {
            if let Some(name) = g.relations.keys().find(|n| base.contains(n.as_str())) {
                return Err(GraphError::RelationOverlap(name.clone()));
            }
        }
        Ok(corpus)
    }

    fn phase_graphs<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = &'a HeterogeneousGraph> + 'a {
        ids.iter().filter_map(move |id| self.graph(id))
    }

    pub fn graphs(&self) -> &[HeterogeneousGraph] {
        &self.graphs
    }

    pub fn split(&self) -> &CorpusSplit {
        &self.split
    }

    pub fn graph(&self, id: &str) -> Option<&HeterogeneousGraph> {
        self.graphs.iter().find(|g| g.id == id)
    }

    pub fn train_graphs(&self) -> Vec<&HeterogeneousGraph> {
        self.phase_graphs(&self.split.train).collect()
    }

    pub fn val_graphs(&self) -> Vec<&HeterogeneousGraph> {
        self.phase_graphs(&self.split.val).collect()
    }

    pub fn test_graphs(&self) -> Vec<&HeterogeneousGraph> {
        self.phase_graphs(&self.split.test).collect()
    }

    /// Hex SHA-256 of the canonical serialized corpus.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&CorpusFile::from(self)).expect("corpus serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&CorpusFile::from(self)).expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CorpusFile = serde_json::from_str(text).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.try_into()
    }
}

/// Reads and fully validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<GraphCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    GraphCorpus::from_json(&text)
}

pub fn save_corpus(corpus: &GraphCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus.to_json()).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    graphs: Vec<GraphFile>,
    split: CorpusSplit,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    id: String,
    object_types: Vec<String>,
    link_types: Vec<String>,
    objects: Vec<ObjectFile>,
    links: Vec<[usize; 3]>,
    #[serde(default)]
    relations: BTreeMap<String, Vec<[usize; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    id: usize,
    #[serde(rename = "type")]
    type_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

impl From<&GraphCorpus> for CorpusFile {
    fn from(c: &GraphCorpus) -> Self {
        let graphs = c
            .graphs
            .iter()
            .map(|g| GraphFile {
                id: g.id.clone(),
                object_types: g.object_types.clone(),
                link_types: g.link_types.clone(),
                objects: g
                    .objects
                    .iter()
                    .map(|o| ObjectFile {
                        id: o.id,
                        type_id: o.type_id,
                        feature: Some(o.feature.clone()),
                    })
                    .collect(),
                links: g.links.iter().map(|l| [l.src, l.dst, l.link_type]).collect(),
                relations: g
                    .relations
                    .iter()
                    .map(|(k, v)| (k.clone(), v.iter().map(|&(a, b)| [a, b]).collect()))
                    .collect(),
            })
            .collect();
        CorpusFile {
            graphs,
            split: c.split.clone(),
        }
    }
}

impl TryFrom<CorpusFile> for GraphCorpus {
    type Error = GraphError;

    fn try_from(file: CorpusFile) -> Result<Self> {
        let graphs = file
            .graphs
            .into_iter()
            .map(|g| {
                HeterogeneousGraph::from_parts(GraphParts {
                    id: g.id,
                    object_types: g.object_types,
                    link_types: g.link_types,
                    objects: g
                        .objects
                        .into_iter()
                        .map(|o| RawObject {
                            id: o.id,
                            type_id: o.type_id,
                            feature: o.feature,
                        })
                        .collect(),
                    links: g
                        .links
                        .into_iter()
                        .map(|[src, dst, link_type]| Link { src, dst, link_type })
                        .collect(),
                    relations: g
                        .relations
                        .into_iter()
                        .map(|(k, v)| (k, v.into_iter().map(|[a, b]| (a, b)).collect()))
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GraphCorpus::new(graphs, file.split)
    }
}
