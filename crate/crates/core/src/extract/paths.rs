//! Path mining between a query pair and the graph structure built from it.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use crate::hetgraph::{bfs_distances, GraphView, HeterogeneousGraph, Link, ObjectId};

use super::ExtractError;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub objects: Vec<ObjectId>,
    pub score: f64,
}

/// `ln(#object types on p) * (#links joining different types / #links)`.
pub fn path_score(g: &HeterogeneousGraph, objects: &[ObjectId]) -> f64 {
    let links = objects.len().saturating_sub(1);
    if links == 0 {
        return 0.0;
    }
    let types: HashSet<usize> = objects.iter().map(|&o| g.type_of(o)).collect();
    let cross = objects
        .windows(2)
        .filter(|w| g.type_of(w[0]) != g.type_of(w[1]))
        .count();
    (types.len() as f64).ln() * (cross as f64 / links as f64)
}

/// Ranking order: score descending, then length, then the id sequence.
pub fn path_order(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.objects.len().cmp(&b.objects.len()))
        .then_with(|| a.objects.cmp(&b.objects))
}

/// Simple paths from `u` to `v` with at most `l_max` links, in DFS order
/// (neighbors ascending), stopping after `cap` paths.
pub fn enumerate_paths(g: &HeterogeneousGraph, u: ObjectId, v: ObjectId, l_max: usize, cap: usize) -> Vec<Vec<ObjectId>> {
    let to_v = bfs_distances(g, v);
    let mut out = Vec::new();
    if to_v[u].is_none_or(|d| d > l_max) {
        return out;
    }
    let mut on_path = vec![false; g.node_count()];
    let mut path = vec![u];
    on_path[u] = true;
    dfs(g, v, l_max, cap, &to_v, &mut on_path, &mut path, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    g: &HeterogeneousGraph,
    v: ObjectId,
    l_max: usize,
    cap: usize,
    to_v: &[Option<usize>],
    on_path: &mut [bool],
    path: &mut Vec<ObjectId>,
    out: &mut Vec<Vec<ObjectId>>,
) {
    let here = *path.last().expect("path starts at u");
    let used = path.len() - 1;
    for &next in g.neighbor_ids(here) {
        if out.len() >= cap {
            return;
        }
        if on_path[next] {
            continue;
        }
        if next == v {
            path.push(v);
            out.push(path.clone());
            path.pop();
            continue;
        }
        // prune branches that cannot reach v within the remaining budget
        match to_v[next] {
            Some(d) if used + 1 + d <= l_max => {}
            _ => continue,
        }
        on_path[next] = true;
        path.push(next);
        dfs(g, v, l_max, cap, to_v, on_path, path, out);
        path.pop();
        on_path[next] = false;
    }
}

/// Objects and links around a query pair from which subgraphs are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStructure {
    pub u: ObjectId,
    pub v: ObjectId,
    /// Ascending global ids.
    pub objects: Vec<ObjectId>,
    /// Ascending `(src, dst, type)` with `src < dst`.
    pub links: Vec<Link>,
}

impl GraphStructure {
    fn from_links(u: ObjectId, v: ObjectId, links: BTreeSet<Link>) -> Self {
        let mut objects: BTreeSet<ObjectId> = [u, v].into_iter().collect();
        for l in &links {
            objects.insert(l.src);
            objects.insert(l.dst);
        }
        Self {
            u,
            v,
            objects: objects.into_iter().collect(),
            links: links.into_iter().collect(),
        }
    }
}

fn canonical(a: ObjectId, b: ObjectId, link_type: usize) -> Link {
    Link {
        src: a.min(b),
        dst: a.max(b),
        link_type,
    }
}

fn check_pair(g: &HeterogeneousGraph, u: ObjectId, v: ObjectId) -> Result<(), ExtractError> {
    for id in [u, v] {
        if !g.contains(id) {
            return Err(ExtractError::UnknownObject(id));
        }
    }
    if u == v {
        return Err(ExtractError::SamePair(u));
    }
    Ok(())
}

/// The top `k_path` scored paths between `u` and `v`.
pub fn top_paths(
    g: &HeterogeneousGraph,
    u: ObjectId,
    v: ObjectId,
    k_path: usize,
    l_max: usize,
    cap: usize,
) -> Result<Vec<ScoredPath>, ExtractError> {
    check_pair(g, u, v)?;
    let mut scored: Vec<ScoredPath> = enumerate_paths(g, u, v, l_max, cap)
        .into_iter()
        .map(|objects| ScoredPath {
            score: path_score(g, &objects),
            objects,
        })
        .collect();
    if scored.is_empty() {
        return Err(ExtractError::NoPath { u, v, l_max });
    }
    scored.sort_by(path_order);
    scored.truncate(k_path);
    Ok(scored)
}

/// Union of the links along the top `k_path` paths. Every link record joining
/// consecutive path objects is kept.
pub fn extract_structure(
    g: &HeterogeneousGraph,
    u: ObjectId,
    v: ObjectId,
    k_path: usize,
    l_max: usize,
    cap: usize,
) -> Result<GraphStructure, ExtractError> {
    let paths = top_paths(g, u, v, k_path, l_max, cap)?;
    let mut links = BTreeSet::new();
    for p in &paths {
        for w in p.objects.windows(2) {
            for t in g.link_types_between(w[0], w[1]) {
                links.insert(canonical(w[0], w[1], t));
            }
        }
    }
    Ok(GraphStructure::from_links(u, v, links))
}

/// Everything within two hops of `u` or `v`, with all links among it.
/// Pairs farther apart than `l_max` are rejected like path extraction does.
pub fn two_hop_structure(
    g: &HeterogeneousGraph,
    u: ObjectId,
    v: ObjectId,
    l_max: usize,
) -> Result<GraphStructure, ExtractError> {
    check_pair(g, u, v)?;
    let from_u = bfs_distances(g, u);
    if from_u[v].is_none_or(|d| d > l_max) {
        return Err(ExtractError::NoPath { u, v, l_max });
    }
    let from_v = bfs_distances(g, v);
    let inside: Vec<bool> = (0..g.node_count())
        .map(|i| from_u[i].is_some_and(|d| d <= 2) || from_v[i].is_some_and(|d| d <= 2))
        .collect();
    let mut links = BTreeSet::new();
    for l in g.links() {
        if inside[l.src] && inside[l.dst] {
            links.insert(canonical(l.src, l.dst, l.link_type));
        }
    }
    Ok(GraphStructure {
        u,
        v,
        objects: (0..g.node_count()).filter(|&i| inside[i]).collect(),
        links: links.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{GraphParts, RawObject};

    fn typed_graph(types: &[usize], links: &[(usize, usize)]) -> HeterogeneousGraph {
        let n_types = types.iter().max().map_or(1, |m| m + 1).max(2);
        HeterogeneousGraph::from_parts(GraphParts {
            id: "t".into(),
            object_types: (0..n_types).map(|t| format!("T{t}")).collect(),
            link_types: vec!["x".into(), "y".into()],
            objects: types
                .iter()
                .enumerate()
                .map(|(id, &type_id)| RawObject {
                    id,
                    type_id,
                    feature: Some(vec![1.0]),
                })
                .collect(),
            links: links
                .iter()
                .map(|&(src, dst)| Link { src, dst, link_type: 0 })
                .collect(),
            relations: Default::default(),
        })
        .unwrap()
    }

    #[test]
    fn score_examples() {
        let g = typed_graph(&[0, 0, 0], &[(0, 1), (1, 2)]);
        assert_eq!(path_score(&g, &[0, 1, 2]), 0.0);
        let g = typed_graph(&[0, 1, 0], &[(0, 1), (1, 2)]);
        assert!((path_score(&g, &[0, 1, 2]) - 2f64.ln()).abs() < 1e-15);
        let g = typed_graph(&[0, 0, 1, 1], &[(0, 1), (1, 2), (2, 3)]);
        assert!((path_score(&g, &[0, 1, 2, 3]) - 2f64.ln() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_path_structure_is_that_path() {
        let g = typed_graph(&[0, 1, 0, 1], &[(0, 1), (1, 2), (2, 3)]);
        let s = extract_structure(&g, 0, 3, 500, 6, 50_000).unwrap();
        assert_eq!(s.objects, vec![0, 1, 2, 3]);
        assert_eq!(s.links.len(), 3);
    }

    #[test]
    fn k_path_one_keeps_the_best_path() {
        let types = [0, 1, 0, 0, 1];
        // A = 0-1-2 scores ln 2, B = 0-3-4-2 with types T0,T0,T1,T0 scores ln2*2/3
        let g = typed_graph(&types, &[(0, 1), (1, 2), (0, 3), (3, 4), (4, 2)]);
        let s = extract_structure(&g, 0, 2, 1, 6, 50_000).unwrap();
        assert_eq!(s.objects, vec![0, 1, 2]);
    }

    #[test]
    fn ties_prefer_shorter_then_smaller_ids() {
        let types = [0, 1, 1, 0];
        let g = typed_graph(&types, &[(0, 2), (2, 3), (0, 1), (1, 3)]);
        let paths = top_paths(&g, 0, 3, 10, 6, 50_000).unwrap();
        assert_eq!(paths[0].objects, vec![0, 1, 3]);
        assert_eq!(paths[1].objects, vec![0, 2, 3]);
    }

    #[test]
    fn disconnected_pair_is_no_path() {
        let g = typed_graph(&[0, 1, 0], &[(0, 1)]);
        assert!(matches!(
            extract_structure(&g, 0, 2, 5, 6, 100),
            Err(ExtractError::NoPath { .. })
        ));
    }
}
