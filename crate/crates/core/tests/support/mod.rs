//! Independent reference checks shared by the integration tests and the
//! acceptance target. Each check returns a one-line summary or the first
//! disagreement it finds.
#![allow(dead_code)]

pub mod extraction;
pub mod gradients;
pub mod invariance;
pub mod oracles;

use hetrel::hetgraph::{GraphParts, HeterogeneousGraph, Link, RawObject};
use rand::Rng;

pub type Check = Result<String, String>;

/// Random graph on `n` objects; every pair gets each link type with
/// probability `p`. Features are `feature_dim` standard uniforms.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, n_types: usize, n_link_types: usize, p: f64, feature_dim: usize) -> HeterogeneousGraph {
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for t in 0..n_link_types {
                if rng.gen_bool(p) {
                    links.push(Link { src: a, dst: b, link_type: t });
                }
            }
        }
    }
    HeterogeneousGraph::from_parts(GraphParts {
        id: "r".into(),
        object_types: (0..n_types).map(|t| format!("T{t}")).collect(),
        link_types: (0..n_link_types).map(|t| format!("L{t}")).collect(),
        objects: (0..n)
            .map(|id| RawObject {
                id,
                type_id: rng.gen_range(0..n_types),
                feature: Some((0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            })
            .collect(),
        links,
        relations: Default::default(),
    })
    .expect("random graph is valid")
}

/// All-pairs hop distances by Floyd-Warshall over an undirected edge list.
pub fn floyd(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<Option<usize>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for (a, b) in edges {
        d[a][b] = Some(1);
        d[b][a] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|cur| x + y < cur) {
                        d[i][j] = Some(x + y);
                    }
                }
            }
        }
    }
    d
}

pub fn graph_edges(g: &HeterogeneousGraph) -> Vec<(usize, usize)> {
    g.links().iter().map(|l| (l.src, l.dst)).collect()
}

/// `|a - b| <= tol`, treating equal infinities and NaN pairs as mismatches.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
