//! Exhaustive references for graph-structure extraction, subgraph repair and
//! two-hop neighborhoods.

use std::collections::BTreeSet;

use hetrel::embed::EmbeddingTable;
use hetrel::extract::{
    extract_structure, generate_subgraphs, path_score, two_hop_structure, ExtractError, SubgraphConfig,
};
use hetrel::hetgraph::HeterogeneousGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{floyd, graph_edges, random_graph, Check};

fn all_simple_paths(g: &HeterogeneousGraph, u: usize, v: usize, l_max: usize) -> Vec<Vec<usize>> {
    fn walk(g: &HeterogeneousGraph, v: usize, l_max: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let here = *path.last().unwrap();
        if here == v {
            out.push(path.clone());
            return;
        }
        if path.len() > l_max {
            return;
        }
        let next: BTreeSet<usize> = g.neighbors(here).unwrap().iter().map(|&(o, _)| o).collect();
        for o in next {
            if !path.contains(&o) {
                path.push(o);
                walk(g, v, l_max, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(g, v, l_max, &mut vec![u], &mut out);
    out
}

type LinkKey = (usize, usize, usize);

fn structure_ref(g: &HeterogeneousGraph, u: usize, v: usize, k_path: usize, l_max: usize) -> Option<(Vec<usize>, Vec<LinkKey>)> {
    let mut paths: Vec<(f64, Vec<usize>)> = all_simple_paths(g, u, v, l_max)
        .into_iter()
        .map(|p| (path_score(g, &p), p))
        .collect();
    if paths.is_empty() {
        return None;
    }
    paths.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.len().cmp(&b.1.len()))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut objects = BTreeSet::from([u, v]);
    let mut links = BTreeSet::new();
    for (_, p) in paths.iter().take(k_path) {
        objects.extend(p.iter().copied());
        for w in p.windows(2) {
            for l in g.links() {
                if (l.src, l.dst) == (w[0], w[1]) || (l.src, l.dst) == (w[1], w[0]) {
                    links.insert((w[0].min(w[1]), w[0].max(w[1]), l.link_type));
                }
            }
        }
    }
    Some((objects.into_iter().collect(), links.into_iter().collect()))
}

/// Path-based extraction against exhaustive enumeration and ranking on
/// `graphs` random graphs of at most 20 objects.
pub fn extraction_oracle(graphs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut compared, mut no_path) = (0, 0);
    for gi in 0..graphs {
        let n = rng.gen_range(5..=20);
        let (types, link_types, p) = (rng.gen_range(2..=4), rng.gen_range(1..=2), rng.gen_range(0.08..0.25));
        let g = random_graph(&mut rng, n, types, link_types, p, 1);
        for _ in 0..4 {
            let u = rng.gen_range(0..n);
            let v = (u + rng.gen_range(1..n)) % n;
            let l_max = rng.gen_range(2..=6);
            let k_path = [1, 2, 5, 500][rng.gen_range(0..4)];
            let got = extract_structure(&g, u, v, k_path, l_max, usize::MAX);
            match (got, structure_ref(&g, u, v, k_path, l_max)) {
                (Err(ExtractError::NoPath { .. }), None) => no_path += 1,
                (Ok(s), Some((objects, links))) => {
                    let got_links: Vec<LinkKey> = s.links.iter().map(|l| (l.src, l.dst, l.link_type)).collect();
                    if s.objects != objects || got_links != links {
                        return Err(format!(
                            "graph {gi} pair ({u}, {v}) k_path {k_path} l_max {l_max}: objects {:?} vs {objects:?}, links {got_links:?} vs {links:?}",
                            s.objects
                        ));
                    }
                    compared += 1;
                }
                (got, want) => {
                    return Err(format!(
                        "graph {gi} pair ({u}, {v}): extraction {:?} but reference found {} structure",
                        got.map(|s| s.objects),
                        if want.is_some() { "a" } else { "no" }
                    ))
                }
            }
        }
    }
    Ok(format!("{graphs} graphs, {compared} structures equal, {no_path} unreachable pairs agreed"))
}

/// Every generated subgraph is induced on its selected types and, after
/// repair, every object reaches both query objects.
pub fn repair_reachability(subgraphs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut repaired) = (0, 0);
    while checked < subgraphs {
        let n = rng.gen_range(6..=20);
        let (types, p) = (rng.gen_range(2..=5), rng.gen_range(0.1..0.3));
        let g = random_graph(&mut rng, n, types, 2, p, 2);
        let u = rng.gen_range(0..n);
        let v = (u + rng.gen_range(1..n)) % n;
        let Ok(s) = extract_structure(&g, u, v, rng.gen_range(1..=20), 5, usize::MAX) else {
            continue;
        };
        let emb = EmbeddingTable::new(3, (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect());
        let cfg = SubgraphConfig {
            n_type_min: 2,
            n_type_max: rng.gen_range(2..=5),
            m: 3,
        };
        let set = generate_subgraphs(&g, &s, &emb, &cfg, rng.gen());
        let structure_links: BTreeSet<(usize, usize, usize)> =
            s.links.iter().map(|l| (l.src, l.dst, l.link_type)).collect();
        for sub in &set.subgraphs {
            let induced: Vec<usize> = s
                .objects
                .iter()
                .copied()
                .filter(|&o| sub.selected_types.contains(&g.type_of(o)))
                .collect();
            if sub.objects != induced {
                return Err(format!("subgraph {checked}: objects {:?} are not induced ({induced:?})", sub.objects));
            }
            if sub.objects[sub.u] != u || sub.objects[sub.v] != v {
                return Err(format!("subgraph {checked}: query objects moved"));
            }
            for l in &sub.links {
                let (a, b) = (sub.objects[l.a], sub.objects[l.b]);
                if !l.is_synthetic() && !structure_links.contains(&(a.min(b), a.max(b), l.link_type)) {
                    return Err(format!("subgraph {checked}: link ({a}, {b}) is not in the structure"));
                }
            }
            let d = floyd(sub.len(), sub.links.iter().map(|l| (l.a, l.b)));
            if let Some(i) = (0..sub.len()).find(|&i| d[i][sub.u].is_none() || d[i][sub.v].is_none()) {
                return Err(format!("subgraph {checked}: object {} misses a query object", sub.objects[i]));
            }
            repaired += usize::from(sub.synthetic_links() > 0);
            checked += 1;
            if checked == subgraphs {
                break;
            }
        }
    }
    Ok(format!("{checked} subgraphs reach both query objects ({repaired} needed repair)"))
}

/// Two-hop structures hold exactly the objects within two hops of either
/// query object and every link among them.
pub fn two_hop_containment(graphs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for gi in 0..graphs {
        let n = rng.gen_range(4..=20);
        let p = rng.gen_range(0.05..0.3);
        let g = random_graph(&mut rng, n, 3, 2, p, 1);
        let d = floyd(n, graph_edges(&g));
        let u = rng.gen_range(0..n);
        let v = (u + rng.gen_range(1..n)) % n;
        let l_max = rng.gen_range(1..=6);
        let got = two_hop_structure(&g, u, v, l_max);
        if d[u][v].is_none_or(|x| x > l_max) {
            if !matches!(got, Err(ExtractError::NoPath { .. })) {
                return Err(format!("graph {gi}: pair ({u}, {v}) beyond l_max was accepted"));
            }
            continue;
        }
        let s = got.map_err(|e| format!("graph {gi}: {e}"))?;
        let within = |i: usize| d[u][i].is_some_and(|x| x <= 2) || d[v][i].is_some_and(|x| x <= 2);
        let objects: Vec<usize> = (0..n).filter(|&i| within(i)).collect();
        let links: BTreeSet<(usize, usize, usize)> = g
            .links()
            .iter()
            .filter(|l| within(l.src) && within(l.dst))
            .map(|l| (l.src.min(l.dst), l.src.max(l.dst), l.link_type))
            .collect();
        let got_links: BTreeSet<(usize, usize, usize)> = s.links.iter().map(|l| (l.src, l.dst, l.link_type)).collect();
        if s.objects != objects || got_links != links {
            return Err(format!("graph {gi}: two-hop structure differs from the reference"));
        }
    }
    Ok(format!("{graphs} two-hop structures match"))
}
