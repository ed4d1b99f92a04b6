//! Brute-force references for scores, features, classification, loss and
//! the evaluation metrics.

use std::collections::BTreeSet;

use autodiff::{Tape, Tensor};
use hetrel::embed::EmbeddingTable;
use hetrel::extract::{path_score, type_similarity, GraphStructure, NormalizedSubgraph, SubLink};
use hetrel::hetgraph::{HeterogeneousGraph, Link};
use hetrel::hyperproto::{classify, episode_loss};
use hetrel::metrics::{accuracy, macro_f1, map_at_k, ndcg_at_k, prc_at_k, CloseCounting, RankedList};
use hetrel::twoview::structural_feature;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{close, floyd, random_graph, Check};

const TOL: f64 = 1e-12;

fn fail(what: &str, case: usize, got: f64, want: f64) -> String {
    format!("{what} instance {case}: got {got:e}, reference {want:e}")
}

fn random_walk_path<R: Rng>(rng: &mut R, g: &HeterogeneousGraph) -> Option<Vec<usize>> {
    let n = g.object_count();
    let mut path = vec![rng.gen_range(0..n)];
    let target = rng.gen_range(2..=7);
    while path.len() < target {
        let here = *path.last().unwrap();
        let options: Vec<usize> = g
            .neighbors(here)
            .unwrap()
            .iter()
            .map(|&(o, _)| o)
            .filter(|o| !path.contains(o))
            .collect();
        match options.choose(rng) {
            Some(&o) => path.push(o),
            None => break,
        }
    }
    (path.len() >= 2).then_some(path)
}

fn path_score_ref(g: &HeterogeneousGraph, path: &[usize]) -> f64 {
    let mut types: Vec<usize> = path.iter().map(|&o| g.type_of(o)).collect();
    let mut cross = 0.0;
    for i in 1..path.len() {
        if g.type_of(path[i - 1]) != g.type_of(path[i]) {
            cross += 1.0;
        }
    }
    types.sort_unstable();
    types.dedup();
    f64::ln(types.len() as f64) * cross / (path.len() - 1) as f64
}

fn check_path_score(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    let mut done = 0;
    while done < n {
        let (n, types) = (rng.gen_range(4..=14), rng.gen_range(2..=5));
        let g = random_graph(rng, n, types, 2, 0.3, 2);
        if let Some(path) = random_walk_path(rng, &g) {
            let (got, want) = (path_score(&g, &path), path_score_ref(&g, &path));
            if !close(got, want, TOL) {
                return Err(fail("path_score", done, got, want));
            }
            done += 1;
        }
    }
    Ok(done)
}

fn type_similarity_ref(g: &HeterogeneousGraph, objects: &[usize], emb: &EmbeddingTable, a: usize, b: usize) -> f64 {
    let mean = |t: usize| {
        let members: Vec<usize> = objects.iter().copied().filter(|&o| g.type_of(o) == t).collect();
        (0..emb.dim())
            .map(|c| {
                if members.is_empty() {
                    0.0
                } else {
                    members.iter().map(|&o| emb.get(o)[c]).sum::<f64>() / members.len() as f64
                }
            })
            .collect::<Vec<f64>>()
    };
    let (x, y) = (mean(a), mean(b));
    let norm = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm(&x) == 0.0 || norm(&y) == 0.0 {
        return 0.0;
    }
    x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>() / (norm(&x) * norm(&y))
}

fn check_type_similarity(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    for case in 0..n {
        let n_obj = rng.gen_range(3..=12);
        let n_types = rng.gen_range(2..=4);
        let g = random_graph(rng, n_obj, n_types, 2, 0.3, 1);
        let dim = rng.gen_range(2..=6);
        let emb = EmbeddingTable::new(
            dim,
            (0..n_obj).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        );
        let mut objects: Vec<usize> = (0..n_obj).filter(|_| rng.gen_bool(0.7)).collect();
        objects.extend([0, 1]);
        objects.sort_unstable();
        objects.dedup();
        let s = GraphStructure {
            u: 0,
            v: 1,
            objects: objects.clone(),
            links: Vec::<Link>::new(),
        };
        let (a, b) = (rng.gen_range(0..n_types), rng.gen_range(0..n_types));
        let got = type_similarity(a, b, &s, &g, &emb);
        let want = type_similarity_ref(&g, &objects, &emb, a, b);
        if !close(got, want, TOL) {
            return Err(fail("type_similarity", case, got, want));
        }
    }
    Ok(n)
}

/// Random subgraph with query objects 0 and 1 and a few stray objects.
pub fn random_subgraph<R: Rng>(rng: &mut R, max_objects: usize, feature_dim: usize) -> NormalizedSubgraph {
    let n = rng.gen_range(2..=max_objects);
    let n_types = rng.gen_range(1..=n.min(4));
    let mut types: Vec<usize> = (0..n).map(|i| if i < n_types { i } else { rng.gen_range(0..n_types) }).collect();
    types.shuffle(rng);
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.35) {
                links.push(SubLink { a, b, link_type: rng.gen_range(0..2) });
            }
        }
    }
    let mut selected: Vec<usize> = (0..n_types).collect();
    selected.shuffle(rng);
    let names = selected.iter().map(|t| format!("T{t}")).collect();
    let features = (0..n).map(|_| (0..feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (u, v) = (0, 1 + rng.gen_range(0..n - 1));
    NormalizedSubgraph::new((0..n).collect(), types, features, links, selected, names, u, v)
}

fn structural_ref(sub: &NormalizedSubgraph, i: usize, d_max: usize, n_slots: usize) -> Vec<f64> {
    let d = floyd(sub.len(), sub.links.iter().map(|l| (l.a, l.b)));
    let mut out = vec![0.0; d_max + n_slots + 1];
    let (du, dv, rank) = if i == sub.u {
        (0, 1, 0)
    } else if i == sub.v {
        (1, 0, 0)
    } else {
        let bucket = |x: Option<usize>| x.map_or(d_max - 1, |x| x.min(d_max - 1));
        let slot = 1 + sub.selected_types.iter().position(|&t| t == sub.object_types[i]).unwrap();
        (bucket(d[i][sub.u]), bucket(d[i][sub.v]), slot.min(n_slots))
    };
    out[du] += 1.0;
    out[dv] += 1.0;
    out[d_max + rank] = 1.0;
    out
}

fn check_structural_feature(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    for case in 0..n {
        let sub = random_subgraph(rng, 10, 1);
        let d_max = rng.gen_range(2..=6);
        let n_slots = rng.gen_range(1..=5);
        for i in 0..sub.len() {
            let got = structural_feature(&sub, i, d_max, n_slots);
            let want = structural_ref(&sub, i, d_max, n_slots);
            if got != want {
                return Err(format!("structural_feature instance {case} object {i}: {got:?} vs {want:?}"));
            }
        }
    }
    Ok(n)
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

/// Class probabilities by the textbook formula, one row per query.
pub fn classify_ref(queries: &[Vec<f64>], protos: &[Vec<f64>]) -> Vec<Vec<f64>> {
    queries
        .iter()
        .map(|q| {
            let d: Vec<f64> = protos
                .iter()
                .map(|p| q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let e: Vec<f64> = d.iter().map(|x| (lo - x).exp()).collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|x| x / total).collect()
        })
        .collect()
}

pub fn classify_values(queries: &[Vec<f64>], protos: &[Vec<f64>]) -> Vec<f64> {
    let t = Tape::new();
    let q = t.constant(Tensor::from_rows(queries).unwrap());
    let p = t.constant(Tensor::from_rows(protos).unwrap());
    t.value(classify(&t, q, p).unwrap()).data().to_vec()
}

fn check_classify(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    for case in 0..n {
        let (nq, np, d) = (rng.gen_range(1..=6), rng.gen_range(1..=5), rng.gen_range(1..=6));
        let queries = random_matrix(rng, nq, d, 2.0);
        let protos = random_matrix(rng, np, d, 2.0);
        let got = classify_values(&queries, &protos);
        let want: Vec<f64> = classify_ref(&queries, &protos).concat();
        if let Some(i) = (0..got.len()).find(|&i| !close(got[i], want[i], TOL)) {
            return Err(fail("classify", case, got[i], want[i]));
        }
    }
    Ok(n)
}

fn check_episode_loss(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    for case in 0..n {
        let (nq, nc) = (rng.gen_range(1..=8), rng.gen_range(2..=5));
        let mut probs = Vec::new();
        for _ in 0..nq {
            let raw: Vec<f64> = (0..nc)
                .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..1.0) })
                .collect();
            let s: f64 = raw.iter().sum::<f64>().max(1e-300);
            probs.extend(raw.iter().map(|x| x / s));
        }
        let labels: Vec<usize> = (0..nq).map(|_| rng.gen_range(0..nc)).collect();
        let want = -labels
            .iter()
            .enumerate()
            .map(|(q, &y)| probs[q * nc + y].max(1e-12).ln())
            .sum::<f64>()
            / nq as f64;
        let t = Tape::new();
        let p = t.constant(Tensor::column(probs));
        let got = t.value(episode_loss(&t, p, &labels, nc).unwrap()).item();
        if !close(got, want, TOL) {
            return Err(fail("episode_loss", case, got, want));
        }
    }
    Ok(n)
}

fn f1_ref(pred: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..n_classes).map(|l| confusion[l][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / n_classes as f64
}

fn check_classification_metrics(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    for case in 0..n {
        let nc = rng.gen_range(2..=5);
        let len = rng.gen_range(1..=30);
        let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(0..nc)).collect();
        let pred: Vec<usize> = labels
            .iter()
            .map(|&l| if rng.gen_bool(0.5) { l } else { rng.gen_range(0..nc) })
            .collect();
        let hits = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let got = accuracy(&pred, &labels).unwrap();
        let want = hits as f64 / len as f64;
        if !close(got, want, TOL) {
            return Err(fail("accuracy", case, got, want));
        }
        let got = macro_f1(&pred, &labels, nc).unwrap();
        let want = f1_ref(&pred, &labels, nc);
        if !close(got, want, TOL) {
            return Err(fail("macro_f1", case, got, want));
        }
    }
    Ok(n)
}

pub fn random_list<R: Rng>(rng: &mut R, len: usize, query: usize) -> RankedList {
    let mut candidates: Vec<usize> = (0..len * 3).filter(|&c| c != query).collect();
    candidates.shuffle(rng);
    candidates.truncate(len);
    let density = rng.gen_range(0.0..0.6);
    RankedList {
        query,
        relation: 0,
        relevant: (0..len).map(|_| rng.gen_bool(density)).collect(),
        close: (0..len).map(|_| rng.gen_bool(density)).collect(),
        candidates,
    }
}

fn ndcg_ref(rel: &[bool], k: usize) -> f64 {
    let gains: Vec<f64> = rel.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
    let dcg = |g: &[f64]| {
        g.iter()
            .take(k)
            .enumerate()
            .map(|(i, x)| x / f64::log2(i as f64 + 2.0))
            .sum::<f64>()
    };
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        0.0
    } else {
        dcg(&gains) / best
    }
}

fn map_ref(rel: &[bool], k: usize) -> f64 {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut ap = 0.0;
    for i in 0..k.min(rel.len()) {
        if rel[i] {
            let precision = rel[..=i].iter().filter(|&&r| r).count() as f64 / (i + 1) as f64;
            ap += precision;
        }
    }
    ap / total.min(k) as f64
}

fn prc_ref(lists: &[RankedList], k: usize, counting: CloseCounting) -> f64 {
    match counting {
        CloseCounting::PerOccurrence => {
            let hits: usize = lists.iter().map(|l| l.close[..k].iter().filter(|&&c| c).count()).sum();
            hits as f64 / (k * lists.len()) as f64
        }
        CloseCounting::Distinct => {
            let set: BTreeSet<usize> = lists
                .iter()
                .flat_map(|l| (0..k).filter(|&i| l.close[i]).map(move |i| l.candidates[i]))
                .collect();
            set.len() as f64 / (k * lists.len()) as f64
        }
    }
}

fn check_ranking_metrics(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    for case in 0..n {
        let len = rng.gen_range(20..=40);
        let k = *[1, 5, 10, 20].choose(rng).unwrap();
        let rl = random_list(rng, len, 9999);
        let got = ndcg_at_k(&rl, k).unwrap();
        let want = ndcg_ref(&rl.relevant, k);
        if !close(got, want, TOL) {
            return Err(fail("ndcg", case, got, want));
        }
        let got = map_at_k(&rl, k).unwrap();
        let want = map_ref(&rl.relevant, k);
        if !close(got, want, TOL) {
            return Err(fail("map", case, got, want));
        }
        let lists: Vec<RankedList> = (0..rng.gen_range(1..=4)).map(|_| random_list(rng, len, 9999)).collect();
        for counting in [CloseCounting::PerOccurrence, CloseCounting::Distinct] {
            let got = prc_at_k(&lists, k, counting).unwrap();
            let want = prc_ref(&lists, k, counting);
            if !close(got, want, TOL) {
                return Err(fail("prc", case, got, want));
            }
            let mut shuffled = lists.clone();
            shuffled.shuffle(rng);
            let again = prc_at_k(&shuffled, k, counting).unwrap();
            if again.to_bits() != got.to_bits() {
                return Err(format!("prc instance {case}: list order changed {got} to {again}"));
            }
        }
    }
    Ok(n)
}

/// Every formula against its reference on `instances` random cases each.
pub fn formula_oracles(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks: [(&str, fn(&mut ChaCha8Rng, usize) -> Result<usize, String>); 7] = [
        ("path_score", check_path_score),
        ("type_similarity", check_type_similarity),
        ("structural_feature", check_structural_feature),
        ("classify", check_classify),
        ("episode_loss", check_episode_loss),
        ("accuracy+macro_f1", check_classification_metrics),
        ("ndcg+map+prc", check_ranking_metrics),
    ];
    let mut parts = Vec::new();
    for (name, check) in checks {
        let count = check(&mut rng, instances)?;
        parts.push(format!("{name} {count}"));
    }
    Ok(format!("{} (tol {TOL:e})", parts.join(", ")))
}
