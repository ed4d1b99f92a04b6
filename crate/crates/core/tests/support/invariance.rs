//! Normalization and permutation invariants of the assembled model.

use std::sync::Arc;

use autodiff::{Tape, Tensor};
use hetrel::episodic::{forward_episode, pair_embeddings, prepare_episode};
use hetrel::extract::{EpisodeTask, NormalizedSubgraph, SubLink, SubgraphSet};
use hetrel::model::{ModelConfig, ModelParams, ParamBinder, Variant};
use hetrel::twoview::{graph_view, object_view, project_features, SubgraphBatch};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradients::{toy_episodes, toy_model};
use super::oracles::{classify_values, random_subgraph};
use super::Check;

const TOL: f64 = 1e-12;

fn segments_sum_to_one(values: &[f64], offsets: &[usize], what: &str) -> Result<usize, String> {
    let mut checked = 0;
    for w in offsets.windows(2).filter(|w| w[1] > w[0]) {
        let s: f64 = values[w[0]..w[1]].iter().sum();
        if (s - 1.0).abs() > TOL {
            return Err(format!("{what} segment sums to {s}"));
        }
        checked += 1;
    }
    Ok(checked)
}

/// The same subgraph with its objects listed in another order.
pub fn permute_objects<R: Rng>(sub: &NormalizedSubgraph, rng: &mut R) -> NormalizedSubgraph {
    let n = sub.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let mut links: Vec<SubLink> = sub
        .links
        .iter()
        .map(|l| SubLink {
            a: new_index[l.a],
            b: new_index[l.b],
            link_type: l.link_type,
        })
        .collect();
    links.shuffle(rng);
    NormalizedSubgraph::new(
        order.iter().map(|&o| sub.objects[o]).collect(),
        order.iter().map(|&o| sub.object_types[o]).collect(),
        order.iter().map(|&o| sub.features[o].clone()).collect(),
        links,
        sub.selected_types.clone(),
        sub.selected_type_names.clone(),
        new_index[sub.u],
        new_index[sub.v],
    )
}

fn shuffled_set<R: Rng>(set: &SubgraphSet, rng: &mut R) -> Arc<SubgraphSet> {
    let mut s = set.clone();
    s.subgraphs.shuffle(rng);
    Arc::new(s)
}

fn graph_view_rows(subs: &[&NormalizedSubgraph], cfg: &ModelConfig, params: &mut ModelParams) -> Tensor {
    let batch = SubgraphBatch::new(subs, cfg).unwrap();
    batch.ensure_params(params, cfg);
    let tape = Tape::new();
    let p = ParamBinder::new(&tape, params, false);
    let h = project_features(&p, &batch).unwrap();
    tape.value(graph_view(&p, &batch, h).unwrap())
}

/// Graph-view embeddings of `count` random subgraphs, bitwise equal under
/// a random relabelling of their objects.
pub fn graph_view_permutation(seed: u64, count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig { n_slots: 4, ..toy_model(Variant::Full) };
    let mut params = ModelParams::new(&cfg, seed);
    for i in 0..count {
        let sub = random_subgraph(&mut rng, 9, 3);
        let permuted = permute_objects(&sub, &mut rng);
        let a = graph_view_rows(&[&sub], &cfg, &mut params);
        let b = graph_view_rows(&[&permuted], &cfg, &mut params);
        if bits(&a) != bits(&b) {
            return Err(format!("subgraph {i}: {:?} vs {:?}", a.data(), b.data()));
        }
    }
    Ok(format!("{count} random subgraphs"))
}

fn prototypes(task: &EpisodeTask, cfg: &ModelConfig, params: &mut ModelParams) -> (Tensor, Tensor) {
    let prep = prepare_episode(task, cfg, params).unwrap();
    let tape = Tape::new();
    let p = ParamBinder::new(&tape, params, false);
    let out = forward_episode(&p, &prep, cfg).unwrap();
    (tape.value(out.prototypes), tape.value(out.probs))
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

/// Softmax normalization, permutation invariance of the graph view,
/// prototypes and pair embeddings, and argmax = nearest prototype.
pub fn invariance_suite(episodes: usize, argmax_instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = toy_episodes(episodes);
    let (mut softmax_segments, mut gv_checks, mut proto_checks, mut pair_checks) = (0, 0, 0, 0);
    for (e, task) in tasks.iter().enumerate() {
        let cfg = toy_model(Variant::Full);
        let mut params = ModelParams::new(&cfg, e as u64);

        let subs: Vec<&NormalizedSubgraph> = task
            .support
            .iter()
            .chain(&task.query)
            .flat_map(|(set, _)| &set.subgraphs)
            .collect();
        let batch = SubgraphBatch::new(&subs, &cfg).unwrap();
        batch.ensure_params(&mut params, &cfg);
        {
            let tape = Tape::new();
            let p = ParamBinder::new(&tape, &params, false);
            let h = project_features(&p, &batch).unwrap();
            let ov = object_view(&p, &batch, h, &cfg).unwrap();
            softmax_segments += segments_sum_to_one(tape.value(ov.alpha).data(), &ov.segment_offsets, "neighbor attention")?;
            softmax_segments += segments_sum_to_one(tape.value(ov.beta).data(), &ov.slot_offsets, "slot weights")?;
        }

        let (protos, probs) = prototypes(task, &cfg, &mut params);
        let n_rel = task.relation_names.len();
        let offsets: Vec<usize> = (0..=task.query.len()).map(|q| q * n_rel).collect();
        softmax_segments += segments_sum_to_one(probs.data(), &offsets, "class probabilities")?;

        for sub in &subs {
            let permuted = permute_objects(sub, &mut rng);
            let a = graph_view_rows(&[sub], &cfg, &mut params);
            let b = graph_view_rows(&[&permuted], &cfg, &mut params);
            if bits(&a) != bits(&b) {
                return Err(format!("episode {e}: graph view changed under object permutation"));
            }
            gv_checks += 1;
        }

        let mut shuffled = task.clone();
        shuffled.support.shuffle(&mut rng);
        for (set, _) in &mut shuffled.support {
            *set = shuffled_set(set, &mut rng);
        }
        let (again, _) = prototypes(&shuffled, &cfg, &mut params);
        if bits(&protos) != bits(&again) {
            return Err(format!("episode {e}: prototypes changed under support permutation"));
        }
        proto_checks += 1;

        for (set, _) in task.query.iter().chain(&task.support) {
            let other = shuffled_set(set, &mut rng);
            let a = pair_embeddings(&mut params, &cfg, &[set.as_ref()]).unwrap();
            let b = pair_embeddings(&mut params, &cfg, &[other.as_ref()]).unwrap();
            if a != b || a[0].iter().zip(&b[0]).any(|(x, y)| x.to_bits() != y.to_bits()) {
                return Err(format!("episode {e}: pair embedding changed under subgraph permutation"));
            }
            pair_checks += 1;
        }
    }

    let mut argmax_checked = 0;
    for case in 0..argmax_instances {
        let (nq, np, d) = (rng.gen_range(1..=5), rng.gen_range(2..=6), rng.gen_range(1..=8));
        let rows = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect()
        };
        let (queries, protos) = (rows(&mut rng, nq), rows(&mut rng, np));
        let probs = classify_values(&queries, &protos);
        for (q, query) in queries.iter().enumerate() {
            let row = &probs[q * np..(q + 1) * np];
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > TOL {
                return Err(format!("argmax instance {case}: probabilities sum to {s}"));
            }
            let dist: Vec<f64> = protos
                .iter()
                .map(|p| query.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let nearest = (0..np).min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
            let argmax = (0..np).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
            let tie = (0..np).any(|j| j != nearest && (dist[j] - dist[nearest]).abs() < 1e-9);
            if !tie && argmax != nearest {
                return Err(format!("argmax instance {case}: class {argmax} but nearest prototype {nearest}"));
            }
            argmax_checked += 1;
        }
    }
    Ok(format!(
        "{softmax_segments} softmax segments, {gv_checks} graph-view, {proto_checks} prototype and {pair_checks} pair-embedding permutations exact, {argmax_checked} argmax checks"
    ))
}
