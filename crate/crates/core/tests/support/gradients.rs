//! Central differences against tape gradients for every parameter of the
//! assembled model on small seeded episodes.

use hetrel::embed::EmbedConfig;
use hetrel::episodic::{episode_gradients, episode_loss_value};
use hetrel::extract::{build_episodes, EpisodeTask, ExtractConfig, Extractor, SampleBank};
use hetrel::model::{ModelConfig, ModelParams, Variant};
use hetrel::synthgen::{generate_corpus, GeneratorConfig};

use super::Check;

const H: f64 = 1e-5;

pub fn toy_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_h: 3,
        d_att: 3,
        d_sage: 3,
        d_gv: 3,
        n_slots: 3,
        d_max: 4,
        variant,
        ..ModelConfig::default()
    }
}

pub fn toy_extract() -> ExtractConfig {
    ExtractConfig {
        k_path: 20,
        l_max: 4,
        n_type_min: 2,
        n_type_max: 3,
        m: 1,
        embed: EmbedConfig {
            dim: 4,
            walks_per_object: 5,
            ..EmbedConfig::default()
        },
        ..ExtractConfig::default()
    }
}

/// `count` two-way episodes with one support and two query pairs per
/// relation, each from its own sampling seed.
pub fn toy_episodes(count: usize) -> Vec<EpisodeTask> {
    let corpus = generate_corpus(&GeneratorConfig {
        n_graphs: 2,
        objects_per_graph: 30,
        n_relations_per_graph: 2,
        pairs_per_relation: 6,
        heldout_pairs_per_relation: 0,
        feature_dim: 3,
        ..GeneratorConfig::default()
    })
    .expect("toy corpus")
    .corpus;
    let ex = Extractor::new(&corpus, toy_extract(), 0).expect("toy extractor");
    let graphs: Vec<_> = corpus.graphs().iter().collect();
    let bank = SampleBank::build(&ex, &SampleBank::all_relations(&graphs)).expect("toy bank");
    (0..count as u64)
        .map(|s| {
            build_episodes(&bank, 1, 2, 1, 2, s)
                .expect("toy episode")
                .pop()
                .expect("one episode")
        })
        .collect()
}

pub struct GradError {
    pub worst: f64,
    pub at: String,
    pub scalars: usize,
    pub kinks: usize,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error `|a - n| / max(|a|, |n|, 1e-6)` over every
/// parameter scalar. A scalar sitting on a ReLU kink, where the one-sided
/// differences disagree and the tape picked one of them, is counted in
/// `kinks` instead.
pub fn episode_gradient_error(cfg: &ModelConfig, task: &EpisodeTask, seed: u64) -> GradError {
    let mut params = ModelParams::new(cfg, seed);
    let (_, grads) = episode_gradients(&mut params, cfg, task).expect("gradients");
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut out = GradError { worst: 0.0, at: String::new(), scalars: 0, kinks: 0 };
    for name in names {
        let len = params.get(&name).unwrap().len();
        for e in 0..len {
            let original = params.get(&name).unwrap().data()[e];
            let mut at = |x: f64| {
                params.get_mut(&name).unwrap().data_mut()[e] = x;
                episode_loss_value(&mut params, cfg, task).expect("loss")
            };
            let (up, down, here) = (at(original + H), at(original - H), at(original));
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.get(&name).map_or(0.0, |g| g.data()[e]);
            let err = rel(analytic, numeric);
            let (fwd, bwd) = ((up - here) / H, (here - down) / H);
            if err >= 1e-6 && rel(fwd, bwd) > 0.1 && rel(analytic, fwd).min(rel(analytic, bwd)) < 1e-3 {
                out.kinks += 1;
                out.scalars += 1;
                continue;
            }
            if err > out.worst {
                out.worst = err;
                out.at = format!("{name}[{e}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
            out.scalars += 1;
        }
    }
    out
}

pub fn full_model_gradcheck(seeds: usize, tolerance: f64) -> Check {
    let cfg = toy_model(Variant::Full);
    let episodes = toy_episodes(seeds);
    let mut worst: f64 = 0.0;
    let (mut scalars, mut kinks) = (0, 0);
    for (s, task) in episodes.iter().enumerate() {
        let g = episode_gradient_error(&cfg, task, s as u64);
        if !(g.worst < tolerance) {
            return Err(format!("seed {s}: relative error {:.3e} at {}", g.worst, g.at));
        }
        worst = worst.max(g.worst);
        scalars += g.scalars;
        kinks += g.kinks;
    }
    if kinks * 100 > scalars {
        return Err(format!("{kinks} of {scalars} scalars sit on kinks"));
    }
    Ok(format!("{seeds} episodes, {scalars} scalars, max relative error {worst:.2e}, {kinks} kink scalars skipped"))
}
