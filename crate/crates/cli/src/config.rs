use std::fs;
use std::path::Path;

use hetrel::model::Variant;
use hetrel::scenarios::RunConfig;
use hetrel::synthgen::GeneratorConfig;
use serde_json::Value;

use crate::args::{ConfigArgs, GenArgs};
use crate::error::{CliError, CliResult, ErrorClass};

/// Reads a JSON file, classifying failures.
pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new(ErrorClass::Schema, format!("{}: {e}", path.display())))
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    let class = if e.kind() == std::io::ErrorKind::NotFound {
        ErrorClass::MissingFile
    } else {
        ErrorClass::Internal
    };
    CliError::new(class, format!("{}: {e}", path.display()))
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `a.b.c=value` assignment.
pub fn apply_set(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::new(ErrorClass::Config, format!("--set `{assignment}` lacks `=`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for key in path.split('.') {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| CliError::new(ErrorClass::Config, format!("--set `{path}`: `{key}` is not inside a section")))?;
        slot = obj
            .get_mut(key)
            .ok_or_else(|| CliError::new(ErrorClass::Config, format!("--set `{path}`: unknown key `{key}`")))?;
    }
    *slot = value;
    Ok(())
}

fn from_layers<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::new(ErrorClass::Schema, format!("{what}: {e}")))
}

/// Resolves the run configuration for `variant`.
pub fn resolve(args: &ConfigArgs, variant: Variant) -> CliResult<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::preset(args.preset.into())).expect("config serializes");
    if let Some(path) = &args.config {
        merge(&mut value, read_json(path)?);
    }
    for s in &args.sets {
        apply_set(&mut value, s)?;
    }
    let mut cfg: RunConfig = from_layers(value, "run config")?;
    apply_flags(&mut cfg, args);
    let cfg = cfg.for_variant(variant);
    cfg.validate().map_err(|e| CliError::new(ErrorClass::Config, e))?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, a: &ConfigArgs) {
    fn set<T: Copy>(slot: &mut T, v: Option<T>) {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let t = &mut cfg.train;
    set(&mut t.episodes, a.episodes);
    set(&mut t.val_episodes, a.val_episodes);
    set(&mut t.test_episodes, a.test_episodes);
    set(&mut t.val_every, a.val_every);
    set(&mut t.patience, a.patience);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.optimizer, a.optimizer.map(Into::into));
    set(&mut t.n_rel, a.n_rel);
    set(&mut t.k_spt, a.k_spt);
    set(&mut t.k_qry, a.k_qry);

    let x = &mut cfg.extract;
    set(&mut x.k_path, a.k_path);
    set(&mut x.l_max, a.l_max);
    set(&mut x.n_type_min, a.n_type_min);
    set(&mut x.n_type_max, a.n_type_max);
    set(&mut x.m, a.m);
    set(&mut x.seed, a.extract_seed);
    set(&mut x.embed.dim, a.embed_dim);
    set(&mut x.embed.walks_per_object, a.walks);
    set(&mut cfg.embed_seed, a.embed_seed);

    let m = &mut cfg.model;
    set(&mut m.n_slots, a.n_type_max);
    if let Some(h) = a.hidden {
        m.d_h = h;
        m.d_att = h;
        m.d_sage = h;
        m.d_gv = h;
    }
    set(&mut m.theta_ho, a.theta_ho);
    set(&mut m.theta_he, a.theta_he);
    set(&mut m.hyper_layers, a.hyper_layers);
    set(&mut cfg.ranking.episodes, a.rank_episodes);
}

pub fn resolve_generator(args: &GenArgs) -> CliResult<GeneratorConfig> {
    let mut value = serde_json::to_value(GeneratorConfig::default()).expect("config serializes");
    if let Some(path) = &args.gen_config {
        merge(&mut value, read_json(path)?);
    }
    let mut cfg: GeneratorConfig = from_layers(value, "generator config")?;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.graphs {
        cfg.n_graphs = v;
    }
    if let Some(v) = args.objects {
        cfg.objects_per_graph = v;
    }
    if let Some(v) = args.object_types {
        cfg.n_object_types = v;
    }
    if let Some(v) = args.relations {
        cfg.n_relations_per_graph = v;
    }
    if let Some(v) = args.pairs {
        cfg.pairs_per_relation = v;
    }
    cfg.shared_type_vocabulary |= args.shared_types;
    if let Some(p) = &args.id_prefix {
        cfg.id_prefix = p.clone();
    }
    Ok(cfg)
}
