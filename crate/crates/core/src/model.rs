//! Model configuration, pipeline variants and the named parameter store.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use autodiff::{Gradients, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error("subgraph has {found} types but the model has {max} rank slots")]
    TooManyTypes { found: usize, max: usize },
    #[error("invalid model input: {0}")]
    Invalid(String),
}

/// Pipeline wiring for the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// Two-hop neighborhoods instead of scored paths.
    #[serde(rename = "2hop")]
    TwoHop,
    /// Graph view only.
    #[serde(rename = "no-ov")]
    NoOv,
    /// Object view only.
    #[serde(rename = "no-gv")]
    NoGv,
    /// Plain means instead of the hyper-graph network.
    #[serde(rename = "no-hyper")]
    NoHyper,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::TwoHop,
        Variant::NoOv,
        Variant::NoGv,
        Variant::NoHyper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TwoHop => "2hop",
            Variant::NoOv => "no-ov",
            Variant::NoGv => "no-gv",
            Variant::NoHyper => "no-hyper",
        }
    }

    pub fn uses_object_view(self) -> bool {
        self != Variant::NoOv
    }

    pub fn uses_graph_view(self) -> bool {
        self != Variant::NoGv
    }

    pub fn uses_hyper(self) -> bool {
        self != Variant::NoHyper
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant '{s}' (expected full, 2hop, no-ov, no-gv or no-hyper)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of projected object features.
    pub d_h: usize,
    /// Hidden width of the slot-weight attention.
    pub d_att: usize,
    /// Hidden width of the graph-view message passing.
    pub d_sage: usize,
    /// Graph-view output width.
    pub d_gv: usize,
    /// Object-view neighborhood radius.
    pub hop: usize,
    pub leaky_slope: f64,
    pub theta_ho: f64,
    pub theta_he: f64,
    pub hyper_layers: usize,
    /// Number of rank slots (largest `N_type`).
    pub n_slots: usize,
    /// Distance buckets of the structural feature.
    pub d_max: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            d_att: 64,
            d_sage: 64,
            d_gv: 64,
            hop: 2,
            leaky_slope: 0.2,
            theta_ho: 0.75,
            theta_he: 0.15,
            hyper_layers: 2,
            n_slots: 6,
            d_max: 8,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Length of the structural feature: distance buckets plus rank one-hot
    /// (rank 0 is reserved for the query objects).
    pub fn structural_dim(&self) -> usize {
        self.d_max + self.n_slots + 1
    }

    /// Width of one subgraph embedding under the configured variant.
    pub fn z_dim(&self) -> usize {
        let ov = if self.variant.uses_object_view() { self.d_h } else { 0 };
        let gv = if self.variant.uses_graph_view() { self.d_gv } else { 0 };
        ov + gv
    }

    pub fn validate(&self) -> Result<(), String> {
        if [self.d_h, self.d_att, self.d_sage, self.d_gv, self.hop, self.n_slots, self.d_max]
            .contains(&0)
        {
            return Err("model widths, hop, n_slots and d_max must be positive".into());
        }
        if self.theta_ho <= self.theta_he {
            return Err(format!(
                "theta_ho ({}) must exceed theta_he ({})",
                self.theta_ho, self.theta_he
            ));
        }
        if !(self.leaky_slope.is_finite() && self.theta_ho.is_finite() && self.theta_he.is_finite()) {
            return Err("slope and thresholds must be finite".into());
        }
        Ok(())
    }
}

pub fn projection_name(slot: usize, in_dim: usize) -> String {
    format!("ov.proj.slot{slot}.in{in_dim}")
}

/// Trainable tensors addressed by stable names.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// All fixed-shape parameters of `cfg`. Feature projections are created
    /// on demand by [`ModelParams::ensure`] since input widths vary by graph.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::empty(seed);
        for k in 1..=cfg.n_slots {
            p.ensure(&format!("ov.att.slot{k}.self"), cfg.d_h, 1);
            p.ensure(&format!("ov.att.slot{k}.nb"), cfg.d_h, 1);
        }
        p.ensure("ov.type.w", cfg.d_h, cfg.d_att);
        p.ensure("ov.type.b", 1, cfg.d_att);
        p.ensure("ov.type.a", cfg.d_att, 1);
        let mut width = cfg.structural_dim() + cfg.d_h;
        for l in 1..=2 {
            p.ensure(&format!("gv.l{l}.self"), width, cfg.d_sage);
            p.ensure(&format!("gv.l{l}.neigh"), width, cfg.d_sage);
            p.ensure(&format!("gv.l{l}.b"), 1, cfg.d_sage);
            width = cfg.d_sage;
        }
        p.ensure("gv.out", cfg.d_sage, cfg.d_gv);
        let d = cfg.z_dim();
        for l in 1..=cfg.hyper_layers {
            for ch in ["ho", "he"] {
                p.ensure(&format!("hyper.l{l}.{ch}.self"), d, 1);
                p.ensure(&format!("hyper.l{l}.{ch}.nb"), d, 1);
            }
        }
        p
    }

    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            tensors: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Creates `name` with seeded initialization unless it exists. Returns
    /// whether it was created.
    pub fn ensure(&mut self, name: &str, rows: usize, cols: usize) -> bool {
        if self.tensors.contains_key(name) {
            return false;
        }
        let t = init_tensor(self.seed, name, rows, cols);
        self.tensors.insert(name.to_string(), t);
        true
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: String, value: Tensor) {
        self.tensors.insert(name, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update([0]);
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for x in t.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Biases (names ending in `.b`) start at zero; everything else is uniform
/// in `±1/sqrt(rows)`.
fn init_tensor(seed: u64, name: &str, rows: usize, cols: usize) -> Tensor {
    if name.ends_with(".b") {
        return Tensor::zeros(rows, cols);
    }
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}

/// Puts parameters on a tape as they are first used.
pub struct ParamBinder<'a> {
    tape: &'a Tape,
    params: &'a ModelParams,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a> ParamBinder<'a> {
    /// With `trainable == false` parameters become constants and report no
    /// gradients.
    pub fn new(tape: &'a Tape, params: &'a ModelParams, trainable: bool) -> Self {
        Self {
            tape,
            params,
            trainable,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn tape(&self) -> &'a Tape {
        self.tape
    }

    /// # Panics
    /// If `name` was never created; callers ensure parameters up front.
    pub fn get(&self, name: &str) -> Var {
        if let Some(&v) = self.bound.borrow().get(name) {
            return v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .clone();
        let var = if self.trainable {
            self.tape.param(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut().insert(name.to_string(), var);
        var
    }

    /// Names bound so far.
    pub fn used(&self) -> Vec<String> {
        self.bound.borrow().keys().cloned().collect()
    }

    /// Gradient per parameter name; parameters the loss never touched get
    /// zeros.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let bound = self.bound.borrow();
        self.params
            .iter()
            .map(|(name, t)| {
                let g = bound
                    .get(name)
                    .and_then(|&v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
                (name.clone(), g)
            })
            .collect()
    }
}
