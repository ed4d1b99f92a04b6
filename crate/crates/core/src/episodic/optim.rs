//! First-order optimizers over named parameters.

use std::collections::BTreeMap;

use autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update of every parameter that has a gradient entry.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= self.lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let n = g.len();
                    let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
                    let c1 = 1.0 - self.beta1.powi(self.step);
                    let c2 = 1.0 - self.beta2.powi(self.step);
                    for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                        *x -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: Vec<f64>) -> ModelParams {
        let mut p = ModelParams::empty(0);
        p.insert("w".into(), Tensor::row(x));
        p
    }

    #[test]
    fn sgd_moves_by_lr_times_grad() {
        let mut p = one_param(vec![1.0, -2.0]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::row(vec![0.5, -4.0]))]);
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut p, &grads);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.95).abs() < 1e-12 && (w[1] + 1.6).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = one_param(vec![1.0, 1.0]);
        let grads = BTreeMap::from([("w".to_string(), Tensor::row(vec![3.0, -0.01]))]);
        Optimizer::new(OptimizerKind::Adam, 1e-3).step(&mut p, &grads);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut p = one_param(vec![0.25, -3.5]);
            let before = p.clone();
            let grads = BTreeMap::from([("w".to_string(), Tensor::row(vec![2.0, 7.0]))]);
            let mut opt = Optimizer::new(kind, 0.0);
            for _ in 0..5 {
                opt.step(&mut p, &grads);
            }
            assert_eq!(p, before);
        }
    }
}
