//! First-order optimizers over named parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor, TensorVisitor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            momentum: 0.9,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// Keeps per-parameter state keyed by the parameter's visit name. Tensors
/// without a gradient buffer (running statistics) are left alone.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with learning rate `lr` to every tensor reached by
    /// `visit`.
    pub fn step<T: Scalar>(&mut self, lr: f64, visit: impl FnOnce(&mut TensorVisitor<'_, T>)) {
        self.steps += 1;
        let t = self.steps as i32;
        let cfg = self.cfg.clone();
        let first = &mut self.first;
        let second = &mut self.second;
        visit(&mut |name: &str, tensor: &mut Tensor<T>| {
            let (values, grad) = tensor.value_and_grad_mut();
            let Some(grad) = grad else { return };
            let m = first.entry(name.to_string()).or_insert_with(|| vec![0.0; values.len()]);
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for ((w, g), v) in values.iter_mut().zip(grad.iter()).zip(m.iter_mut()) {
                        let wf = w.as_f64();
                        let g = g.as_f64() + cfg.weight_decay * wf;
                        *v = cfg.momentum * *v + g;
                        *w = T::c(wf - lr * *v);
                    }
                }
                OptimizerKind::Adam => {
                    let s = second.entry(name.to_string()).or_insert_with(|| vec![0.0; values.len()]);
                    let c1 = 1.0 - cfg.beta1.powi(t);
                    let c2 = 1.0 - cfg.beta2.powi(t);
                    for (((w, g), m1), m2) in values.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(s.iter_mut()) {
                        let wf = w.as_f64();
                        let g = g.as_f64() + cfg.weight_decay * wf;
                        *m1 = cfg.beta1 * *m1 + (1.0 - cfg.beta1) * g;
                        *m2 = cfg.beta2 * *m2 + (1.0 - cfg.beta2) * g * g;
                        let update = (*m1 / c1) / ((*m2 / c2).sqrt() + cfg.adam_eps);
                        *w = T::c(wf - lr * update);
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grad: &[f64]) -> Tensor<f64> {
        let mut t = Tensor::new(&[values.len()], values.to_vec()).unwrap().with_grad();
        t.accumulate_grad(grad);
        t
    }

    #[test]
    fn sgd_momentum_two_steps() {
        let mut opt = Optimizer::new(OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = param(&[1.0], &[2.0]);
        opt.step(0.1, |f: &mut TensorVisitor<'_, f64>| f("w", &mut p));
        assert!((p.data()[0] - 0.8).abs() < 1e-12);
        // v = 0.9 * 2 + 2 = 3.8
        opt.step(0.1, |f: &mut TensorVisitor<'_, f64>| f("w", &mut p));
        assert!((p.data()[0] - 0.42).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptimizerKind::Adam,
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = param(&[0.0, 0.0], &[3.0, -0.01]);
        opt.step(0.5, |f: &mut TensorVisitor<'_, f64>| f("w", &mut p));
        assert!((p.data()[0] + 0.5).abs() < 1e-6);
        assert!((p.data()[1] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn buffers_without_grad_untouched() {
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let mut buf = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        opt.step(1.0, |f: &mut TensorVisitor<'_, f64>| f("running_mean", &mut buf));
        assert_eq!(buf.data(), &[1.0, 2.0]);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut opt = Optimizer::new(OptimizerConfig {
            momentum: 0.0,
            weight_decay: 0.1,
            ..Default::default()
        });
        let mut p = param(&[2.0], &[0.0]);
        opt.step(1.0, |f: &mut TensorVisitor<'_, f64>| f("w", &mut p));
        assert!((p.data()[0] - 1.8).abs() < 1e-12);
    }
}
