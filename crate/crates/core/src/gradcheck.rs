//! Central finite-difference verification of hand-written backward passes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Mode, Module};
use crate::tensor::Tensor;

/// Implemented by modules whose backward pass is undefined at some inputs
/// (zero-variance slices, hinge kinks, zero distances).
pub trait Degeneracy {
    fn degenerate_input(&self, _input: &Tensor<f64>) -> Option<String> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Cap on checked entries per tensor; entries are spread evenly.
    pub max_entries: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_entries: usize::MAX,
            seed: 0x9c,
            mode: Mode::Train,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub input_error: f64,
    pub param_errors: BTreeMap<String, f64>,
    /// Set when the input sits on a non-differentiable point; nothing was checked.
    pub degenerate: Option<String>,
    pub checked_entries: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.param_errors
            .values()
            .copied()
            .fold(self.input_error, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.degenerate.is_some() || self.max_error() < tolerance
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn sample_indices(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

fn objective<M: Module<f64> + ?Sized>(
    op: &mut M,
    input: &Tensor<f64>,
    weights: &[f64],
    mode: Mode,
) -> Result<f64> {
    let out = op.forward(input, mode)?;
    Ok(out.data().iter().zip(weights).map(|(a, b)| a * b).sum())
}

fn nudge<M: Module<f64> + ?Sized>(op: &mut M, name: &str, index: usize, delta: f64) {
    op.visit("", &mut |n, t| {
        if n == name {
            t.data_mut()[index] += delta;
        }
    });
}

pub fn grad_check<M>(op: &mut M, input: &Tensor<f64>, tolerance: f64) -> Result<GradCheckReport>
where
    M: Module<f64> + Degeneracy + ?Sized,
{
    let report = grad_check_with(op, input, &GradCheckOptions::default())?;
    if !report.passed(tolerance) {
        log_failure(&report, tolerance);
    }
    Ok(report)
}

fn log_failure(report: &GradCheckReport, tolerance: f64) {
    eprintln!(
        "grad_check above tolerance {tolerance:e}: input {:e}, params {:?}",
        report.input_error, report.param_errors
    );
}

/// Compares the analytic gradient of `sum(r * op(x))` for a fixed random `r`
/// against central differences over the input and every trainable parameter.
pub fn grad_check_with<M>(
    op: &mut M,
    input: &Tensor<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    M: Module<f64> + Degeneracy + ?Sized,
{
    if let Some(reason) = op.degenerate_input(input) {
        return Ok(GradCheckReport {
            degenerate: Some(reason),
            ..Default::default()
        });
    }
    let first = op.forward(input, opts.mode)?;
    let second = op.forward(input, opts.mode)?;
    if first.data() != second.data() {
        return Err(Error::State("operation under check is not deterministic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let weights = Tensor::<f64>::randn(first.shape(), 1.0, &mut rng);

    op.visit("", &mut |_, t| t.zero_grad());
    op.forward(input, opts.mode)?;
    let grad_in = op.backward(&weights)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    op.visit("", &mut |n, t| {
        if let Some(g) = t.grad() {
            analytic.push((n.to_string(), g.to_vec()));
        }
    });

    let h = opts.step;
    let mut report = GradCheckReport::default();
    let mut x = input.clone();
    for i in sample_indices(x.numel(), opts.max_entries) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = objective(op, &x, weights.data(), opts.mode)?;
        x.data_mut()[i] = orig - h;
        let minus = objective(op, &x, weights.data(), opts.mode)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        report.input_error = report.input_error.max(rel_error(grad_in.data()[i], numeric));
        report.checked_entries += 1;
    }
    for (name, grad) in &analytic {
        let mut worst: f64 = 0.0;
        for i in sample_indices(grad.len(), opts.max_entries) {
            nudge(op, name, i, h);
            let plus = objective(op, input, weights.data(), opts.mode)?;
            nudge(op, name, i, -2.0 * h);
            let minus = objective(op, input, weights.data(), opts.mode)?;
            nudge(op, name, i, h);
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(rel_error(grad[i], numeric));
            report.checked_entries += 1;
        }
        report.param_errors.insert(name.clone(), worst);
    }
    Ok(report)
}

mod impls {
    use super::Degeneracy;
    use crate::layers::{BatchNorm2d, Conv2d, GlobalAvgPool, InstanceNorm2d, Linear, Relu};
    use crate::tensor::Tensor;

    impl Degeneracy for Conv2d<f64> {}
    impl Degeneracy for BatchNorm2d<f64> {}
    impl Degeneracy for Linear<f64> {}
    impl Degeneracy for GlobalAvgPool {}

    impl Degeneracy for Relu<f64> {
        fn degenerate_input(&self, input: &Tensor<f64>) -> Option<String> {
            input
                .data()
                .iter()
                .any(|v| v.abs() < 1e-3)
                .then(|| "input within finite-difference step of the ReLU kink".to_string())
        }
    }

    impl Degeneracy for InstanceNorm2d<f64> {
        fn degenerate_input(&self, input: &Tensor<f64>) -> Option<String> {
            let (_, _, h, w) = input.dims4().ok()?;
            input.data().chunks(h * w).enumerate().find_map(|(i, s)| {
                let n = s.len() as f64;
                let mean = s.iter().sum::<f64>() / n;
                let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (var < 1e-6).then(|| format!("zero-variance slice {i}"))
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BatchNorm2d, Conv2d, GlobalAvgPool, InstanceNorm2d, Linear, Relu};
    use crate::ops::DEFAULT_EPS;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_layer_double_precision() {
        let mut r = rng(1);
        let mut op = Linear::<f64>::new(5, 4, true, &mut r);
        let x = Tensor::randn(&[3, 5], 1.0, &mut r);
        let report = grad_check(&mut op, &x, 1e-6).unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn instance_norm_random_input() {
        let mut r = rng(2);
        let mut op = InstanceNorm2d::<f64>::new(DEFAULT_EPS);
        let x = Tensor::randn(&[2, 3, 3, 4], 1.0, &mut r);
        let report = grad_check(&mut op, &x, 1e-5).unwrap();
        assert!(report.degenerate.is_none());
        assert!(report.max_error() < 1e-5, "{report:?}");
    }

    #[test]
    fn instance_norm_constant_input_is_flagged() {
        let mut op = InstanceNorm2d::<f64>::new(DEFAULT_EPS);
        let x = Tensor::full(&[1, 1, 2, 2], 3.0);
        let report = grad_check(&mut op, &x, 1e-5).unwrap();
        assert!(report.degenerate.is_some());
        assert_eq!(report.checked_entries, 0);
    }

    #[test]
    fn affine_instance_norm() {
        let mut r = rng(3);
        let mut op = InstanceNorm2d::<f64>::with_affine(DEFAULT_EPS, 2);
        op.visit("", &mut |_, t| {
            for v in t.data_mut() {
                *v += 0.3;
            }
        });
        let x = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut r);
        let report = grad_check(&mut op, &x, 1e-4).unwrap();
        assert_eq!(report.param_errors.len(), 2);
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn conv_batchnorm_relu_pool() {
        let mut r = rng(4);
        let x = Tensor::randn(&[2, 3, 5, 5], 1.0, &mut r);
        let mut conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, &mut r);
        assert!(grad_check(&mut conv, &x, 1e-4).unwrap().passed(1e-4));
        let mut bn = BatchNorm2d::<f64>::new(3);
        assert!(grad_check(&mut bn, &x, 1e-4).unwrap().passed(1e-4));
        let mut pool = GlobalAvgPool::new();
        assert!(grad_check(&mut pool, &x, 1e-4).unwrap().passed(1e-4));
        let away = x.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        let mut relu = Relu::<f64>::new();
        let report = grad_check(&mut relu, &away, 1e-4).unwrap();
        assert!(report.degenerate.is_none() && report.passed(1e-4));
    }

    struct Flaky(u64);
    impl Module<f64> for Flaky {
        fn forward(&mut self, input: &Tensor<f64>, _mode: Mode) -> Result<Tensor<f64>> {
            self.0 += 1;
            Ok(input.map(|v| v + self.0 as f64))
        }
        fn backward(&mut self, g: &Tensor<f64>) -> Result<Tensor<f64>> {
            Ok(g.clone())
        }
        fn visit(&mut self, _: &str, _: &mut crate::tensor::TensorVisitor<'_, f64>) {}
    }
    impl Degeneracy for Flaky {}

    #[test]
    fn nondeterministic_op_rejected() {
        let x = Tensor::full(&[2], 1.0);
        assert!(matches!(
            grad_check(&mut Flaky(0), &x, 1e-4),
            Err(Error::State(_))
        ));
    }
}
