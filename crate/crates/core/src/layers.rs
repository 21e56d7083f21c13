//! Stateful layer wrappers that remember what their backward pass needs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, NormCache};
use crate::tensor::{visit_params, LayerParams, Scalar, Tensor, TensorVisitor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

/// A differentiable layer with a hand-written backward pass.
///
/// `backward` must follow the matching `forward` and accumulates parameter
/// gradients into the tensors' gradient buffers.
pub trait Module<T: Scalar> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Visits every named parameter and buffer.
    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>);
}

fn missing_forward(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called without a forward pass"))
}

#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    pub params: LayerParams<T>,
    pub stride: usize,
    pub padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal initialized convolution without bias.
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let weight = Tensor::randn(&[cout, cin, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
        Self::from_params(LayerParams::new().with("weight", weight.with_grad()), stride, padding)
    }

    pub fn from_params(params: LayerParams<T>, stride: usize, padding: usize) -> Self {
        Self {
            params,
            stride,
            padding,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.params.get("weight").map(|w| w.shape()[0]).unwrap_or(0)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = ops::conv2d(input, &self.params, self.stride, self.padding)?;
        self.input = Some(input.detach());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.as_ref().ok_or_else(|| missing_forward("conv2d"))?;
        let g = ops::conv2d_backward(
            input,
            self.params.get("weight")?,
            grad_out,
            self.stride,
            self.padding,
        )?;
        self.params.get_mut("weight")?.accumulate_grad(&g.weight);
        if self.params.contains("bias") {
            self.params.get_mut("bias")?.accumulate_grad(&g.bias);
        }
        Ok(g.input)
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        visit_params(&mut self.params, prefix, f);
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub params: LayerParams<T>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<(NormCache<T>, bool)>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            params: ops::batch_norm_params(channels),
            momentum: 0.1,
            epsilon: ops::DEFAULT_EPS,
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = ops::batch_norm_forward(
            input,
            &mut self.params,
            mode.is_train(),
            self.momentum,
            self.epsilon,
        )?;
        self.cache = Some((cache, mode.is_train()));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (cache, training) = self.cache.as_ref().ok_or_else(|| missing_forward("batch_norm"))?;
        let g = ops::batch_norm_backward(
            cache,
            self.params.get("weight")?.data(),
            grad_out,
            *training,
        )?;
        self.params.get_mut("weight")?.accumulate_grad(&g.weight);
        self.params.get_mut("bias")?.accumulate_grad(&g.bias);
        Ok(g.input)
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        visit_params(&mut self.params, prefix, f);
    }
}

/// Instance normalization. Affine terms are off unless requested.
#[derive(Clone, Debug)]
pub struct InstanceNorm2d<T: Scalar = f32> {
    pub epsilon: f64,
    pub affine: Option<LayerParams<T>>,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> InstanceNorm2d<T> {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            affine: None,
            cache: None,
        }
    }

    pub fn with_affine(epsilon: f64, channels: usize) -> Self {
        Self {
            epsilon,
            affine: Some(
                LayerParams::new()
                    .with("weight", Tensor::full(&[channels], T::one()).with_grad())
                    .with("bias", Tensor::zeros(&[channels]).with_grad()),
            ),
            cache: None,
        }
    }
}

impl<T: Scalar> Module<T> for InstanceNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let cache = ops::instance_norm_forward(input, self.epsilon)?;
        let out = match &self.affine {
            None => cache.normalized.clone(),
            Some(p) => {
                let (_, c, h, w) = input.dims4()?;
                let gamma = p.get("weight")?.data();
                let beta = p.get("bias")?.data();
                let hw = h * w;
                Tensor::from_fn(input.shape(), |i| {
                    let ch = (i / hw) % c;
                    gamma[ch] * cache.normalized.data()[i] + beta[ch]
                })
            }
        };
        self.cache = Some(cache);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_forward("instance_norm"))?;
        match self.affine.as_mut() {
            None => ops::instance_norm_backward(cache, grad_out),
            Some(p) => {
                let (_, c, h, w) = grad_out.dims4()?;
                let hw = h * w;
                let xh = cache.normalized.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let gamma = p.get("weight")?.data().to_vec();
                let scaled = Tensor::from_fn(grad_out.shape(), |i| {
                    let ch = (i / hw) % c;
                    let g = grad_out.data()[i];
                    dgamma[ch] += g * xh[i];
                    dbeta[ch] += g;
                    g * gamma[ch]
                });
                p.get_mut("weight")?.accumulate_grad(&dgamma);
                p.get_mut("bias")?.accumulate_grad(&dbeta);
                ops::instance_norm_backward(cache, &scaled)
            }
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        if let Some(p) = self.affine.as_mut() {
            visit_params(p, prefix, f);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T: Scalar = f32> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<T: Scalar> Module<T> for Relu<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let out = ops::relu(input);
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.output.as_ref().ok_or_else(|| missing_forward("relu"))?;
        ops::relu_backward(out, grad_out)
    }

    fn visit(&mut self, _prefix: &str, _f: &mut TensorVisitor<'_, T>) {}
}

#[derive(Clone, Debug)]
pub struct Linear<T: Scalar = f32> {
    pub params: LayerParams<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(fin: usize, fout: usize, bias: bool, rng: &mut R) -> Self {
        let std = (1.0 / fin as f64).sqrt();
        let mut params =
            LayerParams::new().with("weight", Tensor::randn(&[fout, fin], std, rng).with_grad());
        if bias {
            params = params.with("bias", Tensor::zeros(&[fout]).with_grad());
        }
        Self::from_params(params)
    }

    pub fn from_params(params: LayerParams<T>) -> Self {
        Self {
            params,
            input: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.params.get("weight").map(|w| w.shape()[0]).unwrap_or(0)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let bias = if self.params.contains("bias") {
            Some(self.params.get("bias")?)
        } else {
            None
        };
        let out = ops::linear(input, self.params.get("weight")?, bias)?;
        self.input = Some(input.detach());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.as_ref().ok_or_else(|| missing_forward("linear"))?;
        let g = ops::linear_backward(input, self.params.get("weight")?, grad_out)?;
        self.params.get_mut("weight")?.accumulate_grad(&g.weight);
        if self.params.contains("bias") {
            self.params.get_mut("bias")?.accumulate_grad(&g.bias);
        }
        Ok(g.input)
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        visit_params(&mut self.params, prefix, f);
    }
}

#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl<T: Scalar> Module<T> for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.input_shape = Some(input.shape().to_vec());
        ops::global_avg_pool(input)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.as_ref().ok_or_else(|| missing_forward("global_avg_pool"))?;
        ops::global_avg_pool_backward(shape, grad_out)
    }

    fn visit(&mut self, _prefix: &str, _f: &mut TensorVisitor<'_, T>) {}
}

/// Zeroes every gradient buffer of a module.
pub fn zero_grad<T: Scalar, M: Module<T> + ?Sized>(module: &mut M) {
    module.visit("", &mut |_, t| t.zero_grad());
}
