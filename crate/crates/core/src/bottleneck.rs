//! Residual bottleneck block with optional instance normalization at its end.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::Degeneracy;
use crate::layers::{BatchNorm2d, Conv2d, InstanceNorm2d, Mode, Module, Relu};
use crate::ops::DEFAULT_EPS;
use crate::tensor::{join_name, Scalar, Tensor, TensorVisitor};

/// Per-channel `gain * z + bias` injected in front of the block's IN.
/// Used to probe style sensitivity; gains must be positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ChannelAffine<T> {
    fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = z.dims4()?;
        if self.gain.len() != c || self.bias.len() != c {
            return Err(Error::dims("channel affine", z.shape(), &[self.gain.len()]));
        }
        let hw = h * w;
        Ok(Tensor::from_fn(z.shape(), |i| {
            let ch = (i / hw) % c;
            self.gain[ch] * z.data()[i] + self.bias[ch]
        }))
    }
}

/// Where a block applies its IN.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InSite {
    /// On the residual sum, before the final ReLU.
    #[default]
    Join,
    /// On the residual branch after its last BN, before the add.
    Branch,
}

fn probe<T: Scalar>(affine: &Option<ChannelAffine<T>>, z: Tensor<T>) -> Result<Tensor<T>> {
    match affine {
        Some(a) => a.apply(&z),
        None => Ok(z),
    }
}

/// Intermediate activations of one block forward pass.
#[derive(Clone, Debug)]
pub struct BlockTrace<T> {
    /// IN input (after any injected affine): the residual sum for
    /// [`InSite::Join`], the branch output for [`InSite::Branch`].
    pub norm_input: Tensor<T>,
    /// IN output, present only when IN is applied.
    pub normalized: Option<Tensor<T>>,
    pub output: Tensor<T>,
}

/// `conv1x1 → BN → ReLU → conv3x3 → BN → ReLU → conv1x1 → BN`, residual add,
/// final ReLU. IN, when enabled, sits at `in_site`.
#[derive(Clone, Debug)]
pub struct BottleneckBlock<T: Scalar = f32> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: Relu<T>,
    conv3: Conv2d<T>,
    bn3: BatchNorm2d<T>,
    shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    norm: InstanceNorm2d<T>,
    relu_out: Relu<T>,
    pub apply_in: bool,
    pub in_site: InSite,
    pub pre_norm_affine: Option<ChannelAffine<T>>,
}

impl<T: Scalar> BottleneckBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let shortcut = (in_channels != out_channels || stride != 1).then(|| {
            (
                Conv2d::new(in_channels, out_channels, 1, stride, 0, rng),
                BatchNorm2d::new(out_channels),
            )
        });
        Self {
            conv1: Conv2d::new(in_channels, mid_channels, 1, 1, 0, rng),
            bn1: BatchNorm2d::new(mid_channels),
            relu1: Relu::new(),
            conv2: Conv2d::new(mid_channels, mid_channels, 3, stride, 1, rng),
            bn2: BatchNorm2d::new(mid_channels),
            relu2: Relu::new(),
            conv3: Conv2d::new(mid_channels, out_channels, 1, 1, 0, rng),
            bn3: BatchNorm2d::new(out_channels),
            shortcut,
            norm: InstanceNorm2d::new(DEFAULT_EPS),
            relu_out: Relu::new(),
            apply_in: false,
            in_site: InSite::Join,
            pre_norm_affine: None,
        }
    }

    pub fn with_in(mut self, apply_in: bool) -> Self {
        self.apply_in = apply_in;
        self
    }

    pub fn with_site(mut self, site: InSite) -> Self {
        self.in_site = site;
        self
    }

    pub fn set_in_epsilon(&mut self, epsilon: f64) {
        self.norm.epsilon = epsilon;
    }

    pub fn in_epsilon(&self) -> f64 {
        self.norm.epsilon
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.out_channels()
    }

    /// Forward pass that also returns the activations around the IN site.
    pub fn forward_trace(&mut self, input: &Tensor<T>, mode: Mode) -> Result<BlockTrace<T>> {
        let a = self.conv1.forward(input, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu1.forward(&a, mode)?;
        let b = self.conv2.forward(&a, mode)?;
        let b = self.bn2.forward(&b, mode)?;
        let b = self.relu2.forward(&b, mode)?;
        let c = self.conv3.forward(&b, mode)?;
        let c = self.bn3.forward(&c, mode)?;
        let skip = match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let s = conv.forward(input, mode)?;
                bn.forward(&s, mode)?
            }
            None => input.detach(),
        };
        let (norm_input, normalized, output) = match self.in_site {
            InSite::Join => {
                let joined = probe(&self.pre_norm_affine, c.add(&skip)?)?;
                let normalized = if self.apply_in {
                    Some(self.norm.forward(&joined, mode)?)
                } else {
                    None
                };
                let out = self.relu_out.forward(normalized.as_ref().unwrap_or(&joined), mode)?;
                (joined, normalized, out)
            }
            InSite::Branch => {
                let branch = probe(&self.pre_norm_affine, c)?;
                let normalized = if self.apply_in {
                    Some(self.norm.forward(&branch, mode)?)
                } else {
                    None
                };
                let joined = normalized.as_ref().unwrap_or(&branch).add(&skip)?;
                let out = self.relu_out.forward(&joined, mode)?;
                (branch, normalized, out)
            }
        };
        Ok(BlockTrace {
            norm_input,
            normalized,
            output,
        })
    }

    fn probe_backward(&self, g: Tensor<T>) -> Result<Tensor<T>> {
        match &self.pre_norm_affine {
            Some(affine) => {
                let (_, c, h, w) = g.dims4()?;
                let hw = h * w;
                Ok(Tensor::from_fn(g.shape(), |i| g.data()[i] * affine.gain[(i / hw) % c]))
            }
            None => Ok(g),
        }
    }
}

impl<T: Scalar> Module<T> for BottleneckBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_trace(input, mode)?.output)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.relu_out.backward(grad_out)?;
        let (branch_grad, skip_in) = match self.in_site {
            InSite::Join => {
                let g = if self.apply_in { self.norm.backward(&g)? } else { g };
                let g = self.probe_backward(g)?;
                (g.clone(), g)
            }
            InSite::Branch => {
                let b = if self.apply_in { self.norm.backward(&g)? } else { g.clone() };
                (self.probe_backward(b)?, g)
            }
        };
        let skip_grad = match self.shortcut.as_mut() {
            Some((conv, bn)) => {
                let s = bn.backward(&skip_in)?;
                conv.backward(&s)?
            }
            None => skip_in,
        };
        let m = self.bn3.backward(&branch_grad)?;
        let m = self.conv3.backward(&m)?;
        let m = self.relu2.backward(&m)?;
        let m = self.bn2.backward(&m)?;
        let m = self.conv2.backward(&m)?;
        let m = self.relu1.backward(&m)?;
        let m = self.bn1.backward(&m)?;
        let m = self.conv1.backward(&m)?;
        m.add(&skip_grad)
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        self.conv1.visit(&join_name(prefix, "conv1"), f);
        self.bn1.visit(&join_name(prefix, "bn1"), f);
        self.conv2.visit(&join_name(prefix, "conv2"), f);
        self.bn2.visit(&join_name(prefix, "bn2"), f);
        self.conv3.visit(&join_name(prefix, "conv3"), f);
        self.bn3.visit(&join_name(prefix, "bn3"), f);
        if let Some((conv, bn)) = self.shortcut.as_mut() {
            conv.visit(&join_name(prefix, "shortcut.conv"), f);
            bn.visit(&join_name(prefix, "shortcut.bn"), f);
        }
        self.norm.visit(&join_name(prefix, "in"), f);
    }
}

impl BottleneckBlock<f64> {
    /// Inputs to the three ReLUs in train mode.
    fn relu_inputs(&self, input: &Tensor<f64>) -> Result<[Tensor<f64>; 3]> {
        let mut b = self.clone();
        let m = Mode::Train;
        let a = b.bn1.forward(&b.conv1.forward(input, m)?, m)?;
        let r = b.relu1.forward(&a, m)?;
        let c = b.bn2.forward(&b.conv2.forward(&r, m)?, m)?;
        let trace = b.forward_trace(input, m)?;
        let last = match self.in_site {
            InSite::Join => trace.normalized.unwrap_or(trace.norm_input),
            InSite::Branch => {
                let skip = match b.shortcut.as_mut() {
                    Some((conv, bn)) => bn.forward(&conv.forward(input, m)?, m)?,
                    None => input.clone(),
                };
                trace.normalized.unwrap_or(trace.norm_input).add(&skip)?
            }
        };
        Ok([a, c, last])
    }
}

impl Degeneracy for BottleneckBlock<f64> {
    fn degenerate_input(&self, input: &Tensor<f64>) -> Option<String> {
        let near_kink = self
            .relu_inputs(input)
            .ok()?
            .iter()
            .any(|t| t.data().iter().any(|v| v.abs() < 1e-3));
        near_kink.then(|| "a ReLU input lies within finite-difference reach of zero".to_string())
    }
}
