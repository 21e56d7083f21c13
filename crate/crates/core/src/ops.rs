//! Forward and backward kernels for the fixed layer set.
//!
//! Kernels are pure functions; the stateful wrappers in [`crate::layers`]
//! keep whatever a backward pass needs.

use crate::error::{Error, Result};
use crate::tensor::{LayerParams, Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

fn conv_out(extent: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = extent + 2 * padding;
    if padded < k {
        return Err(Error::Argument(format!(
            "kernel {k} larger than padded extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

struct ConvShape {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl ConvShape {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Argument("conv2d stride must be >= 1".into()));
        }
        let (b, c, h, w) = input.dims4()?;
        let (cout, cin, kh, kw) = weight.dims4()?;
        if cin != c || kh != kw {
            return Err(Error::dims("conv2d", input.shape(), weight.shape()));
        }
        let oh = conv_out(h, kh, stride, padding)?;
        let ow = conv_out(w, kw, stride, padding)?;
        Ok(Self {
            b,
            c,
            h,
            w,
            cout,
            k: kh,
            oh,
            ow,
        })
    }

    fn is_pointwise(&self, stride: usize, padding: usize) -> bool {
        self.k == 1 && stride == 1 && padding == 0
    }
}

/// Unfolds one `[C,H,W]` image into `[C*K*K, OH*OW]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &img[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds columns back into an image, accumulating overlapping taps.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution with weights and optional bias taken from `params`
/// (`"weight"`: `[Cout,Cin,K,K]`, `"bias"`: `[Cout]`).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let bias = if params.contains("bias") {
        Some(params.get("bias")?)
    } else {
        None
    };
    conv2d_forward(input, params.get("weight")?, bias, stride, padding)
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let s = ConvShape::new(input, weight, stride, padding)?;
    if let Some(b) = bias {
        b.ensure_shape("conv2d bias", &[s.cout])?;
    }
    let plane = s.oh * s.ow;
    let ckk = s.c * s.k * s.k;
    let in_stride = s.c * s.h * s.w;
    let mut out = vec![T::zero(); s.b * s.cout * plane];
    let pointwise = s.is_pointwise(stride, padding);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ckk * plane]
    };
    for bi in 0..s.b {
        let img = &input.data()[bi * in_stride..(bi + 1) * in_stride];
        let dst = &mut out[bi * s.cout * plane..(bi + 1) * s.cout * plane];
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                dst[co * plane..(co + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if pointwise {
            img
        } else {
            im2col(
                img, s.c, s.h, s.w, s.k, stride, padding, s.oh, s.ow, &mut cols,
            );
            &cols
        };
        T::gemm(
            false,
            false,
            s.cout,
            plane,
            ckk,
            T::one(),
            weight.data(),
            rhs,
            beta,
            dst,
        );
    }
    Tensor::new(&[s.b, s.cout, s.oh, s.ow], out)
}

/// Direct nested-loop convolution, used as the reference for the gemm path.
pub fn conv2d_naive<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let s = ConvShape::new(input, weight, stride, padding)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(&[s.b, s.cout, s.oh, s.ow]);
    let o = out.data_mut();
    for b in 0..s.b {
        for co in 0..s.cout {
            for oy in 0..s.oh {
                for ox in 0..s.ow {
                    let mut acc = bias.map_or(T::zero(), |bias| bias.data()[co]);
                    for ci in 0..s.c {
                        for ki in 0..s.k {
                            for kj in 0..s.k {
                                let iy = (oy * stride + ki) as isize - padding as isize;
                                let ix = (ox * stride + kj) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let xi = ((b * s.c + ci) * s.h + iy as usize) * s.w + ix as usize;
                                let wi = ((co * s.c + ci) * s.k + ki) * s.k + kj;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    o[((b * s.cout + co) * s.oh + oy) * s.ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Conv2dGrads<T>> {
    let s = ConvShape::new(input, weight, stride, padding)?;
    grad_out.ensure_shape("conv2d backward", &[s.b, s.cout, s.oh, s.ow])?;
    let plane = s.oh * s.ow;
    let ckk = s.c * s.k * s.k;
    let in_stride = s.c * s.h * s.w;
    let pointwise = s.is_pointwise(stride, padding);
    let mut grad_in = vec![T::zero(); input.numel()];
    let mut grad_w = vec![T::zero(); weight.numel()];
    let mut grad_b = vec![T::zero(); s.cout];
    let mut cols = vec![T::zero(); if pointwise { 0 } else { ckk * plane }];
    let mut gcols = vec![T::zero(); if pointwise { 0 } else { ckk * plane }];
    for bi in 0..s.b {
        let img = &input.data()[bi * in_stride..(bi + 1) * in_stride];
        let go = &grad_out.data()[bi * s.cout * plane..(bi + 1) * s.cout * plane];
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        let gi = &mut grad_in[bi * in_stride..(bi + 1) * in_stride];
        if pointwise {
            T::gemm(false, true, s.cout, ckk, plane, T::one(), go, img, T::one(), &mut grad_w);
            T::gemm(true, false, ckk, plane, s.cout, T::one(), weight.data(), go, T::zero(), gi);
        } else {
            im2col(
                img, s.c, s.h, s.w, s.k, stride, padding, s.oh, s.ow, &mut cols,
            );
            T::gemm(false, true, s.cout, ckk, plane, T::one(), go, &cols, T::one(), &mut grad_w);
            T::gemm(
                true,
                false,
                ckk,
                plane,
                s.cout,
                T::one(),
                weight.data(),
                go,
                T::zero(),
                &mut gcols,
            );
            col2im(
                &gcols, s.c, s.h, s.w, s.k, stride, padding, s.oh, s.ow, gi,
            );
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), grad_in)?,
        weight: grad_w,
        bias: grad_b,
    })
}

/// Saved per-slice statistics of a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn slice_stats<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::c(xs.len() as f64);
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var)
}

/// Per-sample, per-channel spatial normalization without affine terms.
pub fn instance_norm<T: Scalar>(input: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    Ok(instance_norm_forward(input, epsilon)?.normalized)
}

pub fn instance_norm_forward<T: Scalar>(input: &Tensor<T>, epsilon: f64) -> Result<NormCache<T>> {
    if epsilon <= 0.0 {
        return Err(Error::Argument("epsilon must be positive".into()));
    }
    let (b, c, h, w) = input.dims4()?;
    let hw = h * w;
    let eps = T::c(epsilon);
    let mut out = vec![T::zero(); input.numel()];
    let mut inv_std = Vec::with_capacity(b * c);
    for (src, dst) in input.data().chunks(hw).zip(out.chunks_mut(hw)) {
        let (mean, var) = slice_stats(src);
        let is = T::one() / (var + eps).sqrt();
        for (o, &x) in dst.iter_mut().zip(src) {
            *o = (x - mean) * is;
        }
        inv_std.push(is);
    }
    Ok(NormCache {
        normalized: Tensor::new(input.shape(), out)?,
        inv_std,
    })
}

/// Exact gradient of [`instance_norm`] with respect to its input.
pub fn instance_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    grad_out.ensure_shape("instance_norm backward", cache.normalized.shape())?;
    let hw = grad_out.numel() / cache.inv_std.len();
    let n = T::c(hw as f64);
    let mut grad = vec![T::zero(); grad_out.numel()];
    for (((gi, go), xh), &is) in grad
        .chunks_mut(hw)
        .zip(grad_out.data().chunks(hw))
        .zip(cache.normalized.data().chunks(hw))
        .zip(&cache.inv_std)
    {
        let sum_g: T = go.iter().copied().sum();
        let sum_gx: T = go.iter().zip(xh).map(|(&g, &x)| g * x).sum();
        for ((d, &g), &x) in gi.iter_mut().zip(go).zip(xh) {
            *d = is / n * (n * g - sum_g - x * sum_gx);
        }
    }
    Tensor::new(grad_out.shape(), grad)
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, rest @ ..] => Ok((*b, *c, rest.iter().product())),
        _ => Err(Error::dims("batch_norm", shape, &[0, 0])),
    }
}

/// Batch normalization over `(B, spatial)` per channel.
///
/// `params` holds `weight`, `bias` (trainable), `running_mean`, `running_var`
/// and `tracked` (number of batches folded into the running statistics).
/// Running statistics follow `r <- (1 - momentum) r + momentum * batch`.
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    training: bool,
    momentum: f64,
    epsilon: f64,
) -> Result<Tensor<T>> {
    Ok(batch_norm_forward(input, params, training, momentum, epsilon)?.0)
}

pub fn batch_norm_params<T: Scalar>(channels: usize) -> LayerParams<T> {
    LayerParams::new()
        .with("weight", Tensor::full(&[channels], T::one()).with_grad())
        .with("bias", Tensor::zeros(&[channels]).with_grad())
        .with("running_mean", Tensor::zeros(&[channels]))
        .with("running_var", Tensor::full(&[channels], T::one()))
        .with("tracked", Tensor::zeros(&[1]))
}

pub fn batch_norm_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    training: bool,
    momentum: f64,
    epsilon: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (b, c, inner) = channel_layout(input.shape())?;
    params.get("weight")?.ensure_shape("batch_norm weight", &[c])?;
    let eps = T::c(epsilon);
    let x = input.data();
    let idx = |bi: usize, ci: usize, i: usize| (bi * c + ci) * inner + i;
    let (mean, var) = if training {
        let n = T::c((b * inner) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ci in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s += x[idx(bi, ci, 0)..idx(bi, ci, 0) + inner].iter().copied().sum::<T>();
            }
            let m = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                v += x[idx(bi, ci, 0)..idx(bi, ci, 0) + inner]
                    .iter()
                    .map(|&e| (e - m) * (e - m))
                    .sum::<T>();
            }
            mean[ci] = m;
            var[ci] = v / n;
        }
        let mom = T::c(momentum);
        let keep = T::one() - mom;
        for (r, &m) in params.get_mut("running_mean")?.data_mut().iter_mut().zip(&mean) {
            *r = keep * *r + mom * m;
        }
        for (r, &v) in params.get_mut("running_var")?.data_mut().iter_mut().zip(&var) {
            *r = keep * *r + mom * v;
        }
        params.get_mut("tracked")?.data_mut()[0] += T::one();
        (mean, var)
    } else {
        if params.get("tracked")?.data()[0] <= T::zero() {
            return Err(Error::State(
                "batch_norm evaluated before running statistics were populated".into(),
            ));
        }
        (
            params.get("running_mean")?.data().to_vec(),
            params.get("running_var")?.data().to_vec(),
        )
    };
    let gamma = params.get("weight")?.data();
    let beta = params.get("bias")?.data();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let start = idx(bi, ci, 0);
            for i in start..start + inner {
                let nv = (x[i] - mean[ci]) * inv_std[ci];
                xhat[i] = nv;
                out[i] = gamma[ci] * nv + beta[ci];
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        NormCache {
            normalized: Tensor::new(input.shape(), xhat)?,
            inv_std,
        },
    ))
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradient of the training-mode batch norm (batch statistics depend on the input).
/// With `training == false` the statistics are constants and the map is affine.
pub fn batch_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
    training: bool,
) -> Result<BatchNormGrads<T>> {
    grad_out.ensure_shape("batch_norm backward", cache.normalized.shape())?;
    let (b, c, inner) = channel_layout(grad_out.shape())?;
    let idx = |bi: usize, ci: usize| (bi * c + ci) * inner;
    let g = grad_out.data();
    let xh = cache.normalized.data();
    let n = T::c((b * inner) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ci in 0..c {
        for bi in 0..b {
            let s = idx(bi, ci);
            for i in s..s + inner {
                dbeta[ci] += g[i];
                dgamma[ci] += g[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for ci in 0..c {
        let scale = gamma[ci] * cache.inv_std[ci];
        for bi in 0..b {
            let s = idx(bi, ci);
            for i in s..s + inner {
                dx[i] = if training {
                    scale / n * (n * g[i] - dbeta[ci] - xh[i] * dgamma[ci])
                } else {
                    scale * g[i]
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape(), dx)?,
        weight: dgamma,
        bias: dbeta,
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given the forward output (positive entries pass through).
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.ensure_shape("relu backward", output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(output.shape(), data)
}

/// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, fin) = input.dims2()?;
    let (fout, win) = weight.dims2()?;
    if win != fin {
        return Err(Error::dims("linear", input.shape(), weight.shape()));
    }
    let mut out = vec![T::zero(); n * fout];
    let beta = if let Some(b) = bias {
        b.ensure_shape("linear bias", &[fout])?;
        for row in out.chunks_mut(fout) {
            row.copy_from_slice(b.data());
        }
        T::one()
    } else {
        T::zero()
    };
    T::gemm(false, true, n, fout, fin, T::one(), input.data(), weight.data(), beta, &mut out);
    Tensor::new(&[n, fout], out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, fin) = input.dims2()?;
    let (fout, _) = weight.dims2()?;
    grad_out.ensure_shape("linear backward", &[n, fout])?;
    let mut gin = vec![T::zero(); n * fin];
    T::gemm(false, false, n, fin, fout, T::one(), grad_out.data(), weight.data(), T::zero(), &mut gin);
    let mut gw = vec![T::zero(); fout * fin];
    T::gemm(true, false, fout, fin, n, T::one(), grad_out.data(), input.data(), T::zero(), &mut gw);
    let mut gb = vec![T::zero(); fout];
    for row in grad_out.data().chunks(fout) {
        for (a, &b) in gb.iter_mut().zip(row) {
            *a += b;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(&[n, fin], gin)?,
        weight: gw,
        bias: gb,
    })
}

/// Mean over spatial positions: `[B,C,H,W] -> [B,C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4()?;
    let hw = h * w;
    let n = T::c(hw as f64);
    let data = input
        .data()
        .chunks(hw)
        .map(|s| s.iter().copied().sum::<T>() / n)
        .collect();
    Tensor::new(&[b, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = match input_shape {
        [b, c, h, w] => (*b, *c, *h, *w),
        _ => return Err(Error::dims("global_avg_pool backward", input_shape, &[0, 0, 0, 0])),
    };
    grad_out.ensure_shape("global_avg_pool backward", &[b, c])?;
    let hw = h * w;
    let n = T::c(hw as f64);
    let mut data = Vec::with_capacity(b * c * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / n, hw));
    }
    Tensor::new(input_shape, data)
}
