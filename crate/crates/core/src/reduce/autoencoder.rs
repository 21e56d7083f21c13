use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::FeatureBank;
use crate::error::{Error, Result};
use crate::layers::{Linear, Mode, Module, Relu};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::tensor::{join_name, LayerParams, Tensor, TensorVisitor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionLoss {
    L1,
    L2,
}

impl std::str::FromStr for ReconstructionLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            _ => Err(Error::Argument(format!("unknown reconstruction loss `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoEncoderConfig {
    pub loss: ReconstructionLoss,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// With `false` both halves are a single linear map.
    pub hidden: bool,
    /// Z-score every input coordinate with train-bank statistics before
    /// encoding. With `false` the raw features go in.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for AutoEncoderConfig {
    fn default() -> Self {
        Self {
            loss: ReconstructionLoss::L2,
            epochs: 60,
            lr: 1e-3,
            batch_size: 64,
            hidden: true,
            standardize: true,
            seed: 0,
        }
    }
}

/// Linear layers with a ReLU after every layer but the last.
#[derive(Clone, Debug)]
struct Stack {
    linears: Vec<Linear<f32>>,
    relus: Vec<Relu<f32>>,
}

impl Stack {
    fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let linears: Vec<_> = dims.windows(2).map(|w| Linear::new(w[0], w[1], true, rng)).collect();
        let relus = (1..linears.len()).map(|_| Relu::new()).collect();
        Self { linears, relus }
    }

    fn forward(&mut self, x: &Tensor<f32>, mode: Mode) -> Result<Tensor<f32>> {
        let mut h = x.detach();
        let n = self.linears.len();
        for i in 0..n {
            h = self.linears[i].forward(&h, mode)?;
            if i + 1 < n {
                h = self.relus[i].forward(&h, mode)?;
            }
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = grad.clone();
        for i in (0..self.linears.len()).rev() {
            if i + 1 < self.linears.len() {
                g = self.relus[i].backward(&g)?;
            }
            g = self.linears[i].backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, f32>) {
        for (i, l) in self.linears.iter_mut().enumerate() {
            l.visit(&join_name(prefix, &i.to_string()), f);
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.linears[0].params.get("weight").map(|w| w.shape()[1]).unwrap_or(0)];
        dims.extend(self.linears.iter().map(|l| l.out_features()));
        dims
    }
}

/// Symmetric fully connected autoencoder. Inputs pass through a stored
/// per-coordinate shift and scale (identity when standardization is off).
#[derive(Clone, Debug)]
pub struct AutoEncoder {
    mean: Vec<f32>,
    std: Vec<f32>,
    encoder: Stack,
    decoder: Stack,
    loss: ReconstructionLoss,
    loss_history: Vec<f64>,
}

/// Hidden width between `a` and `b`.
pub fn geometric_width(a: usize, b: usize) -> usize {
    ((a as f64 * b as f64).sqrt().round() as usize).max(1)
}

fn loss_and_grad(kind: ReconstructionLoss, out: &Tensor<f32>, target: &Tensor<f32>) -> (f64, Tensor<f32>) {
    let n = out.numel() as f64;
    let mut total = 0.0;
    let grad = Tensor::from_fn(out.shape(), |i| {
        let r = (out.data()[i] - target.data()[i]) as f64;
        match kind {
            ReconstructionLoss::L1 => {
                total += r.abs();
                (r.signum() / n) as f32
            }
            ReconstructionLoss::L2 => {
                total += r * r;
                (2.0 * r / n) as f32
            }
        }
    });
    (total / n, grad)
}

pub fn fit_autoencoder(bank: &FeatureBank, d: usize, cfg: &AutoEncoderConfig) -> Result<AutoEncoder> {
    let n = bank.len();
    let dim = bank.dim();
    if n == 0 {
        return Err(Error::Argument("autoencoder needs at least one row".into()));
    }
    if d == 0 || d > dim {
        return Err(Error::Argument(format!("code size {d} must lie in 1..={dim}")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut mean = vec![0.0f64; dim];
    for row in bank.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; dim];
    for row in bank.rows() {
        for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let mut std: Vec<f32> = var.iter().map(|v| ((v / n as f64).sqrt() as f32).max(1e-6)).collect();
    let mut mean: Vec<f32> = mean.into_iter().map(|m| m as f32).collect();
    if !cfg.standardize {
        mean.fill(0.0);
        std.fill(1.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (enc_dims, dec_dims) = if cfg.hidden {
        let h = geometric_width(dim, d);
        (vec![dim, h, d], vec![d, h, dim])
    } else {
        (vec![dim, d], vec![d, dim])
    };
    let mut model = AutoEncoder {
        encoder: Stack::new(&enc_dims, &mut rng),
        decoder: Stack::new(&dec_dims, &mut rng),
        mean,
        std,
        loss: cfg.loss,
        loss_history: Vec::with_capacity(cfg.epochs),
    };
    let inputs = model.standardize(bank.data());
    let mut opt = Optimizer::new(OptimizerConfig {
        kind: OptimizerKind::Adam,
        weight_decay: 0.0,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.gather_rows(chunk)?;
            let code = model.encoder.forward(&x, Mode::Train)?;
            let out = model.decoder.forward(&code, Mode::Train)?;
            let (loss, grad) = loss_and_grad(cfg.loss, &out, &x);
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    head: 0,
                    term: "reconstruction",
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            model.zero_grad();
            let g = model.decoder.backward(&grad)?;
            model.encoder.backward(&g)?;
            opt.step(cfg.lr, |f| model.visit(f));
        }
        model.loss_history.push(epoch_loss / n as f64);
    }
    Ok(model)
}

impl AutoEncoder {
    fn standardize(&self, data: &[f32]) -> Tensor<f32> {
        let dim = self.mean.len();
        let rows = data.len() / dim;
        Tensor::from_fn(&[rows, dim], |i| (data[i] - self.mean[i % dim]) / self.std[i % dim])
    }

    fn zero_grad(&mut self) {
        self.visit(&mut |_, t| t.zero_grad());
    }

    /// Visits parameters as `encoder.{i}.weight`, `decoder.{i}.bias`, ...
    pub fn visit(&mut self, f: &mut TensorVisitor<'_, f32>) {
        self.encoder.visit("encoder", f);
        self.decoder.visit("decoder", f);
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.linears.last().map(|l| l.out_features()).unwrap_or(0)
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        self.encoder.dims()
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        self.decoder.dims()
    }

    pub fn loss_kind(&self) -> ReconstructionLoss {
        self.loss
    }

    /// Mean training loss per epoch.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }

    pub fn encode_rows(&self, data: &[f32]) -> Result<Vec<f32>> {
        if !data.len().is_multiple_of(self.input_dim()) {
            return Err(Error::dims("autoencoder encode", &[data.len()], &[self.input_dim()]));
        }
        let mut enc = self.encoder.clone();
        Ok(enc.forward(&self.standardize(data), Mode::Eval)?.into_data())
    }

    /// Reconstruction in the original (unstandardized) feature space.
    pub fn reconstruct_rows(&self, data: &[f32]) -> Result<Vec<f32>> {
        let dim = self.input_dim();
        let code = self.encode_rows(data)?;
        let rows = code.len() / self.code_dim();
        let mut dec = self.decoder.clone();
        let out = dec.forward(&Tensor::new(&[rows, self.code_dim()], code)?, Mode::Eval)?;
        Ok(out
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % dim] + self.mean[i % dim])
            .collect())
    }

    pub fn transform(&self, bank: &FeatureBank) -> Result<FeatureBank> {
        if bank.dim() != self.input_dim() {
            return Err(Error::Argument(format!(
                "bank dimension {} does not match autoencoder input {}",
                bank.dim(),
                self.input_dim()
            )));
        }
        bank.with_features(self.code_dim(), self.encode_rows(bank.data())?)
    }

    /// Named weight tensors for serialization.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        let mut me = self.clone();
        me.visit(&mut |name, t| out.push((name.to_string(), t.detach())));
        out
    }

    /// Rebuilds a model from `named_tensors` output and the normalization.
    pub fn from_parts(
        mean: Vec<f32>,
        std: Vec<f32>,
        loss: ReconstructionLoss,
        tensors: &[(String, Tensor<f32>)],
        loss_history: Vec<f64>,
    ) -> Result<Self> {
        let stack = |prefix: &str| -> Result<Stack> {
            let mut linears = Vec::new();
            for i in 0.. {
                let key = |p: &str| format!("{prefix}.{i}.{p}");
                let find = |k: String| tensors.iter().find(|(n, _)| *n == k).map(|(_, t)| t.clone().with_grad());
                let Some(w) = find(key("weight")) else { break };
                let mut params = LayerParams::new().with("weight", w);
                if let Some(b) = find(key("bias")) {
                    params.insert("bias", b)?;
                }
                linears.push(Linear::from_params(params));
            }
            if linears.is_empty() {
                return Err(Error::Validation(format!("autoencoder checkpoint lacks {prefix} layers")));
            }
            let relus = (1..linears.len()).map(|_| Relu::new()).collect();
            Ok(Stack { linears, relus })
        };
        let model = Self {
            encoder: stack("encoder")?,
            decoder: stack("decoder")?,
            mean,
            std,
            loss,
            loss_history,
        };
        let (enc, dec) = (model.encoder_dims(), model.decoder_dims());
        if enc[0] != model.input_dim()
            || *dec.last().unwrap_or(&0) != model.input_dim()
            || enc.last() != dec.first()
            || enc.windows(2).chain(dec.windows(2)).any(|w| w[0] == 0 || w[1] == 0)
        {
            return Err(Error::Validation(format!(
                "autoencoder layers {enc:?} / {dec:?} do not fit input {}",
                model.input_dim()
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduce::bank::{RowLabel, Split};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn bank(n: usize, dim: usize, seed: u64) -> FeatureBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let labels = (0..n)
            .map(|i| RowLabel { identity: i as u32, camera: 0, domain: 0, split: Split::Train })
            .collect();
        FeatureBank::new(dim, data, labels, vec![]).unwrap()
    }

    #[test]
    fn shapes_follow_geometric_width() {
        let ae = fit_autoencoder(&bank(20, 64, 1), 4, &AutoEncoderConfig { epochs: 1, ..Default::default() }).unwrap();
        assert_eq!(ae.encoder_dims(), vec![64, 16, 4]);
        assert_eq!(ae.decoder_dims(), vec![4, 16, 64]);
        let out = ae.transform(&bank(3, 64, 2)).unwrap();
        assert_eq!(out.dim(), 4);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn linear_identity_width_reaches_zero_loss() {
        for loss in [ReconstructionLoss::L2, ReconstructionLoss::L1] {
            let cfg = AutoEncoderConfig {
                loss,
                epochs: 300,
                lr: 1e-2,
                batch_size: 32,
                hidden: false,
                standardize: true,
                seed: 3,
            };
            let ae = fit_autoencoder(&bank(64, 6, 4), 6, &cfg).unwrap();
            let h = ae.loss_history();
            assert!(h[h.len() - 1] < 0.02 * h[0], "{loss:?}: {} -> {}", h[0], h[h.len() - 1]);
        }
    }

    #[test]
    fn raw_inputs_when_not_standardized() {
        let cfg = AutoEncoderConfig {
            epochs: 1,
            standardize: false,
            ..Default::default()
        };
        let ae = fit_autoencoder(&bank(20, 8, 2), 4, &cfg).unwrap();
        assert!(ae.mean().iter().all(|&m| m == 0.0));
        assert!(ae.std().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn round_trip_through_parts() {
        let b = bank(16, 12, 5);
        let ae = fit_autoencoder(&b, 3, &AutoEncoderConfig { epochs: 2, ..Default::default() }).unwrap();
        let back = AutoEncoder::from_parts(
            ae.mean().to_vec(),
            ae.std().to_vec(),
            ae.loss_kind(),
            &ae.named_tensors(),
            ae.loss_history().to_vec(),
        )
        .unwrap();
        assert_eq!(ae.encode_rows(b.data()).unwrap(), back.encode_rows(b.data()).unwrap());
        assert_eq!(ae.reconstruct_rows(b.data()).unwrap().len(), b.data().len());
    }

    #[test]
    fn rejects_bad_code_size() {
        let b = bank(4, 5, 6);
        assert!(fit_autoencoder(&b, 0, &AutoEncoderConfig::default()).is_err());
        assert!(fit_autoencoder(&b, 6, &AutoEncoderConfig::default()).is_err());
    }
}
