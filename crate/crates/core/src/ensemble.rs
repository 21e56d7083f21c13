//! Self-ensemble model: a shared trunk plus `m` heads cloned from the
//! trunk's final bottlenecks, each head carrying its own IN pattern.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bottleneck::{BottleneckBlock, InSite};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, GlobalAvgPool, Mode, Module, Relu};
use crate::losses::HeadLoss;
use crate::ops::DEFAULT_EPS;
use crate::pattern::{InPattern, PatternSet};
use crate::tensor::{join_name, Scalar, Tensor, TensorVisitor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrunkConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stage_widths: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub stage_strides: Vec<usize>,
    /// Bottleneck inner width is `stage width / bottleneck_ratio`.
    pub bottleneck_ratio: usize,
    pub in_epsilon: f64,
    pub in_site: InSite,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            height: 64,
            width: 32,
            stem_channels: 16,
            stem_stride: 2,
            stage_widths: vec![16, 32, 64, 64],
            stage_blocks: vec![1, 1, 2, 2],
            stage_strides: vec![1, 2, 2, 2],
            bottleneck_ratio: 4,
            in_epsilon: DEFAULT_EPS,
            in_site: InSite::Join,
        }
    }
}

impl TrunkConfig {
    /// Per-head feature dimension (width of the last stage).
    pub fn feature_dim(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(self.stem_channels)
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_blocks.iter().sum()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_widths.len();
        if n == 0 || self.stage_blocks.len() != n || self.stage_strides.len() != n {
            return Err(Error::Config(
                "stage_widths, stage_blocks and stage_strides must be non-empty and equally long"
                    .into(),
            ));
        }
        if self.stage_blocks.contains(&0)
            || self.stage_widths.contains(&0)
            || self.stage_strides.contains(&0)
            || self.stem_stride == 0
            || self.bottleneck_ratio == 0
        {
            return Err(Error::Config("trunk extents and strides must be positive".into()));
        }
        if self.in_epsilon <= 0.0 {
            return Err(Error::Config("in_epsilon must be positive".into()));
        }
        let mut h = self.height;
        let mut w = self.width;
        for s in std::iter::once(self.stem_stride).chain(self.stage_strides.iter().copied()) {
            h = (h - 1) / s + 1;
            w = (w - 1) / s + 1;
        }
        if h == 0 || w == 0 {
            return Err(Error::Config("input too small for the configured strides".into()));
        }
        Ok(())
    }

    /// `(in, mid, out, stride)` for every bottleneck in forward order.
    fn block_plan(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut plan = Vec::new();
        let mut cin = self.stem_channels;
        for ((&w, &n), &s) in self
            .stage_widths
            .iter()
            .zip(&self.stage_blocks)
            .zip(&self.stage_strides)
        {
            for i in 0..n {
                let stride = if i == 0 { s } else { 1 };
                plan.push((cin, (w / self.bottleneck_ratio).max(1), w, stride));
                cin = w;
            }
        }
        plan
    }
}

/// Where a head branches off and which IN pattern its blocks carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubheadSpec {
    pub clone_depth: usize,
    pub pattern: InPattern,
}

impl SubheadSpec {
    pub fn new(pattern: InPattern) -> Self {
        Self {
            clone_depth: pattern.depth(),
            pattern,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Head<T: Scalar = f32> {
    pub spec: SubheadSpec,
    pub blocks: Vec<BottleneckBlock<T>>,
    pool: GlobalAvgPool,
    /// Identity classifier `[C, F]`; discarded at inference.
    pub classifier: Tensor<T>,
    /// Learnable class centroids `[C, F]` for the center loss.
    pub centroids: Tensor<T>,
    /// Position in the first head's activation chain this head starts from.
    branch_offset: usize,
}

#[derive(Clone, Debug)]
pub struct EnsembleModel<T: Scalar = f32> {
    config: TrunkConfig,
    patterns: PatternSet,
    num_classes: usize,
    stem_conv: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_relu: Relu<T>,
    trunk: Vec<BottleneckBlock<T>>,
    heads: Vec<Head<T>>,
}

impl<T: Scalar> EnsembleModel<T> {
    /// Builds the backbone, then clones its last `δ` bottlenecks once per
    /// extra head. Head 0 keeps the original tail; clones start with
    /// identical weights and their own classifier and centroids.
    pub fn build(
        config: &TrunkConfig,
        patterns: &PatternSet,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if patterns.is_empty() {
            return Err(Error::Config("pattern set is empty".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("at least one identity class is required".into()));
        }
        let depth = patterns.depth();
        let total = config.total_blocks();
        if depth > total {
            return Err(Error::Config(format!(
                "pattern depth {depth} exceeds the {total} bottlenecks of the trunk"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_conv = Conv2d::new(config.in_channels, config.stem_channels, 3, config.stem_stride, 1, &mut rng);
        let mut blocks: Vec<BottleneckBlock<T>> = config
            .block_plan()
            .into_iter()
            .map(|(cin, mid, cout, stride)| {
                let mut b = BottleneckBlock::new(cin, mid, cout, stride, &mut rng);
                b.set_in_epsilon(config.in_epsilon);
                b.in_site = config.in_site;
                b
            })
            .collect();
        let tail = blocks.split_off(total - depth);
        let feature_dim = config.feature_dim();
        let mut heads = Vec::with_capacity(patterns.len());
        for pattern in patterns.iter() {
            let spec = SubheadSpec::new(*pattern);
            let offset = depth - spec.clone_depth;
            let mut head_blocks: Vec<BottleneckBlock<T>> = tail[offset..].to_vec();
            for (b, flag) in head_blocks.iter_mut().zip(pattern.forward_flags()) {
                b.apply_in = flag;
            }
            heads.push(Head {
                spec,
                blocks: head_blocks,
                pool: GlobalAvgPool::new(),
                classifier: Tensor::randn(&[num_classes, feature_dim], 0.01, &mut rng).with_grad(),
                centroids: Tensor::zeros(&[num_classes, feature_dim]).with_grad(),
                branch_offset: offset,
            });
        }
        Ok(Self {
            config: config.clone(),
            patterns: patterns.clone(),
            num_classes,
            stem_conv,
            stem_bn: BatchNorm2d::new(config.stem_channels),
            stem_relu: Relu::new(),
            trunk: blocks,
            heads,
        })
    }

    pub fn config(&self) -> &TrunkConfig {
        &self.config
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn heads(&self) -> &[Head<T>] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Head<T>] {
        &mut self.heads
    }

    /// Last bottleneck of a head, if the head has any blocks.
    pub fn final_block_mut(&mut self, head: usize) -> Option<&mut BottleneckBlock<T>> {
        self.heads.get_mut(head)?.blocks.last_mut()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let [ec, eh, ew] = self.config.input_shape();
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::dims("ensemble input", x.shape(), &[0, ec, eh, ew]));
        }
        Ok(())
    }

    fn shared_forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut a = self.stem_conv.forward(x, mode)?;
        a = self.stem_bn.forward(&a, mode)?;
        a = self.stem_relu.forward(&a, mode)?;
        for b in self.trunk.iter_mut() {
            a = b.forward(&a, mode)?;
        }
        Ok(a)
    }

    /// Per-head features `[B, F]` in canonical head order.
    pub fn forward_all(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let shared = self.shared_forward(x, mode)?;
        let (first, rest) = self.heads.split_first_mut().expect("at least one head");
        let mut chain = Vec::with_capacity(first.blocks.len() + 1);
        chain.push(shared);
        for b in first.blocks.iter_mut() {
            let next = b.forward(chain.last().expect("non-empty"), mode)?;
            chain.push(next);
        }
        let mut features = Vec::with_capacity(rest.len() + 1);
        features.push(first.pool.forward(chain.last().expect("non-empty"), mode)?);
        for head in rest.iter_mut() {
            let mut a = chain[head.branch_offset].clone();
            for b in head.blocks.iter_mut() {
                a = b.forward(&a, mode)?;
            }
            features.push(head.pool.forward(&a, mode)?);
        }
        for f in &features {
            f.ensure_finite("ensemble forward")?;
        }
        Ok(features)
    }

    /// Features of one head only.
    pub fn forward_head(&mut self, head: usize, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if head >= self.heads.len() {
            return Err(Error::Argument(format!("head {head} out of range")));
        }
        let mut a = self.shared_forward(x, mode)?;
        let offset = self.heads[head].branch_offset;
        for b in self.heads[0].blocks[..offset].iter_mut() {
            a = b.forward(&a, mode)?;
        }
        let h = &mut self.heads[head];
        for b in h.blocks.iter_mut() {
            a = b.forward(&a, mode)?;
        }
        h.pool.forward(&a, mode)
    }

    /// Backpropagates per-head feature gradients through heads and trunk,
    /// accumulating into every parameter gradient buffer.
    pub fn backward(&mut self, feature_grads: &[Tensor<T>]) -> Result<()> {
        if feature_grads.len() != self.heads.len() {
            return Err(Error::Argument(format!(
                "expected {} head gradients, got {}",
                self.heads.len(),
                feature_grads.len()
            )));
        }
        let depth = self.heads[0].blocks.len();
        let mut branch: Vec<Option<Tensor<T>>> = vec![None; depth + 1];
        for (head, g) in self.heads.iter_mut().zip(feature_grads).skip(1) {
            let mut g = head.pool.backward(g)?;
            for b in head.blocks.iter_mut().rev() {
                g = b.backward(&g)?;
            }
            let slot = &mut branch[head.branch_offset];
            *slot = Some(match slot.take() {
                Some(acc) => acc.add(&g)?,
                None => g,
            });
        }
        let first = &mut self.heads[0];
        let mut g = first.pool.backward(&feature_grads[0])?;
        if let Some(extra) = branch[depth].take() {
            g = g.add(&extra)?;
        }
        for j in (0..depth).rev() {
            g = first.blocks[j].backward(&g)?;
            if let Some(extra) = branch[j].take() {
                g = g.add(&extra)?;
            }
        }
        for b in self.trunk.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        g = self.stem_relu.backward(&g)?;
        g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g)?;
        Ok(())
    }

    /// Adds classifier/centroid gradients and backpropagates feature gradients.
    pub fn apply_loss(&mut self, losses: &[HeadLoss<T>]) -> Result<()> {
        for (head, loss) in self.heads.iter_mut().zip(losses) {
            head.classifier.accumulate_grad(&loss.grad_classifier);
            head.centroids.accumulate_grad(&loss.grad_centroids);
        }
        let grads: Vec<Tensor<T>> = losses.iter().map(|l| l.grad_features.clone()).collect();
        self.backward(&grads)
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, t| t.zero_grad());
    }

    /// Visits every named tensor (parameters and buffers).
    pub fn visit(&mut self, f: &mut TensorVisitor<'_, T>) {
        self.stem_conv.visit("stem.conv", f);
        self.stem_bn.visit("stem.bn", f);
        for (i, b) in self.trunk.iter_mut().enumerate() {
            b.visit(&format!("trunk.{i}"), f);
        }
        for (k, h) in self.heads.iter_mut().enumerate() {
            let p = format!("heads.{k}");
            for (j, b) in h.blocks.iter_mut().enumerate() {
                b.visit(&join_name(&p, &format!("blocks.{j}")), f);
            }
            f(&join_name(&p, "classifier"), &mut h.classifier);
            f(&join_name(&p, "centroids"), &mut h.centroids);
        }
    }

    pub fn named_tensors(&mut self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }
}

/// Order-preserving concatenation of per-head features.
pub fn concat_features<T: Scalar>(per_head: &[Vec<T>]) -> Result<Vec<T>> {
    if per_head.is_empty() {
        return Err(Error::Argument("no head features to concatenate".into()));
    }
    Ok(per_head.concat())
}

/// Coordinatewise mean of equally long head features.
pub fn average_features<T: Scalar>(per_head: &[Vec<T>]) -> Result<Vec<T>> {
    let first = per_head
        .first()
        .ok_or_else(|| Error::Argument("no head features to average".into()))?;
    if per_head.iter().any(|v| v.len() != first.len()) {
        return Err(Error::Argument("head features have different lengths".into()));
    }
    let n = T::c(per_head.len() as f64);
    Ok((0..first.len())
        .map(|i| per_head.iter().map(|v| v[i]).sum::<T>() / n)
        .collect())
}

/// Concatenates batched head outputs `[B, F_k]` row by row into `[B, ΣF_k]`.
pub fn concat_batch<T: Scalar>(per_head: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = per_head
        .first()
        .ok_or_else(|| Error::Argument("no head features to concatenate".into()))?;
    let (b, _) = first.dims2()?;
    let mut dims = Vec::with_capacity(per_head.len());
    for t in per_head {
        let (rows, f) = t.dims2()?;
        if rows != b {
            return Err(Error::dims("concat_batch", first.shape(), t.shape()));
        }
        dims.push(f);
    }
    let total: usize = dims.iter().sum();
    let mut data = Vec::with_capacity(b * total);
    for r in 0..b {
        for (t, &f) in per_head.iter().zip(&dims) {
            data.extend_from_slice(&t.data()[r * f..(r + 1) * f]);
        }
    }
    Tensor::new(&[b, total], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> TrunkConfig {
        TrunkConfig {
            in_channels: 3,
            height: 8,
            width: 4,
            stem_channels: 4,
            stem_stride: 1,
            stage_widths: vec![4, 8],
            stage_blocks: vec![1, 3],
            stage_strides: vec![1, 2],
            bottleneck_ratio: 2,
            in_epsilon: DEFAULT_EPS,
            in_site: InSite::Join,
        }
    }

    fn input(seed: u64, b: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[b, 3, 8, 4], 1.0, &mut rng)
    }

    #[test]
    fn default_trunk_is_valid() {
        let cfg = TrunkConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.feature_dim(), 64);
        assert_eq!(cfg.total_blocks(), 6);
    }

    #[test]
    fn depth_three_gives_eight_heads() {
        let m = EnsembleModel::<f32>::build(&tiny_config(), &PatternSet::full(3).unwrap(), 5, 1).unwrap();
        assert_eq!(m.num_heads(), 8);
        let mut m = m;
        let f = m.forward_all(&input(1, 2), Mode::Train).unwrap();
        assert_eq!(f.len(), 8);
        assert!(f.iter().all(|t| t.shape() == [2, 8]));
    }

    #[test]
    fn too_deep_pattern_is_config_error() {
        let r = EnsembleModel::<f32>::build(&tiny_config(), &PatternSet::full(5).unwrap(), 5, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn depth_zero_single_head() {
        let mut m = EnsembleModel::<f32>::build(&tiny_config(), &PatternSet::full(0).unwrap(), 3, 1).unwrap();
        assert_eq!(m.num_heads(), 1);
        let f = m.forward_all(&input(2, 3), Mode::Train).unwrap();
        assert_eq!(f[0].shape(), &[3, 8]);
    }

    #[test]
    fn cloned_heads_match_and_in_heads_differ() {
        let patterns = PatternSet::parse_list(&["00", "00", "01"]).unwrap();
        let mut m = EnsembleModel::<f32>::build(&tiny_config(), &patterns, 4, 7).unwrap();
        let f = m.forward_all(&input(3, 4), Mode::Train).unwrap();
        assert_eq!(f[0], f[1]);
        assert_ne!(f[0], f[2]);
    }

    #[test]
    fn forward_head_matches_forward_all() {
        let patterns = PatternSet::parse_list(&["011", "10", "1"]).unwrap();
        let mut m = EnsembleModel::<f32>::build(&tiny_config(), &patterns, 4, 9).unwrap();
        let x = input(4, 2);
        let all = m.forward_all(&x, Mode::Train).unwrap();
        for (k, expected) in all.iter().enumerate() {
            assert_eq!(&m.forward_head(k, &x, Mode::Train).unwrap(), expected);
        }
    }

    #[test]
    fn head_gradient_isolated_from_other_heads() {
        let mut m = EnsembleModel::<f32>::build(&tiny_config(), &PatternSet::full(2).unwrap(), 4, 3).unwrap();
        let feats = m.forward_all(&input(5, 2), Mode::Train).unwrap();
        m.zero_grad();
        let grads: Vec<Tensor<f32>> = feats
            .iter()
            .enumerate()
            .map(|(k, f)| if k == 2 { Tensor::full(f.shape(), 1.0) } else { Tensor::zeros(f.shape()) })
            .collect();
        m.backward(&grads).unwrap();
        let mut trunk_norm = 0.0f32;
        let mut other_head = 0.0f32;
        let mut own_head = 0.0f32;
        m.visit(&mut |name, t| {
            let Some(g) = t.grad() else { return };
            let s: f32 = g.iter().map(|v| v.abs()).sum();
            if name.starts_with("trunk.") || name.starts_with("stem.") {
                trunk_norm += s;
            } else if name.starts_with("heads.2.blocks") {
                own_head += s;
            } else if name.starts_with("heads.") {
                other_head += s;
            }
        });
        assert!(trunk_norm > 0.0);
        assert!(own_head > 0.0);
        assert_eq!(other_head, 0.0);
    }

    #[test]
    fn feature_list_helpers() {
        assert_eq!(
            concat_features(&[vec![1.0f32, 2.0, 3.0], vec![4.0, 5.0, 6.0, 7.0]]).unwrap(),
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        );
        assert_eq!(concat_features(&[vec![1.5f32, 2.5]]).unwrap(), [1.5, 2.5]);
        assert!(concat_features::<f32>(&[]).is_err());
        assert_eq!(
            average_features(&[vec![0.0f32, 2.0], vec![2.0, 0.0]]).unwrap(),
            [1.0, 1.0]
        );
        let v = vec![0.25f32, -3.0, 8.0];
        assert_eq!(average_features(&[v.clone(), v.clone(), v.clone()]).unwrap(), v);
        assert!(average_features(&[vec![1.0f32], vec![1.0, 2.0]]).is_err());
        let widths = vec![vec![0.0f32; 2048]; 8];
        assert_eq!(concat_features(&widths).unwrap().len(), 16384);
    }
}
