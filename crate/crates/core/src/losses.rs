//! Identity cross-entropy, batch-hard triplet and center losses, and their
//! weighted sum over heads.
//!
//! Every loss is a batch mean and returns gradients for its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::Degeneracy;
use crate::layers::{Mode, Module};
use crate::tensor::{Scalar, Tensor, TensorVisitor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ce: f64,
    pub triplet: f64,
    pub center: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            triplet: 1.0,
            center: 0.0005,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ce, self.triplet, self.center].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub triplet_margin: f64,
    /// Use `½‖f − c‖²` instead of the plain norm for the center term.
    pub center_squared: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            triplet_margin: 0.0,
            center_squared: false,
        }
    }
}

/// `P` identities with `K` instances each per batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletBatchLayout {
    pub p: usize,
    pub k: usize,
}

impl TripletBatchLayout {
    pub fn new(p: usize, k: usize) -> Result<Self> {
        let layout = Self { p, k };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!(
                "batch layout needs P >= 2 and K >= 2, got P={} K={}",
                self.p, self.k
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad_features: Tensor<T>,
    /// Gradient for the classifier or centroid table, when the loss has one.
    pub grad_table: Vec<T>,
}

fn check_labels<T: Scalar>(features: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, f) = features.dims2()?;
    if labels.len() != b {
        return Err(Error::dims("labels", features.shape(), &[labels.len()]));
    }
    Ok((b, f))
}

/// Softmax cross-entropy over logits `W f` (classifier `[C, F]`, no bias).
pub fn cross_entropy<T: Scalar>(
    features: &Tensor<T>,
    labels: &[usize],
    classifier: &Tensor<T>,
) -> Result<LossGrad<T>> {
    let (b, f) = check_labels(features, labels)?;
    let (c, cf) = classifier.dims2()?;
    if cf != f {
        return Err(Error::dims("cross_entropy", features.shape(), classifier.shape()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Argument(format!("label {bad} outside {c} classes")));
    }
    let mut logits = vec![T::zero(); b * c];
    T::gemm(false, true, b, c, f, T::one(), features.data(), classifier.data(), T::zero(), &mut logits);
    let inv_b = T::one() / T::c(b as f64);
    let mut loss = T::zero();
    for (row, &y) in logits.chunks_mut(c).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        // Turn the row into d loss / d logits.
        for v in row.iter_mut() {
            *v = (*v - log_z).exp() * inv_b;
        }
        row[y] -= inv_b;
    }
    let mut grad_features = vec![T::zero(); b * f];
    T::gemm(false, false, b, f, c, T::one(), &logits, classifier.data(), T::zero(), &mut grad_features);
    let mut grad_table = vec![T::zero(); c * f];
    T::gemm(true, false, c, f, b, T::one(), &logits, features.data(), T::zero(), &mut grad_table);
    Ok(LossGrad {
        loss: loss * inv_b,
        grad_features: Tensor::new(&[b, f], grad_features)?,
        grad_table,
    })
}

fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Per-anchor hardest positive and negative.
#[derive(Clone, Copy, Debug)]
pub struct HardTriplet<T> {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub d_ap: T,
    pub d_an: T,
}

pub fn mine_batch_hard<T: Scalar>(features: &Tensor<T>, labels: &[usize]) -> Result<Vec<HardTriplet<T>>> {
    let (b, f) = check_labels(features, labels)?;
    let x = features.data();
    let row = |i: usize| &x[i * f..(i + 1) * f];
    let mut out = Vec::with_capacity(b);
    for a in 0..b {
        let mut pos: Option<(usize, T)> = None;
        let mut neg: Option<(usize, T)> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = euclidean(row(a), row(j));
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let (positive, d_ap) = pos.ok_or_else(|| {
            Error::Protocol(format!("identity {} has a single instance in the batch", labels[a]))
        })?;
        let (negative, d_an) =
            neg.ok_or_else(|| Error::Protocol("batch holds a single identity".into()))?;
        out.push(HardTriplet {
            anchor: a,
            positive,
            negative,
            d_ap,
            d_an,
        });
    }
    Ok(out)
}

/// Batch-hard triplet loss: mean over anchors of `[margin + d_ap − d_an]_+`
/// with Euclidean distances.
pub fn triplet_batch_hard<T: Scalar>(
    features: &Tensor<T>,
    labels: &[usize],
    layout: Option<&TripletBatchLayout>,
    margin: f64,
) -> Result<LossGrad<T>> {
    if margin < 0.0 {
        return Err(Error::Argument("triplet margin must be non-negative".into()));
    }
    let (b, f) = check_labels(features, labels)?;
    if let Some(layout) = layout {
        layout.validate()?;
        if layout.batch_size() != b {
            return Err(Error::Protocol(format!(
                "batch of {b} does not match layout {}x{}",
                layout.p, layout.k
            )));
        }
    }
    let triplets = mine_batch_hard(features, labels)?;
    let x = features.data();
    let m = T::c(margin);
    let inv_b = T::one() / T::c(b as f64);
    let tiny = T::c(1e-12);
    let mut grad = vec![T::zero(); b * f];
    let mut loss = T::zero();
    for t in &triplets {
        let term = m + t.d_ap - t.d_an;
        if term <= T::zero() {
            continue;
        }
        loss += term;
        for i in 0..f {
            let xa = x[t.anchor * f + i];
            let gp = if t.d_ap > tiny {
                (xa - x[t.positive * f + i]) / t.d_ap * inv_b
            } else {
                T::zero()
            };
            let gn = if t.d_an > tiny {
                (xa - x[t.negative * f + i]) / t.d_an * inv_b
            } else {
                T::zero()
            };
            grad[t.anchor * f + i] += gp - gn;
            grad[t.positive * f + i] -= gp;
            grad[t.negative * f + i] += gn;
        }
    }
    Ok(LossGrad {
        loss: loss * inv_b,
        grad_features: Tensor::new(&[b, f], grad)?,
        grad_table: Vec::new(),
    })
}

/// Distance from each feature to its class centroid, `‖f − c_y‖₂`
/// (or `½‖f − c_y‖²` when `squared`).
pub fn center_loss<T: Scalar>(
    features: &Tensor<T>,
    labels: &[usize],
    centroids: &Tensor<T>,
    squared: bool,
) -> Result<LossGrad<T>> {
    let (b, f) = check_labels(features, labels)?;
    let (c, cf) = centroids.dims2()?;
    if cf != f {
        return Err(Error::dims("center_loss", features.shape(), centroids.shape()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Argument(format!("no centroid for label {bad}")));
    }
    let inv_b = T::one() / T::c(b as f64);
    let x = features.data();
    let cen = centroids.data();
    let mut grad = vec![T::zero(); b * f];
    let mut grad_table = vec![T::zero(); c * f];
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let xi = &x[i * f..(i + 1) * f];
        let cy = &cen[y * f..(y + 1) * f];
        let dist = euclidean(xi, cy);
        let (value, scale) = if squared {
            (T::c(0.5) * dist * dist, inv_b)
        } else if dist > T::c(1e-12) {
            (dist, inv_b / dist)
        } else {
            (dist, T::zero())
        };
        loss += value;
        for j in 0..f {
            let g = (xi[j] - cy[j]) * scale;
            grad[i * f + j] += g;
            grad_table[y * f + j] -= g;
        }
    }
    Ok(LossGrad {
        loss: loss * inv_b,
        grad_features: Tensor::new(&[b, f], grad)?,
        grad_table,
    })
}

/// Weighted loss terms of one head and the gradients they induce.
#[derive(Clone, Debug)]
pub struct HeadLoss<T> {
    pub ce: T,
    pub triplet: T,
    pub center: T,
    pub total: T,
    pub grad_features: Tensor<T>,
    pub grad_classifier: Vec<T>,
    pub grad_centroids: Vec<T>,
}

impl<T: Scalar> HeadLoss<T> {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        if !self.ce.is_finite() {
            Some("cross_entropy")
        } else if !self.triplet.is_finite() {
            Some("triplet")
        } else if !self.center.is_finite() {
            Some("center")
        } else {
            None
        }
    }
}

pub fn head_loss<T: Scalar>(
    features: &Tensor<T>,
    labels: &[usize],
    classifier: &Tensor<T>,
    centroids: &Tensor<T>,
    cfg: &LossConfig,
    layout: Option<&TripletBatchLayout>,
) -> Result<HeadLoss<T>> {
    cfg.weights.validate()?;
    let (b, f) = check_labels(features, labels)?;
    let mut grad = vec![T::zero(); b * f];
    let mut out = HeadLoss {
        ce: T::zero(),
        triplet: T::zero(),
        center: T::zero(),
        total: T::zero(),
        grad_features: Tensor::zeros(&[b, f]),
        grad_classifier: vec![T::zero(); classifier.numel()],
        grad_centroids: vec![T::zero(); centroids.numel()],
    };
    let add = |dst: &mut [T], src: &[T], w: T| {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    };
    let w = &cfg.weights;
    if w.ce > 0.0 {
        let r = cross_entropy(features, labels, classifier)?;
        let a = T::c(w.ce);
        out.ce = r.loss;
        add(&mut grad, r.grad_features.data(), a);
        add(&mut out.grad_classifier, &r.grad_table, a);
    }
    if w.triplet > 0.0 {
        let r = triplet_batch_hard(features, labels, layout, cfg.triplet_margin)?;
        out.triplet = r.loss;
        add(&mut grad, r.grad_features.data(), T::c(w.triplet));
    }
    if w.center > 0.0 {
        let r = center_loss(features, labels, centroids, cfg.center_squared)?;
        let a = T::c(w.center);
        out.center = r.loss;
        add(&mut grad, r.grad_features.data(), a);
        add(&mut out.grad_centroids, &r.grad_table, a);
    }
    out.total = T::c(w.ce) * out.ce + T::c(w.triplet) * out.triplet + T::c(w.center) * out.center;
    out.grad_features = Tensor::new(&[b, f], grad)?;
    Ok(out)
}

/// Sum over heads of the weighted three-term loss, each head evaluated on
/// its own features with its own classifier and centroids.
pub fn total_loss<T: Scalar>(
    per_head: &[Tensor<T>],
    labels: &[usize],
    tables: &[(&Tensor<T>, &Tensor<T>)],
    cfg: &LossConfig,
    layout: Option<&TripletBatchLayout>,
) -> Result<(T, Vec<HeadLoss<T>>)> {
    if per_head.len() != tables.len() {
        return Err(Error::Argument(format!(
            "{} head outputs but {} classifier/centroid tables",
            per_head.len(),
            tables.len()
        )));
    }
    let heads = per_head
        .iter()
        .zip(tables)
        .map(|(f, (cls, cen))| head_loss(f, labels, cls, cen, cfg, layout))
        .collect::<Result<Vec<_>>>()?;
    let total = heads.iter().map(|h| h.total).sum();
    Ok((total, heads))
}

fn scalar<T: Scalar>(v: T) -> Tensor<T> {
    Tensor::full(&[1], v)
}

fn scale_grad<T: Scalar>(g: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let s = upstream.data()[0];
    g.map(|v| v * s)
}

/// Cross-entropy as a module over features with a trainable classifier.
pub struct CrossEntropyLoss<T: Scalar> {
    pub labels: Vec<usize>,
    pub classifier: Tensor<T>,
    last: Option<LossGrad<T>>,
}

impl<T: Scalar> CrossEntropyLoss<T> {
    pub fn new(labels: Vec<usize>, classifier: Tensor<T>) -> Self {
        Self {
            labels,
            classifier: if classifier.requires_grad() { classifier } else { classifier.with_grad() },
            last: None,
        }
    }
}

impl<T: Scalar> Module<T> for CrossEntropyLoss<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let r = cross_entropy(input, &self.labels, &self.classifier)?;
        let out = scalar(r.loss);
        self.last = Some(r);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.last.as_ref().ok_or_else(|| Error::State("loss backward before forward".into()))?;
        let s = grad_out.data()[0];
        let table: Vec<T> = r.grad_table.iter().map(|&v| v * s).collect();
        self.classifier.accumulate_grad(&table);
        Ok(scale_grad(&r.grad_features, grad_out))
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        f(&crate::tensor::join_name(prefix, "classifier"), &mut self.classifier);
    }
}

impl Degeneracy for CrossEntropyLoss<f64> {}

pub struct TripletLoss<T: Scalar> {
    pub labels: Vec<usize>,
    pub margin: f64,
    last: Option<LossGrad<T>>,
}

impl<T: Scalar> TripletLoss<T> {
    pub fn new(labels: Vec<usize>, margin: f64) -> Self {
        Self {
            labels,
            margin,
            last: None,
        }
    }
}

impl<T: Scalar> Module<T> for TripletLoss<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let r = triplet_batch_hard(input, &self.labels, None, self.margin)?;
        let out = scalar(r.loss);
        self.last = Some(r);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.last.as_ref().ok_or_else(|| Error::State("loss backward before forward".into()))?;
        Ok(scale_grad(&r.grad_features, grad_out))
    }

    fn visit(&mut self, _prefix: &str, _f: &mut TensorVisitor<'_, T>) {}
}

impl Degeneracy for TripletLoss<f64> {
    /// The hinge and ties in hardest-sample selection are non-smooth.
    fn degenerate_input(&self, input: &Tensor<f64>) -> Option<String> {
        let triplets = mine_batch_hard(input, &self.labels).ok()?;
        for t in &triplets {
            if (self.margin + t.d_ap - t.d_an).abs() < 1e-3 {
                return Some(format!("anchor {} sits on the hinge", t.anchor));
            }
            if t.d_ap < 1e-6 {
                return Some(format!("anchor {} coincides with its positive", t.anchor));
            }
        }
        let (b, f) = input.dims2().ok()?;
        let x = input.data();
        for a in 0..b {
            let mut pos: Vec<f64> = Vec::new();
            let mut neg: Vec<f64> = Vec::new();
            for j in (0..b).filter(|&j| j != a) {
                let d = euclidean(&x[a * f..(a + 1) * f], &x[j * f..(j + 1) * f]);
                if self.labels[j] == self.labels[a] {
                    pos.push(d);
                } else {
                    neg.push(d);
                }
            }
            pos.sort_by(|a, b| b.total_cmp(a));
            neg.sort_by(|a, b| a.total_cmp(b));
            if pos.len() > 1 && pos[0] - pos[1] < 1e-3 || neg.len() > 1 && neg[1] - neg[0] < 1e-3 {
                return Some(format!("anchor {a} has tied hardest samples"));
            }
        }
        None
    }
}

pub struct CenterLoss<T: Scalar> {
    pub labels: Vec<usize>,
    pub centroids: Tensor<T>,
    pub squared: bool,
    last: Option<LossGrad<T>>,
}

impl<T: Scalar> CenterLoss<T> {
    pub fn new(labels: Vec<usize>, centroids: Tensor<T>, squared: bool) -> Self {
        Self {
            labels,
            centroids: if centroids.requires_grad() { centroids } else { centroids.with_grad() },
            squared,
            last: None,
        }
    }
}

impl<T: Scalar> Module<T> for CenterLoss<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let r = center_loss(input, &self.labels, &self.centroids, self.squared)?;
        let out = scalar(r.loss);
        self.last = Some(r);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let r = self.last.as_ref().ok_or_else(|| Error::State("loss backward before forward".into()))?;
        let s = grad_out.data()[0];
        let table: Vec<T> = r.grad_table.iter().map(|&v| v * s).collect();
        self.centroids.accumulate_grad(&table);
        Ok(scale_grad(&r.grad_features, grad_out))
    }

    fn visit(&mut self, prefix: &str, f: &mut TensorVisitor<'_, T>) {
        f(&crate::tensor::join_name(prefix, "centroids"), &mut self.centroids);
    }
}

impl Degeneracy for CenterLoss<f64> {
    fn degenerate_input(&self, input: &Tensor<f64>) -> Option<String> {
        if self.squared {
            return None;
        }
        let (_, f) = input.dims2().ok()?;
        let c = self.centroids.data();
        self.labels.iter().enumerate().find_map(|(i, &y)| {
            let d = euclidean(&input.data()[i * f..(i + 1) * f], &c[y * f..(y + 1) * f]);
            (d < 1e-3).then(|| format!("sample {i} sits on its centroid"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn ce_zero_logits_is_log_classes() {
        let f = t(&[1, 2], &[0.3, -0.2]);
        let w = Tensor::zeros(&[5, 2]);
        let r = cross_entropy(&f, &[3], &w).unwrap();
        assert_abs_diff_eq!(r.loss, 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn ce_two_classes() {
        // logits (1, 0) via identity classifier and feature (1, 0).
        let f = t(&[1, 2], &[1.0, 0.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let r = cross_entropy(&f, &[0], &w).unwrap();
        assert_abs_diff_eq!(r.loss, (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.loss, 0.3133, epsilon = 1e-4);
    }

    #[test]
    fn ce_confident_limit() {
        let f = t(&[1, 1], &[200.0]);
        let w = t(&[2, 1], &[1.0, -1.0]);
        let r = cross_entropy(&f, &[0], &w).unwrap();
        assert!(r.loss < 1e-100 && r.loss >= 0.0);
        assert!(cross_entropy(&f, &[2], &w).is_err());
    }

    #[test]
    fn triplet_clustered_batch_is_zero() {
        let f = t(&[4, 2], &[0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0]);
        let r = triplet_batch_hard(&f, &[0, 0, 1, 1], None, 0.3).unwrap();
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn triplet_single_term() {
        // Anchor 0: positive at distance 2, negative at distance 1.
        let f = t(&[4, 1], &[0.0, 2.0, 1.0, 10.0]);
        let triplets = mine_batch_hard(&f, &[0, 0, 1, 1]).unwrap();
        assert_eq!((triplets[0].d_ap, triplets[0].d_an), (2.0, 1.0));
        let r = triplet_batch_hard(&f, &[0, 0, 1, 1], None, 0.0).unwrap();
        // anchors: 0 -> [2-1]=1, 1 -> [2-1]=1, 2 -> [9-1]=8, 3 -> [9-8]=1
        assert_abs_diff_eq!(r.loss, (1.0 + 1.0 + 8.0 + 1.0) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn triplet_singleton_identity_is_protocol_error() {
        let f = t(&[3, 1], &[0.0, 1.0, 2.0]);
        assert!(matches!(
            triplet_batch_hard(&f, &[0, 0, 1], None, 0.0),
            Err(Error::Protocol(_))
        ));
        let layout = TripletBatchLayout::new(2, 2).unwrap();
        assert!(matches!(
            triplet_batch_hard(&f, &[0, 0, 1], Some(&layout), 0.0),
            Err(Error::Protocol(_))
        ));
        assert!(TripletBatchLayout::new(1, 4).is_err());
    }

    #[test]
    fn center_examples() {
        let c = Tensor::zeros(&[2, 2]);
        let r = center_loss(&t(&[1, 2], &[3.0, 4.0]), &[0], &c, false).unwrap();
        assert_abs_diff_eq!(r.loss, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad_features.data()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad_features.data()[1], 0.8, epsilon = 1e-12);
        let same = center_loss(&t(&[1, 2], &[0.0, 0.0]), &[1], &c, false).unwrap();
        assert_eq!(same.loss, 0.0);
        assert!(center_loss(&t(&[1, 2], &[0.0, 0.0]), &[2], &c, false).is_err());
    }

    #[test]
    fn center_gradient_by_finite_differences() {
        let mut op = CenterLoss::new(vec![0], Tensor::zeros(&[1, 2]), false);
        let report = grad_check(&mut op, &t(&[1, 2], &[3.0, 4.0]), 1e-4).unwrap();
        assert!(report.degenerate.is_none());
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn all_weights_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let cls = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let cen = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let cfg = LossConfig {
            weights: LossWeights {
                ce: 0.0,
                triplet: 0.0,
                center: 0.0,
            },
            ..Default::default()
        };
        let (total, heads) = total_loss(&[f], &[0, 0, 1, 1], &[(&cls, &cen)], &cfg, None).unwrap();
        assert_eq!(total, 0.0);
        assert!(heads[0].grad_features.data().iter().all(|&g| g == 0.0));
        assert!(heads[0].grad_classifier.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_heads_double_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let cls = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let cen = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let cfg = LossConfig::default();
        let labels = [0, 0, 1, 1];
        let (one, _) = total_loss(std::slice::from_ref(&f), &labels, &[(&cls, &cen)], &cfg, None).unwrap();
        let (two, _) =
            total_loss(&[f.clone(), f], &labels, &[(&cls, &cen), (&cls, &cen)], &cfg, None).unwrap();
        assert_abs_diff_eq!(two, 2.0 * one, epsilon = 1e-12);
    }

    #[test]
    fn paper_default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.ce, w.triplet, w.center), (1.0, 1.0, 0.0005));
    }
}
