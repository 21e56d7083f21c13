use nalgebra::{DMatrix, SymmetricEigen};

use super::bank::FeatureBank;
use crate::error::{Error, Result};

/// Top-`d` principal subspace of a training bank.
///
/// Components are orthonormal rows of length `D`; eigenvalues are the
/// sample-covariance variances along them (divisor `N − 1`), non-increasing.
/// Each component's first non-negligible coordinate is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Vec<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Fits PCA on every row of `bank`. Uses a thin SVD of the centered data
/// when there are fewer rows than dimensions, otherwise the covariance
/// eigendecomposition.
pub fn fit_pca(bank: &FeatureBank, d: usize) -> Result<PcaModel> {
    let n = bank.len();
    let dim = bank.dim();
    if d == 0 || d > n.min(dim) {
        return Err(Error::Argument(format!(
            "PCA target {d} must lie in 1..={} for {n} rows of dimension {dim}",
            n.min(dim)
        )));
    }
    if n < 2 {
        return Err(Error::Argument("PCA needs at least two rows".into()));
    }
    let mut mean = vec![0.0f64; dim];
    for row in bank.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| bank.row(i)[j] as f64 - mean[j]);
    let denom = (n - 1) as f64;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / denom;

    let mut pairs: Vec<(f64, Vec<f64>)> = if n < dim {
        let svd = centered.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::State("SVD did not return V^T".into()))?;
        svd.singular_values
            .iter()
            .enumerate()
            .map(|(k, s)| (s * s / denom, vt.row(k).iter().copied().collect()))
            .collect()
    } else {
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        eig.eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &l)| (l, eig.eigenvectors.column(k).iter().copied().collect()))
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs.truncate(d);
    let mut components = Vec::with_capacity(d * dim);
    let mut eigenvalues = Vec::with_capacity(d);
    for (l, mut v) in pairs {
        fix_sign(&mut v);
        components.extend_from_slice(&v);
        eigenvalues.push(l.max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        total_variance,
    })
}

impl PcaModel {
    pub fn from_parts(mean: Vec<f64>, components: Vec<f64>, eigenvalues: Vec<f64>, total_variance: f64) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || components.len() != eigenvalues.len() * dim {
            return Err(Error::dims("pca model", &[eigenvalues.len(), dim], &[components.len()]));
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
            total_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d x D`.
    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let dim = self.input_dim();
        &self.components[k * dim..(k + 1) * dim]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Fraction of training variance kept by the first `k` components.
    pub fn captured_variance(&self, k: usize) -> f64 {
        let kept: f64 = self.eigenvalues[..k.min(self.eigenvalues.len())].iter().sum();
        if self.total_variance > 0.0 {
            kept / self.total_variance
        } else {
            1.0
        }
    }

    /// Keeps the leading `k` components.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.output_dim() {
            return Err(Error::Argument(format!("cannot keep {k} of {} components", self.output_dim())));
        }
        Ok(Self {
            mean: self.mean.clone(),
            components: self.components[..k * self.input_dim()].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            total_variance: self.total_variance,
        })
    }

    pub fn transform_row(&self, row: &[f32]) -> Vec<f32> {
        (0..self.output_dim())
            .map(|k| {
                self.component(k)
                    .iter()
                    .zip(row)
                    .zip(&self.mean)
                    .map(|((c, &x), m)| c * (x as f64 - m))
                    .sum::<f64>() as f32
            })
            .collect()
    }

    pub fn inverse_row(&self, code: &[f32]) -> Vec<f32> {
        let mut out = self.mean.clone();
        for (k, &z) in code.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(k)) {
                *o += z as f64 * c;
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    pub fn transform(&self, bank: &FeatureBank) -> Result<FeatureBank> {
        if bank.dim() != self.input_dim() {
            return Err(Error::Argument(format!(
                "bank dimension {} does not match PCA input {}",
                bank.dim(),
                self.input_dim()
            )));
        }
        let data = bank.rows().flat_map(|r| self.transform_row(r)).collect();
        bank.with_features(self.output_dim(), data)
    }
}

pub fn pca_transform(model: &PcaModel, bank: &FeatureBank) -> Result<FeatureBank> {
    model.transform(bank)
}
