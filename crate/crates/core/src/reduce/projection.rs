use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::bank::FeatureBank;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Data-independent Gaussian projection `x ↦ scale · Uᵀx`.
///
/// `U` is `D x d` with i.i.d. standard normal entries, fully determined by
/// `(D, d, seed)`. The `1/√d` scale keeps expected squared distances
/// unchanged; rankings do not depend on it.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjector {
    input_dim: usize,
    output_dim: usize,
    seed: u64,
    matrix: Vec<f32>,
    scale: f32,
}

pub fn fit_random_projector(input_dim: usize, output_dim: usize, seed: u64) -> Result<RandomProjector> {
    if output_dim == 0 || output_dim > input_dim {
        return Err(Error::Argument(format!(
            "projection target {output_dim} must lie in 1..={input_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = (0..input_dim * output_dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    Ok(RandomProjector {
        input_dim,
        output_dim,
        seed,
        matrix,
        scale: 1.0 / (output_dim as f32).sqrt(),
    })
}

impl RandomProjector {
    /// Rebuilds a projector from stored parts, checking the matrix extent.
    pub fn from_parts(input_dim: usize, output_dim: usize, seed: u64, matrix: Vec<f32>, scale: f32) -> Result<Self> {
        if matrix.len() != input_dim * output_dim {
            return Err(Error::dims("random projector", &[input_dim, output_dim], &[matrix.len()]));
        }
        Ok(Self {
            input_dim,
            output_dim,
            seed,
            matrix,
            scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    /// Row-major `D x d` matrix `U`.
    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// Projects row-major `n x D` data to `n x d`.
    pub fn project_rows(&self, rows: &[f32]) -> Result<Vec<f32>> {
        if !rows.len().is_multiple_of(self.input_dim) {
            return Err(Error::dims("project", &[rows.len()], &[self.input_dim]));
        }
        let n = rows.len() / self.input_dim;
        let mut out = vec![0.0f32; n * self.output_dim];
        f32::gemm(
            false,
            false,
            n,
            self.output_dim,
            self.input_dim,
            self.scale,
            rows,
            &self.matrix,
            0.0,
            &mut out,
        );
        Ok(out)
    }

    pub fn project(&self, bank: &FeatureBank) -> Result<FeatureBank> {
        if bank.dim() != self.input_dim {
            return Err(Error::Argument(format!(
                "bank dimension {} does not match projector input {}",
                bank.dim(),
                self.input_dim
            )));
        }
        bank.with_features(self.output_dim, self.project_rows(bank.data())?)
    }
}
