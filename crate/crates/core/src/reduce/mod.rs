//! Feature banks and dimensionality reduction.

pub mod autoencoder;
pub mod bank;
pub mod jl;
pub mod pca;
pub mod projection;

pub use autoencoder::{fit_autoencoder, AutoEncoder, AutoEncoderConfig, ReconstructionLoss};
pub use bank::{FeatureBank, RowLabel, Split};
pub use jl::{jl_epsilon, jl_min_dim, JlPlan};
pub use pca::{fit_pca, pca_transform, PcaModel};
pub use projection::{fit_random_projector, RandomProjector};
