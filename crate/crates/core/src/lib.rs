//! Self-ensemble person re-identification features: a shared trunk with
//! heads that cover every instance-normalization placement over the final
//! bottlenecks, feature concatenation and reduction (random projection,
//! PCA, autoencoder), and retrieval evaluation on a synthetic multi-domain
//! benchmark.

pub mod bottleneck;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod layers;
pub mod losses;
pub mod ops;
pub mod optim;
pub mod pattern;
pub mod reduce;
pub mod retrieval;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{LayerParams, Scalar, Tensor};
