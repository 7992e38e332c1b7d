//! Tree-based semantic losses for sparsely annotated pixel classification.
//!
//! The crate covers the whole pipeline on a weighted label hierarchy:
//!
//! * [`hierarchy`]: label trees, edge-weight schemes and tree ground distances.
//! * [`transport`]: exact and closed-form Wasserstein distances on the leaf simplex.
//! * [`losses`]: cross-entropy, Wasserstein(+CE) and tree-based CE with
//!   gradients, reduced over annotated pixels.
//! * [`trainer`]: a per-pixel MLP trained with Adam and exponential LR decay.
//! * [`evaluation`]: thresholded OOD decisions, one-vs-rest metrics,
//!   confusion matrices and paired t-tests.
//! * [`datagen`] and [`dataset`]: synthetic hierarchy-correlated spectral data
//!   and its on-disk format.
//! * [`experiment`] and [`report`]: cross-validated comparison of loss
//!   configurations and its CSV outputs.

pub mod datagen;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod hierarchy;
pub mod losses;
pub mod report;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
pub use hierarchy::{DistanceMatrix, EdgeWeightScheme, LabelTree, LevelPartition, NodeRecord};
pub use losses::{AggregatedProb, LossConfig, LossKind, PixelBatch, SemanticLoss};
pub use trainer::{Mlp, TrainConfig};
pub use transport::{OneHot, ProbVector};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
