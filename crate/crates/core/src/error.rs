use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate node id {0}")]
    DuplicateId(u64),
    #[error("node {child} references unknown parent {parent}")]
    UnknownParent { child: u64, parent: u64 },
    #[error("tree has multiple roots: {0:?}")]
    MultipleRoots(Vec<u64>),
    #[error("tree has no root")]
    NoRoot,
    #[error("tree contains a cycle or disconnected nodes: {0:?}")]
    Cycle(Vec<u64>),
    #[error("node {id} has invalid edge weight {weight}")]
    InvalidWeight { id: u64, weight: f64 },
    #[error("tree needs at least 2 leaves, found {0}")]
    TooFewLeaves(usize),
    #[error("hierarchical weights need a tree with exactly 3 edge levels, found {0}")]
    NotThreeLevels(usize),
    #[error("custom weight scheme has no weight for edge level {0}")]
    MissingLevelWeight(usize),
    #[error("edge weights have not been assigned")]
    WeightsUnassigned,
    #[error("level {level} is out of range for a tree with {levels} levels")]
    InvalidLevel { level: usize, levels: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("not a probability vector: {0}")]
    NotSimplex(String),
    #[error("vector is not one-hot")]
    NotOneHot,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("transport solver did not converge after {0} pivots")]
    SolverStalled(usize),

    #[error("invalid loss configuration: {0}")]
    InvalidLossConfig(String),
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("training data has no annotated pixels")]
    NoAnnotatedPixels,
    #[error("training diverged: non-finite gradient at step {step}")]
    Diverged { step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid generator spec: {0}")]
    InvalidGenSpec(String),
    #[error("requested {requested} annotated pixels but only {available} are available")]
    AnnotationExceedsForeground { requested: usize, available: usize },
    #[error("cannot split {images} images into {folds} folds")]
    InvalidSplit { images: usize, folds: usize },

    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("paired samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
