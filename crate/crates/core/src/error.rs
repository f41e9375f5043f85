use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("k = {k} exceeds point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("point {index} has only {found} neighbors inside the query radius (need >= 3)")]
    InsufficientNeighbors { index: usize, found: usize },
    #[error("point {index} has no neighbors inside the query radius")]
    IsolatedPoint { index: usize },
    #[error("point set is empty")]
    EmptySet,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("no training clouds given")]
    EmptyDataset,
    #[error("requested {requested} samples from {available} points")]
    CountTooLarge { requested: usize, available: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("could not place a {kind} defect with anomaly fraction in [0.01, 0.10] after {attempts} attempts")]
    CannotSatisfyFraction { kind: String, attempts: usize },
    #[error("mask ratio {0} outside [0, 1)")]
    InvalidRatio(f64),
    #[error("mask ratio {ratio} on {n_patches} patches masks zero patches")]
    DegenerateMask { n_patches: usize, ratio: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("patch count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("model parameters are uninitialized")]
    UntrainedModel,
    #[error("template centers are {distance:.4} away from cloud centers (limit {limit:.4})")]
    TemplateMismatch { distance: f64, limit: f64 },
    #[error("ROC needs at least one positive and one negative label")]
    SingleClass,
    #[error("no ground-truth regions present")]
    NoRegions,
    #[error("no checkpoint for class {class}")]
    MissingModel { class: String },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
