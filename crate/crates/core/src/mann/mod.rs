//! Multiblock feed-forward networks: one dense branch per feature-block, a
//! concatenation layer, and a blender network mapping the concatenated branch
//! outputs to a scalar prediction.

mod layout;
mod model;
mod optim;
mod persist;
mod spec;
mod standardize;
mod train;

use thiserror::Error;

pub use layout::{DenseLayer, WeightLayout};
pub use model::{ConcatActivations, ForwardOutput, MannModel, TrainingMetadata};
pub use optim::{Adam, AdamConfig};
pub use persist::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION};
pub use spec::{Activation, ArchitectureSpec, Block, BlockSpec, OutputHead};
pub use standardize::{Standardizer, TargetScale};
pub use train::{train, LossKind, TrainConfig};

pub(crate) use model::Scratch;
pub(crate) use standardize::mean_std;

#[derive(Debug, Error)]
pub enum MannError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("feature {0} is constant on the training data")]
    ConstantFeature(usize),
    #[error("need at least 2 rows to standardize, got {0}")]
    TooFewRows(usize),
    #[error("invalid block spec: {0}")]
    InvalidBlockSpec(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model format version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u64, supported: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
}
