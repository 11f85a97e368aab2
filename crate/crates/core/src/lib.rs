//! Feature-block importance ranking for multiblock neural networks.
//!
//! A multiblock network ([`mann`]) routes each group of input features through
//! its own branch before a shared blender network. Block importance is ranked
//! post hoc with three strategies ([`bir`]):
//!
//! * composite: aggregate per-feature VarGrad scores ([`vargrad`]) within a block;
//! * knock-in: how much of the output a block recovers on its own;
//! * knock-out: how much output information is lost when the block is imputed.
//!
//! [`simgen`] produces synthetic regression problems with known block
//! importances, and [`stats`] / [`experiment`] evaluate rankings over repeated runs.

pub mod bir;
pub mod config;
pub mod experiment;
pub mod ingest;
pub mod mann;
pub mod matrix;
pub mod simgen;
pub mod stats;
pub mod vargrad;

pub use bir::{BlockImportance, MiConfig, Strategy};
pub use mann::{ArchitectureSpec, BlockSpec, MannModel, TrainConfig};
pub use matrix::Matrix;
pub use simgen::{SimDataset, SimSpec};
pub use vargrad::{FeatureImportance, VarGradConfig};
