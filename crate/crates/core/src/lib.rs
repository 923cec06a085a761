//! Global-workspace bimodal training on a procedural shapes dataset.

pub mod config;
pub mod diffmath;
pub mod eval;
pub mod gw;
pub mod manifest;
pub mod seeds;
pub mod shapes;
pub mod specialists;
pub mod trainer;

pub use config::ExperimentConfig;
pub use diffmath::{Graph, NodeId, ParamStore, Tensor};
pub use gw::{Architecture, ContrastiveMode, GwModel, LossWeights, Side, Variant};
pub use manifest::Manifest;
pub use shapes::{Dataset, DatasetConfig, ProtoVector};
pub use specialists::{Domain, Specialists};
pub use trainer::{DatasetSplit, RunSeeds, TrainConfig, TrainData, Unpaired};
