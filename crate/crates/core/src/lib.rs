//! LoRA and CondLoRA adapter fine-tuning on a small frozen transformer
//! encoder, together with conversion-matrix and subspace-similarity analysis
//! of the trained adapters.

pub mod adapters;
pub mod analysis;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod task;
pub mod trainer;

pub use adapters::{AdapterParams, AdapterSpec, AdapterState, Method};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{BaseWeights, ModelConfig, TargetModule};
pub use task::{build_task, LossKind, Task, TaskKind, TaskOptions};
pub use trainer::{TrainConfig, TrainReport};
