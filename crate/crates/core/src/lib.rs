//! Class-level machine unlearning on a sharded, sliced training layout.
//!
//! Training data is split into class-cohesive shards, each shard into slices
//! trained in sequence with a checkpoint after every slice. Removing a class
//! retrains only the shard that owns it, starting from the last checkpoint the
//! class could not have influenced.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod nn;
pub mod partition;
pub mod report;
pub mod rng;
pub mod store;
pub mod system;
pub mod trainer;
pub mod unlearner;

pub use data::{generate_synthetic, load_cifar10, split, LabeledDataset, SplitSpec, Splits, SyntheticSpec};
pub use ensemble::{AggregationMode, EnsembleModel, GatingModel};
pub use error::{Error, Result};
pub use nn::{Architecture, ModelParameters};
pub use partition::{MetadataTable, PartitionPlan, SlicingPolicy};
pub use report::{
    evaluate, run_benchmark_grid, verify_exact, ConfusionMatrix, EvaluationReport, GridConfig, GridReport, Verdict,
};
pub use rng::RngState;
pub use store::{RunManifest, RunStore};
pub use system::{train_system, SisaSystem, Strategy, SystemConfig};
pub use trainer::{Checkpoint, TrainConfig};
pub use unlearner::{unlearn, UnlearnOutcome};
