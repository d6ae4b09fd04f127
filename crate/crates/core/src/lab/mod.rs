//! Synthetic lab: planted scenes, a toy encoder, and the end-to-end audit on them.

pub mod encoder;
pub mod experiment;
pub mod oracle;
pub mod scenes;

pub use encoder::{embed_views, train_toy, LossKind, SceneView, ToyEncoder, TrainConfig};
pub use experiment::{run_lab, LabConfig, LabRun};
pub use oracle::{oracle_expected_partition, KnnOutcomeAssumptions};
pub use scenes::{generate_scenes, BackgroundKind, LabError, MemorizationOracle, Scene, SceneConfig, SceneSet};
