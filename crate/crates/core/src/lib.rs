//! Hierarchical attention over user behaviors for click-through-rate
//! prediction: tensors with reverse-mode autodiff, data preparation,
//! behavior grouping, the model and its baselines, training and evaluation.

pub mod data;
pub mod fsutil;
pub mod hierarchy;
pub mod models;
pub mod tensor;
pub mod train;

pub use data::{Catalog, Sample, SampleMode, SampleSet, SynthConfig, Vocabulary};
pub use hierarchy::{Dimension, HierarchySpec};
pub use models::{Model, ModelConfig, Variant, VocabSizes};
pub use tensor::{ParamStore, Tensor};
pub use train::{RunMetrics, TrainConfig};
