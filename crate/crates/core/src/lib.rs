//! Counterfactual fairness tooling for safety-classifier ensembles.
//!
//! A small weighted random forest combines the scores of several source
//! classifiers. Its bias across identity subgroups is measured with
//! threshold-agnostic metrics (average counterfactual variance and sliced
//! averages) and reduced by fair data reweighting: the training set is
//! resampled toward the subgroup slices the baseline handles worst.

pub mod datagen;
pub mod dataset;
pub mod ensemble;
pub mod fdw;
pub mod metrics;
pub mod pipeline;
pub mod rng;

pub use dataset::{
    CounterfactualSet, Dataset, DatasetError, Example, HarmKind, IdentityAnnotation, Label,
    Labels, Origin, Split, Taxonomy,
};
pub use ensemble::{EnsembleError, ForestConfig, ForestModel};
pub use fdw::{FdwConfig, FdwError};
pub use metrics::{MetricsError, SlicedAverages};
pub use pipeline::{PipelineConfig, PipelineData, PipelineError, RunSettings};
