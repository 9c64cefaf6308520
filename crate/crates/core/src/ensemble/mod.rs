//! Weighted random forest over source-model scores, one binary head per harm.

mod forest;
mod tree;

pub use forest::{
    contributions_csv, feature_contributions, predict, score_dataset, score_table, train, FeaturesPerSplit,
    ForestConfig, ForestHead, ForestModel, HeadProvenance, FORMAT_TAG,
};
pub use tree::TreeNode;

use crate::dataset::HarmKind;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("degenerate labels: {0} training data has a single class")]
    DegenerateLabels(HarmKind),
    #[error("total training weight is zero")]
    ZeroWeight,
    #[error("example {0:?} has no features")]
    MissingFeatures(String),
    #[error("feature schema mismatch: model has {expected:?}, data has {found:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("feature vector has {found} values, schema has {expected}")]
    VectorLength { expected: usize, found: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("model has no {0} head")]
    MissingHead(HarmKind),
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
