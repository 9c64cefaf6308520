use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::tree::{grow, Columns, TreeParams};
use super::{EnsembleError, TreeNode};
use crate::dataset::{Dataset, HarmKind};
use crate::metrics::ScoreTable;
use crate::rng;

pub const FORMAT_TAG: &str = "fairensemble-forest/1";

/// Deepest tree the JSON model format can round-trip.
const MAX_DEPTH_LIMIT: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SqrtTag {
    Sqrt,
}

/// Features considered at each split: `"sqrt"` or a fixed count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeaturesPerSplit {
    Count(usize),
    #[serde(with = "sqrt_tag")]
    Sqrt,
}

mod sqrt_tag {
    use super::SqrtTag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        SqrtTag::Sqrt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        SqrtTag::deserialize(d).map(|_| ())
    }
}

impl FeaturesPerSplit {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            FeaturesPerSplit::Count(k) => k.clamp(1, n_features.max(1)),
            FeaturesPerSplit::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
        }
    }
}

/// Missing fields in JSON take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 8,
            min_samples_leaf: 5,
            features_per_split: FeaturesPerSplit::Sqrt,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: &str| Err(EnsembleError::Config(m.to_string()));
        if self.n_trees == 0 {
            return bad("n_trees must be >= 1");
        }
        if self.max_depth == 0 || self.max_depth > MAX_DEPTH_LIMIT {
            return Err(EnsembleError::Config(format!(
                "max_depth must be in 1..={MAX_DEPTH_LIMIT}"
            )));
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if self.features_per_split == FeaturesPerSplit::Count(0) {
            return bad("features_per_split must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadProvenance {
    /// SHA-256 of the training JSONL.
    pub dataset_hash: String,
    pub n_examples: usize,
    /// Examples with positive weight (the only ones the trees see).
    pub n_weighted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestHead {
    pub harm: HarmKind,
    pub config: ForestConfig,
    pub provenance: HeadProvenance,
    pub trees: Vec<TreeNode>,
}

impl ForestHead {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub feature_names: Vec<String>,
    pub heads: BTreeMap<HarmKind, ForestHead>,
}

impl ForestModel {
    pub fn new(feature_names: Vec<String>) -> Self {
        ForestModel {
            format: FORMAT_TAG.to_string(),
            feature_names,
            heads: BTreeMap::new(),
        }
    }

    /// Train one head per harm on `datasets`, which must share a schema.
    pub fn train_heads<'a>(
        datasets: impl IntoIterator<Item = (HarmKind, &'a Dataset)>,
        config: &ForestConfig,
    ) -> Result<Self, EnsembleError> {
        let mut model: Option<ForestModel> = None;
        for (harm, ds) in datasets {
            let m = model.get_or_insert_with(|| ForestModel::new(ds.feature_names().to_vec()));
            check_schema(&m.feature_names, ds)?;
            m.heads.insert(harm, train(ds, harm, config)?);
        }
        model.ok_or_else(|| EnsembleError::Config("no heads requested".into()))
    }

    pub fn head(&self, harm: HarmKind) -> Result<&ForestHead, EnsembleError> {
        self.heads.get(&harm).ok_or(EnsembleError::MissingHead(harm))
    }

    pub fn n_params(&self) -> usize {
        self.heads
            .values()
            .flat_map(|h| &h.trees)
            .map(TreeNode::n_params)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        let model: ForestModel = serde_json::from_str(text)?;
        if model.format != FORMAT_TAG {
            return Err(EnsembleError::Format(format!(
                "unsupported format {:?}, expected {FORMAT_TAG:?}",
                model.format
            )));
        }
        let d = model.feature_names.len();
        for head in model.heads.values() {
            if head.trees.is_empty() {
                return Err(EnsembleError::Format(format!("{} head has no trees", head.harm)));
            }
            for t in &head.trees {
                t.check(d).map_err(EnsembleError::Format)?;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_schema(expected: &[String], ds: &Dataset) -> Result<(), EnsembleError> {
    if expected != ds.feature_names() {
        return Err(EnsembleError::SchemaMismatch {
            expected: expected.to_vec(),
            found: ds.feature_names().to_vec(),
        });
    }
    Ok(())
}

/// Train one head. Examples with zero weight are dropped before the
/// bootstrap, so they have no influence at all.
pub fn train(dataset: &Dataset, harm: HarmKind, config: &ForestConfig) -> Result<ForestHead, EnsembleError> {
    config.validate()?;
    let d = dataset.feature_names().len();
    if d == 0 {
        return Err(EnsembleError::Config("dataset has no feature schema".into()));
    }
    let mut cols = vec![Vec::new(); d];
    let mut y = Vec::new();
    let mut w = Vec::new();
    for e in dataset.examples() {
        let x = e
            .features
            .as_ref()
            .ok_or_else(|| EnsembleError::MissingFeatures(e.id.clone()))?;
        if e.weight > 0.0 {
            for (c, v) in cols.iter_mut().zip(x) {
                c.push(*v);
            }
            y.push(e.labels.get(harm).is_unsafe());
            w.push(e.weight);
        }
    }
    if w.is_empty() {
        return Err(EnsembleError::ZeroWeight);
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(EnsembleError::DegenerateLabels(harm));
    }

    let n_weighted = w.len();
    let data = Columns::new(cols, y, w);
    let params = TreeParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf.min(u32::MAX as usize) as u32,
        features_per_split: config.features_per_split.resolve(d),
    };
    let trees: Vec<TreeNode> = (0..config.n_trees as u64)
        .into_par_iter()
        .map(|t| grow(&data, &params, rng::stream(config.seed, &["forest", harm.as_str()], t)))
        .collect();

    Ok(ForestHead {
        harm,
        config: config.clone(),
        provenance: HeadProvenance {
            dataset_hash: dataset.content_hash(),
            n_examples: dataset.len(),
            n_weighted,
        },
        trees,
    })
}

/// Score one feature vector with every head.
pub fn predict(model: &ForestModel, features: &[f64]) -> Result<BTreeMap<HarmKind, f64>, EnsembleError> {
    if features.len() != model.feature_names.len() {
        return Err(EnsembleError::VectorLength {
            expected: model.feature_names.len(),
            found: features.len(),
        });
    }
    Ok(model
        .heads
        .iter()
        .map(|(&h, head)| (h, head.predict(features)))
        .collect())
}

/// Scores of one head for every example, in example order.
pub fn score_dataset(model: &ForestModel, dataset: &Dataset, harm: HarmKind) -> Result<Vec<f64>, EnsembleError> {
    check_schema(&model.feature_names, dataset)?;
    let head = model.head(harm)?;
    dataset
        .examples()
        .par_iter()
        .map(|e| {
            e.features
                .as_deref()
                .map(|x| head.predict(x))
                .ok_or_else(|| EnsembleError::MissingFeatures(e.id.clone()))
        })
        .collect()
}

/// Scores of every head.
pub fn score_table(model: &ForestModel, dataset: &Dataset) -> Result<ScoreTable, EnsembleError> {
    model
        .heads
        .keys()
        .map(|&h| Ok((h, score_dataset(model, dataset, h)?)))
        .collect()
}

/// Share of the head's total weighted Gini decrease per feature, in percent.
/// A forest of stumps gets all zeros.
pub fn feature_contributions(model: &ForestModel, harm: HarmKind) -> Result<BTreeMap<String, f64>, EnsembleError> {
    let head = model.head(harm)?;
    let mut totals = vec![0.0; model.feature_names.len()];
    for t in &head.trees {
        t.visit_splits(&mut |f, g| totals[f] += g);
    }
    let sum: f64 = totals.iter().sum();
    if sum <= 0.0 {
        log::warn!("{harm} head never splits; contributions are all zero");
    }
    Ok(model
        .feature_names
        .iter()
        .zip(totals)
        .map(|(name, g)| (name.clone(), if sum > 0.0 { g / sum * 100.0 } else { 0.0 }))
        .collect())
}

/// `harm,feature,percentage` rows for every head.
pub fn contributions_csv(model: &ForestModel) -> Result<String, EnsembleError> {
    let mut out = String::from("harm,feature,percentage\n");
    for &harm in model.heads.keys() {
        for (name, pct) in feature_contributions(model, harm)? {
            out.push_str(&format!("{harm},{name},{pct}\n"));
        }
    }
    Ok(out)
}
