//! Counterfactually annotated safety datasets.
//!
//! A [`Dataset`] is an immutable, validated collection of [`Example`]s with
//! a fixed feature schema and the counterfactual sets derived from the
//! examples' `cf_set_id`s.

mod balance;
mod jsonl;
mod split;
mod taxonomy;

pub use balance::counterfactual_balance;
pub use jsonl::{load_jsonl, load_jsonl_with, parse_jsonl};
pub use split::{split_by_cf_set, SplitFractions};
pub use taxonomy::{Taxonomy, GENDER_IDENTITY, RACE_ETHNICITY, RELIGION, SEXUAL_ORIENTATION};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("feature schema mismatch line {line}")]
    FeatureSchemaMismatch { line: usize },
    #[error("example {id:?}: feature {feature:?} = {value} outside [0, 1]")]
    FeatureRange {
        id: String,
        feature: String,
        value: f64,
    },
    #[error("inconsistent labels in cf set {0:?}")]
    InconsistentLabels(String),
    #[error("invalid cf set {id:?}: {message}")]
    InvalidCfSet { id: String, message: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("example {id:?}: {message}")]
    InvalidExample { id: String, message: String },
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four harm types a safety label is given for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarmKind {
    Hate,
    Toxicity,
    Sexual,
    Violence,
}

impl HarmKind {
    pub const ALL: [HarmKind; 4] = [
        HarmKind::Hate,
        HarmKind::Toxicity,
        HarmKind::Sexual,
        HarmKind::Violence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HarmKind::Hate => "hate",
            HarmKind::Toxicity => "toxicity",
            HarmKind::Sexual => "sexual",
            HarmKind::Violence => "violence",
        }
    }
}

impl fmt::Display for HarmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HarmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HarmKind::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| format!("unknown harm {s:?} (expected hate|toxicity|sexual|violence)"))
    }
}

/// Binary ground truth. `Unsafe` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Unsafe,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Safe, Label::Unsafe];

    pub fn is_unsafe(self) -> bool {
        self == Label::Unsafe
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Safe => "safe",
            Label::Unsafe => "unsafe",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "safe" => Ok(Label::Safe),
            "unsafe" => Ok(Label::Unsafe),
            _ => Err(format!("unknown label {s:?} (expected safe|unsafe)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Counterfactual,
}

/// Per-harm ground truth of one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub hate: Label,
    pub toxicity: Label,
    pub sexual: Label,
    pub violence: Label,
}

impl Labels {
    pub fn uniform(label: Label) -> Self {
        Labels {
            hate: label,
            toxicity: label,
            sexual: label,
            violence: label,
        }
    }

    pub fn get(&self, harm: HarmKind) -> Label {
        match harm {
            HarmKind::Hate => self.hate,
            HarmKind::Toxicity => self.toxicity,
            HarmKind::Sexual => self.sexual,
            HarmKind::Violence => self.violence,
        }
    }

    pub fn set(&mut self, harm: HarmKind, label: Label) {
        match harm {
            HarmKind::Hate => self.hate = label,
            HarmKind::Toxicity => self.toxicity = label,
            HarmKind::Sexual => self.sexual = label,
            HarmKind::Violence => self.violence = label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IdentityAnnotation {
    pub category: String,
    pub subgroup: String,
}

impl IdentityAnnotation {
    pub fn new(category: impl Into<String>, subgroup: impl Into<String>) -> Self {
        IdentityAnnotation {
            category: category.into(),
            subgroup: subgroup.into(),
        }
    }
}

/// One text item with its annotations and source-model scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub cf_set_id: Option<String>,
    pub identity: Option<IdentityAnnotation>,
    pub labels: Labels,
    /// Scores in the dataset's feature-schema order; `None` until scored.
    pub features: Option<Vec<f64>>,
    pub weight: f64,
    pub split: Split,
    pub origin: Origin,
    /// Set on resampled copies: the id of the example this one duplicates.
    /// Copies are not members of any counterfactual set.
    pub source_id: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, labels: Labels) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            cf_set_id: None,
            identity: None,
            labels,
            features: None,
            weight: 1.0,
            split: Split::Train,
            origin: Origin::Original,
            source_id: None,
        }
    }

    pub fn is_copy(&self) -> bool {
        self.source_id.is_some()
    }
}

/// Members of one counterfactual set, as indices into [`Dataset::examples`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterfactualSet {
    pub cf_set_id: String,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    feature_names: Vec<String>,
    taxonomy: Taxonomy,
    cf_sets: Vec<CounterfactualSet>,
    index: HashMap<String, usize>,
}

impl Dataset {
    /// Validate and assemble a dataset.
    ///
    /// `feature_names` must already be in schema order (sorted).
    pub fn new(
        examples: Vec<Example>,
        feature_names: Vec<String>,
        taxonomy: Taxonomy,
    ) -> Result<Self, DatasetError> {
        if feature_names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::Schema {
                line: 0,
                message: "feature names must be unique and sorted".into(),
            });
        }

        let mut index = HashMap::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(e.id.clone()));
            }
            validate_example(e, &feature_names, &taxonomy)?;
        }

        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in examples.iter().enumerate() {
            if let (Some(set), false) = (&e.cf_set_id, e.is_copy()) {
                groups.entry(set.as_str()).or_default().push(i);
            }
        }
        let mut cf_sets = Vec::with_capacity(groups.len());
        for (id, members) in groups {
            validate_cf_set(id, &members, &examples)?;
            cf_sets.push(CounterfactualSet {
                cf_set_id: id.to_string(),
                members,
            });
        }

        Ok(Dataset {
            examples,
            feature_names,
            taxonomy,
            cf_sets,
            index,
        })
    }

    pub fn empty(taxonomy: Taxonomy) -> Self {
        Dataset {
            examples: Vec::new(),
            feature_names: Vec::new(),
            taxonomy,
            cf_sets: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn cf_sets(&self) -> &[CounterfactualSet] {
        &self.cf_sets
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    /// Keep the examples matching `keep`. Counterfactual sets are recomputed
    /// over the survivors.
    pub fn filter(&self, mut keep: impl FnMut(&Example) -> bool) -> Self {
        let examples: Vec<Example> = self.examples.iter().filter(|e| keep(e)).cloned().collect();
        Dataset::new(examples, self.feature_names.clone(), self.taxonomy.clone())
            .expect("a subset of a valid dataset is valid")
    }

    pub fn with_split(&self, split: Split) -> Self {
        self.filter(|e| e.split == split)
    }

    pub fn originals(&self) -> Self {
        self.filter(|e| e.origin == Origin::Original && !e.is_copy())
    }

    /// Serialize as JSONL, one record per line, in example order.
    pub fn to_jsonl(&self) -> String {
        jsonl::to_jsonl(self)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// Hex SHA-256 of the JSONL serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    /// True when every example carries a feature vector.
    pub fn is_scored(&self) -> bool {
        self.examples.iter().all(|e| e.features.is_some())
    }
}

fn validate_example(
    e: &Example,
    feature_names: &[String],
    taxonomy: &Taxonomy,
) -> Result<(), DatasetError> {
    let bad = |message: String| DatasetError::InvalidExample {
        id: e.id.clone(),
        message,
    };
    if !(e.weight.is_finite() && e.weight >= 0.0) {
        return Err(bad(format!("weight {} must be finite and >= 0", e.weight)));
    }
    if let Some(features) = &e.features {
        if features.len() != feature_names.len() {
            return Err(bad(format!(
                "{} feature values for a schema of {}",
                features.len(),
                feature_names.len()
            )));
        }
        for (name, &value) in feature_names.iter().zip(features) {
            if !(0.0..=1.0).contains(&value) {
                return Err(DatasetError::FeatureRange {
                    id: e.id.clone(),
                    feature: name.clone(),
                    value,
                });
            }
        }
    }
    if let Some(identity) = &e.identity {
        if !taxonomy.contains(&identity.category, &identity.subgroup) {
            return Err(bad(format!(
                "subgroup {:?} is not in category {:?}",
                identity.subgroup, identity.category
            )));
        }
    }
    if e.origin == Origin::Counterfactual && (e.cf_set_id.is_none() || e.identity.is_none()) {
        return Err(bad(
            "counterfactual examples need cf_set_id and identity".into(),
        ));
    }
    Ok(())
}

fn validate_cf_set(id: &str, members: &[usize], examples: &[Example]) -> Result<(), DatasetError> {
    let invalid = |message: String| DatasetError::InvalidCfSet {
        id: id.to_string(),
        message,
    };
    let first = &examples[members[0]];
    let mut subgroups = std::collections::HashSet::new();
    let mut category: Option<&str> = None;
    for &m in members {
        let e = &examples[m];
        if e.labels != first.labels {
            return Err(DatasetError::InconsistentLabels(id.to_string()));
        }
        if e.split != first.split {
            return Err(invalid(format!("member {:?} is in another split", e.id)));
        }
        let identity = e
            .identity
            .as_ref()
            .ok_or_else(|| invalid(format!("member {:?} has no identity", e.id)))?;
        match category {
            None => category = Some(&identity.category),
            Some(c) if c != identity.category => {
                return Err(invalid(format!(
                    "mixes categories {c:?} and {:?}",
                    identity.category
                )))
            }
            Some(_) => {}
        }
        if !subgroups.insert(identity.subgroup.as_str()) {
            return Err(invalid(format!(
                "subgroup {:?} appears twice",
                identity.subgroup
            )));
        }
    }
    Ok(())
}
