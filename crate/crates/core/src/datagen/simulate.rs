use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::DatagenError;
use crate::dataset::{
    Dataset, Example, HarmKind, Label, RACE_ETHNICITY, SEXUAL_ORIENTATION,
};
use crate::rng;

/// Feature carrying the Safe-side planted offset in [`BiasSpec::planted_default`].
pub const PLANTED_SAFE_FEATURE: &str = "identity_attack_sim";
/// Feature carrying the Unsafe-side planted offset in [`BiasSpec::planted_default`].
pub const PLANTED_UNSAFE_FEATURE: &str = "sensitive_topic_sim";

/// Additive score shift for examples whose `harm` label is `gt` and whose
/// identity is `category`/`subgroup`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasOffset {
    pub harm: HarmKind,
    pub gt: Label,
    pub category: String,
    pub subgroup: String,
    pub offset: f64,
}

/// How one simulated source attribute responds to an example.
///
/// `score = clip(floor + sum_h signal[h] * [label_h = unsafe] + offsets
///               + content_sd * z_set + noise_sd * z_example, 0, 1)`
///
/// `z_set` is shared by every member of a cf set (the text's content is the
/// same), `z_example` is drawn per example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub signal: BTreeMap<HarmKind, f64>,
    #[serde(default)]
    pub content_sd: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub offsets: Vec<BiasOffset>,
}

impl FeatureSpec {
    /// Expected score before noise and clipping.
    pub fn mean(&self, e: &Example) -> f64 {
        let signal: f64 = self
            .signal
            .iter()
            .filter(|(h, _)| e.labels.get(**h).is_unsafe())
            .map(|(_, s)| s)
            .sum();
        let offset: f64 = match &e.identity {
            None => 0.0,
            Some(id) => self
                .offsets
                .iter()
                .filter(|o| {
                    e.labels.get(o.harm) == o.gt
                        && o.category == id.category
                        && o.subgroup == id.subgroup
                })
                .map(|o| o.offset)
                .sum(),
        };
        self.floor + signal + offset
    }
}

/// Relative weight of `category`/`subgroup` when the corpus generator picks
/// the identity of an original whose `harm` label is `gt`. Subgroups without
/// a matching entry have weight 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSkew {
    pub harm: HarmKind,
    pub gt: Label,
    pub category: String,
    pub subgroup: String,
    pub weight: f64,
}

/// Simulated source-model attributes, keyed by feature name, plus the
/// identity skew of the original (pre-counterfactual) examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub features: BTreeMap<String, FeatureSpec>,
    #[serde(default)]
    pub sampling: Vec<SamplingSkew>,
}

fn feature(floor: f64, signal: &[(HarmKind, f64)], content_sd: f64, noise_sd: f64) -> FeatureSpec {
    FeatureSpec {
        floor,
        signal: signal.iter().copied().collect(),
        content_sd,
        noise_sd,
        offsets: Vec::new(),
    }
}

impl BiasSpec {
    /// Eleven attributes loosely modelled on public moderation APIs. Hate is
    /// best detected by `identity_attack_sim`, which also scores Safe texts
    /// about Black people 0.4 higher; `sensitive_topic_sim` under-scores
    /// Unsafe texts about non-heterosexual people. Originals for both of those
    /// slices are drawn at 3% of the usual rate, so only counterfactuals
    /// cover them well.
    pub fn planted_default() -> Self {
        use HarmKind::*;
        let mut features = BTreeMap::new();
        let mut identity_attack = feature(0.10, &[(Hate, 0.40)], 0.10, 0.02);
        identity_attack.offsets.push(BiasOffset {
            harm: Hate,
            gt: Label::Safe,
            category: RACE_ETHNICITY.into(),
            subgroup: "Black".into(),
            offset: 0.4,
        });
        let mut sensitive_topic = feature(0.15, &[(Hate, 0.35)], 0.14, 0.02);
        sensitive_topic.offsets.push(BiasOffset {
            harm: Hate,
            gt: Label::Unsafe,
            category: SEXUAL_ORIENTATION.into(),
            subgroup: "NonHeterosexual".into(),
            offset: -0.25,
        });
        features.insert(PLANTED_SAFE_FEATURE.to_string(), identity_attack);
        features.insert(PLANTED_UNSAFE_FEATURE.to_string(), sensitive_topic);
        features.insert(
            "insult_sim".into(),
            feature(0.10, &[(Hate, 0.20), (Toxicity, 0.35)], 0.15, 0.02),
        );
        features.insert(
            "abuse_sim".into(),
            feature(0.10, &[(Hate, 0.40), (Toxicity, 0.15)], 0.15, 0.02),
        );
        features.insert(
            "toxicity_sim".into(),
            feature(0.10, &[(Toxicity, 0.45), (Hate, 0.10)], 0.13, 0.02),
        );
        features.insert(
            "profanity_sim".into(),
            feature(0.10, &[(Toxicity, 0.30), (Sexual, 0.10)], 0.15, 0.02),
        );
        features.insert(
            "obscene_sim".into(),
            feature(0.10, &[(Sexual, 0.45), (Toxicity, 0.10)], 0.13, 0.02),
        );
        features.insert("sexual_explicit_sim".into(), feature(0.10, &[(Sexual, 0.35)], 0.15, 0.02));
        features.insert(
            "threat_sim".into(),
            feature(0.10, &[(Violence, 0.40), (Hate, 0.05)], 0.14, 0.02),
        );
        features.insert("violence_sim".into(), feature(0.10, &[(Violence, 0.35)], 0.15, 0.02));
        features.insert(
            "conflict_sim".into(),
            feature(0.15, &[(Violence, 0.20), (Hate, 0.10)], 0.15, 0.02),
        );
        let sampling = vec![
            SamplingSkew {
                harm: Hate,
                gt: Label::Safe,
                category: RACE_ETHNICITY.into(),
                subgroup: "Black".into(),
                weight: 0.03,
            },
            SamplingSkew {
                harm: Hate,
                gt: Label::Unsafe,
                category: SEXUAL_ORIENTATION.into(),
                subgroup: "NonHeterosexual".into(),
                weight: 0.03,
            },
        ];
        BiasSpec { features, sampling }
    }

    /// The same attributes with every offset and sampling skew removed.
    pub fn unbiased(&self) -> Self {
        let mut out = self.clone();
        for f in out.features.values_mut() {
            f.offsets.clear();
        }
        out.sampling.clear();
        out
    }

    /// Sampling weight of an original with `labels` for `category`/`subgroup`.
    pub fn sampling_weight(&self, labels: &crate::dataset::Labels, category: &str, subgroup: &str) -> f64 {
        self.sampling
            .iter()
            .filter(|s| labels.get(s.harm) == s.gt && s.category == category && s.subgroup == subgroup)
            .map(|s| s.weight)
            .product()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.keys().cloned().collect()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| DatagenError::Config(format!("{}: {e}", path.display())))
    }

    pub(crate) fn validate(&self) -> Result<(), DatagenError> {
        for (name, f) in &self.features {
            let finite = [f.floor, f.content_sd, f.noise_sd]
                .iter()
                .chain(f.signal.values())
                .chain(f.offsets.iter().map(|o| &o.offset))
                .all(|v| v.is_finite());
            if !finite || f.content_sd < 0.0 || f.noise_sd < 0.0 {
                return Err(DatagenError::Config(format!(
                    "feature {name:?}: parameters must be finite with non-negative sds"
                )));
            }
        }
        if let Some(s) = self.sampling.iter().find(|s| !(s.weight.is_finite() && s.weight >= 0.0)) {
            return Err(DatagenError::Config(format!(
                "sampling weight for {}/{} must be finite and non-negative, got {}",
                s.category, s.subgroup, s.weight
            )));
        }
        Ok(())
    }
}

/// Score every example with the simulated sources described by `spec`.
///
/// Noise is keyed by cf set id (shared component) and example id (own
/// component) under `seed`, so an example's scores do not depend on which
/// other examples are in the dataset or their order.
pub fn simulate_sources(dataset: &Dataset, spec: &BiasSpec, seed: u64) -> Result<Dataset, DatagenError> {
    spec.validate()?;
    let names = spec.feature_names();
    if !dataset.feature_names().is_empty() && dataset.feature_names() != names.as_slice() {
        return Err(DatagenError::Config(format!(
            "bias spec features {:?} do not match dataset schema {:?}",
            names,
            dataset.feature_names()
        )));
    }

    let examples = dataset
        .examples()
        .iter()
        .map(|e| {
            let content_key = e.cf_set_id.as_deref().unwrap_or(&e.id);
            let mut content = rng::stream(seed, &["sources", "content", content_key], 0);
            let mut own = rng::stream(seed, &["sources", "example", &e.id], 0);
            let features = spec
                .features
                .values()
                .map(|f| {
                    let z_set: f64 = StandardNormal.sample(&mut content);
                    let z_own: f64 = StandardNormal.sample(&mut own);
                    (f.mean(e) + f.content_sd * z_set + f.noise_sd * z_own).clamp(0.0, 1.0)
                })
                .collect();
            Example {
                features: Some(features),
                ..e.clone()
            }
        })
        .collect();

    Ok(Dataset::new(examples, names, dataset.taxonomy().clone())?)
}
