use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::{Dataset, DatasetError, Example, IdentityAnnotation, Labels, Origin, Split, Taxonomy};

fn default_weight() -> f64 {
    1.0
}

/// On-disk record. Field order here is the key order written to disk.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    cf_set_id: Option<String>,
    identity: Option<IdentityAnnotation>,
    labels: Labels,
    features: Option<BTreeMap<String, f64>>,
    #[serde(default = "default_weight")]
    weight: f64,
    split: Split,
    origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_id: Option<String>,
}

pub fn load_jsonl(path: &Path) -> Result<Dataset, DatasetError> {
    load_jsonl_with(path, Taxonomy::default())
}

pub fn load_jsonl_with(path: &Path, taxonomy: Taxonomy) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    parse_jsonl(&text, taxonomy)
}

/// Parse JSONL text. The feature schema is taken from the first record that
/// carries features; every other scored record must use the same names.
/// Records with `"features": null` are accepted (not yet scored).
pub fn parse_jsonl(text: &str, taxonomy: Taxonomy) -> Result<Dataset, DatasetError> {
    let mut schema: Option<Vec<String>> = None;
    let mut examples = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| DatasetError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;

        let features = match record.features {
            None => None,
            Some(map) => {
                let names: Vec<&String> = map.keys().collect();
                match &schema {
                    None => schema = Some(map.keys().cloned().collect()),
                    Some(expected) => {
                        if names.len() != expected.len()
                            || names.iter().zip(expected).any(|(a, b)| *a != b)
                        {
                            return Err(DatasetError::FeatureSchemaMismatch { line: line_no });
                        }
                    }
                }
                for (name, &value) in &map {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(DatasetError::Schema {
                            line: line_no,
                            message: format!("feature {name:?} = {value} outside [0, 1]"),
                        });
                    }
                }
                Some(map.into_values().collect())
            }
        };

        examples.push(Example {
            id: record.id,
            text: record.text,
            cf_set_id: record.cf_set_id,
            identity: record.identity,
            labels: record.labels,
            features,
            weight: record.weight,
            split: record.split,
            origin: record.origin,
            source_id: record.source_id,
        });
    }

    Dataset::new(examples, schema.unwrap_or_default(), taxonomy)
}

pub(super) fn to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for e in ds.examples() {
        let record = Record {
            id: e.id.clone(),
            text: e.text.clone(),
            cf_set_id: e.cf_set_id.clone(),
            identity: e.identity.clone(),
            labels: e.labels,
            features: e.features.as_ref().map(|values| {
                ds.feature_names()
                    .iter()
                    .cloned()
                    .zip(values.iter().copied())
                    .collect()
            }),
            weight: e.weight,
            split: e.split,
            origin: e.origin,
            source_id: e.source_id.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}
