use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::DatasetError;

pub const RACE_ETHNICITY: &str = "Race/Ethnicity";
pub const RELIGION: &str = "Religion";
pub const GENDER_IDENTITY: &str = "Gender Identity";
pub const SEXUAL_ORIENTATION: &str = "Sexual Orientation";

/// Identity categories and their ordered subgroups.
///
/// Serialized as a JSON object `category -> [subgroup, ...]`; key order is
/// preserved and is the iteration order everywhere else in the crate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy {
    categories: IndexMap<String, Vec<String>>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let table: [(&str, &[&str]); 4] = [
            (
                RACE_ETHNICITY,
                &["Black", "Asian", "White", "LatinX", "Indigenous", "Biracial"],
            ),
            (
                RELIGION,
                &[
                    "Atheism",
                    "Christianity",
                    "Hinduism",
                    "Islam",
                    "Judaism",
                    "Buddhism",
                    "Others",
                ],
            ),
            (GENDER_IDENTITY, &["Male", "Female", "NonCisgender"]),
            (SEXUAL_ORIENTATION, &["Heterosexual", "NonHeterosexual"]),
        ];
        let categories = table
            .iter()
            .map(|(c, subs)| (c.to_string(), subs.iter().map(|s| s.to_string()).collect()))
            .collect();
        Taxonomy { categories }
    }
}

impl Taxonomy {
    pub fn new(categories: IndexMap<String, Vec<String>>) -> Result<Self, DatasetError> {
        for (category, subgroups) in &categories {
            if subgroups.is_empty() {
                return Err(DatasetError::Taxonomy(format!(
                    "category {category:?} has no subgroups"
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for s in subgroups {
                if !seen.insert(s) {
                    return Err(DatasetError::Taxonomy(format!(
                        "duplicate subgroup {s:?} in category {category:?}"
                    )));
                }
            }
        }
        Ok(Taxonomy { categories })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let categories: IndexMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Taxonomy(format!("{}: {e}", path.display())))?;
        Self::new(categories)
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.categories
            .iter()
            .map(|(c, s)| (c.as_str(), s.as_slice()))
    }

    pub fn subgroups(&self, category: &str) -> Option<&[String]> {
        self.categories.get(category).map(Vec::as_slice)
    }

    pub fn contains(&self, category: &str, subgroup: &str) -> bool {
        self.subgroups(category)
            .is_some_and(|subs| subs.iter().any(|s| s == subgroup))
    }
}
