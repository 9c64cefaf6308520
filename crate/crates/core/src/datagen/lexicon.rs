use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::DatagenError;
use crate::dataset::{Taxonomy, GENDER_IDENTITY, RACE_ETHNICITY, RELIGION, SEXUAL_ORIENTATION};

/// Surface terms per (category, subgroup). The first term of each list is
/// the primary term, used as the replacement when rewriting into that
/// subgroup.
///
/// JSON form: `{category: {subgroup: [term, ...]}}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermLexicon {
    terms: IndexMap<String, IndexMap<String, Vec<String>>>,
}

type TermTable<'a> = [(&'a str, &'a [(&'a str, &'a [&'a str])]); 4];

impl Default for TermLexicon {
    fn default() -> Self {
        let table: TermTable = [
            (
                RACE_ETHNICITY,
                &[
                    ("Black", &["Black", "African American"]),
                    ("Asian", &["Asian"]),
                    ("White", &["White", "Caucasian"]),
                    ("LatinX", &["Latinx", "Latino", "Latina", "Hispanic"]),
                    ("Indigenous", &["Indigenous", "Native American"]),
                    ("Biracial", &["biracial", "mixed-race"]),
                ],
            ),
            (
                RELIGION,
                &[
                    ("Atheism", &["atheist", "atheism"]),
                    ("Christianity", &["Christian", "Christianity", "Catholic"]),
                    ("Hinduism", &["Hindu", "Hinduism"]),
                    ("Islam", &["Muslim", "Islam", "Islamic"]),
                    ("Judaism", &["Jewish", "Judaism", "Jew"]),
                    ("Buddhism", &["Buddhist", "Buddhism"]),
                    ("Others", &["Sikh", "Jain", "Taoist"]),
                ],
            ),
            (
                GENDER_IDENTITY,
                &[
                    ("Male", &["male", "man"]),
                    ("Female", &["female", "woman"]),
                    ("NonCisgender", &["transgender", "non-binary", "nonbinary"]),
                ],
            ),
            (
                SEXUAL_ORIENTATION,
                &[
                    ("Heterosexual", &["straight", "heterosexual"]),
                    ("NonHeterosexual", &["gay", "lesbian", "bisexual", "queer", "homosexual"]),
                ],
            ),
        ];
        let terms = table
            .iter()
            .map(|(category, subgroups)| {
                let inner = subgroups
                    .iter()
                    .map(|(s, ts)| (s.to_string(), ts.iter().map(|t| t.to_string()).collect()))
                    .collect();
                (category.to_string(), inner)
            })
            .collect();
        TermLexicon { terms }
    }
}

impl TermLexicon {
    pub fn new(terms: IndexMap<String, IndexMap<String, Vec<String>>>) -> Self {
        TermLexicon { terms }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| DatagenError::Config(format!("{}: {e}", path.display())))
    }

    pub fn terms(&self, category: &str, subgroup: &str) -> Option<&[String]> {
        self.terms
            .get(category)?
            .get(subgroup)
            .map(Vec::as_slice)
            .filter(|t| !t.is_empty())
    }

    /// (category, subgroup, terms) for every subgroup with at least one term.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[String])> {
        self.terms.iter().flat_map(|(c, subs)| {
            subs.iter()
                .filter(|(_, t)| !t.is_empty())
                .map(move |(s, t)| (c.as_str(), s.as_str(), t.as_slice()))
        })
    }

    pub fn primary(&self, category: &str, subgroup: &str) -> Option<&str> {
        self.terms(category, subgroup)?.first().map(String::as_str)
    }

    /// Every subgroup of `taxonomy` must have at least one term.
    pub fn check_covers(&self, taxonomy: &Taxonomy) -> Result<(), DatagenError> {
        let missing: Vec<String> = taxonomy
            .categories()
            .flat_map(|(c, subs)| subs.iter().map(move |s| (c, s)))
            .filter(|(c, s)| self.terms(c, s).is_none())
            .map(|(c, s)| format!("{c}/{s}"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(DatagenError::Config(format!(
                "lexicon has no terms for {}",
                missing.join(", ")
            )))
        }
    }
}
