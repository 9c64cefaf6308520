use regex::{Captures, Regex};
use std::collections::HashMap;

use super::TermLexicon;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RewriteRequest {
    pub text: String,
    pub category: String,
    pub seed_subgroup: String,
    pub target_subgroup: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RewriteResult {
    Rewritten { text: String, rationale: String },
    Rejected { rationale: String },
}

#[derive(Debug, thiserror::Error)]
pub enum RewriteError {
    #[error("unknown subgroup {category}/{subgroup}")]
    UnknownSubgroup { category: String, subgroup: String },
    #[error("rewriter transport: {0}")]
    Transport(String),
    #[error("no prompt template for category {0:?}")]
    NoPrompt(String),
}

/// Produces a counterfactual of a text for another subgroup.
pub trait Rewriter: Sync {
    fn rewrite(&self, request: &RewriteRequest) -> Result<RewriteResult, RewriteError>;
}

/// Word-boundary, case-insensitive matcher for a subgroup's terms. A plural
/// `s` directly after a term is kept on the replacement.
fn term_pattern(terms: &[String]) -> Regex {
    let mut sorted: Vec<&String> = terms.iter().collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alternation = sorted
        .iter()
        .map(|t| regex::escape(t))
        .collect::<Vec<_>>()
        .join("|");
    Regex::new(&format!(r"(?i)\b({alternation})(s?)\b")).expect("escaped terms form a valid regex")
}

fn match_case(replacement: &str, matched: &str) -> String {
    let upper = matched.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        None => String::new(),
        Some(first) if upper => first.to_uppercase().chain(chars).collect(),
        Some(first) => first.to_lowercase().chain(chars).collect(),
    }
}

fn substitute(pattern: &Regex, text: &str, replacement: &str) -> Option<String> {
    if !pattern.is_match(text) {
        return None;
    }
    let out = pattern.replace_all(text, |caps: &Captures| {
        format!("{}{}", match_case(replacement, &caps[1]), &caps[2])
    });
    Some(out.into_owned())
}

/// Lexical counterfactual: replace every seed-subgroup term with the target
/// subgroup's primary term, keeping the case of each occurrence's first
/// letter. Rejects texts with no seed term. Context words (venues,
/// pronouns) are not adapted.
pub fn rule_rewrite(
    request: &RewriteRequest,
    lexicon: &TermLexicon,
) -> Result<RewriteResult, RewriteError> {
    let seed_terms = lexicon
        .terms(&request.category, &request.seed_subgroup)
        .ok_or_else(|| RewriteError::UnknownSubgroup {
            category: request.category.clone(),
            subgroup: request.seed_subgroup.clone(),
        })?;
    let target = primary(lexicon, &request.category, &request.target_subgroup)?;
    Ok(apply(request, &term_pattern(seed_terms), target))
}

fn primary<'a>(
    lexicon: &'a TermLexicon,
    category: &str,
    subgroup: &str,
) -> Result<&'a str, RewriteError> {
    lexicon
        .primary(category, subgroup)
        .ok_or_else(|| RewriteError::UnknownSubgroup {
            category: category.to_string(),
            subgroup: subgroup.to_string(),
        })
}

fn apply(request: &RewriteRequest, pattern: &Regex, target: &str) -> RewriteResult {
    if request.seed_subgroup == request.target_subgroup && pattern.is_match(&request.text) {
        return RewriteResult::Rewritten {
            text: request.text.clone(),
            rationale: "target equals seed subgroup".into(),
        };
    }
    match substitute(pattern, &request.text, target) {
        Some(text) => RewriteResult::Rewritten {
            text,
            rationale: format!(
                "replaced {} terms with {target:?}",
                request.seed_subgroup
            ),
        },
        None => RewriteResult::Rejected {
            rationale: format!("no {} term found", request.seed_subgroup),
        },
    }
}

/// [`rule_rewrite`] with the term patterns compiled once.
pub struct RuleRewriter {
    lexicon: TermLexicon,
    patterns: HashMap<(String, String), Regex>,
}

impl RuleRewriter {
    pub fn new(lexicon: TermLexicon) -> Self {
        let patterns = lexicon
            .iter()
            .map(|(c, s, terms)| ((c.to_string(), s.to_string()), term_pattern(terms)))
            .collect();
        RuleRewriter { lexicon, patterns }
    }

    pub fn lexicon(&self) -> &TermLexicon {
        &self.lexicon
    }
}

impl Rewriter for RuleRewriter {
    fn rewrite(&self, request: &RewriteRequest) -> Result<RewriteResult, RewriteError> {
        let key = (request.category.clone(), request.seed_subgroup.clone());
        let pattern = self
            .patterns
            .get(&key)
            .ok_or_else(|| RewriteError::UnknownSubgroup {
                category: request.category.clone(),
                subgroup: request.seed_subgroup.clone(),
            })?;
        let target = primary(&self.lexicon, &request.category, &request.target_subgroup)?;
        Ok(apply(request, pattern, target))
    }
}
