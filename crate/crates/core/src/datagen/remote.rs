//! Pluggable LLM-backed rewriter and critic.
//!
//! Both talk to an endpoint through [`Transport`] using the wire format
//! `{"prompt": str}` -> `{"text": str}`. With the `remote` feature,
//! [`HttpTransport`] POSTs that JSON to a configurable URL; tests plug in
//! an in-process transport instead.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use super::{Critic, CriticError, RewriteError, RewriteRequest, RewriteResult, Rewriter, Verdict};
use crate::dataset::{Example, HarmKind, GENDER_IDENTITY, RACE_ETHNICITY, RELIGION, SEXUAL_ORIENTATION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub text: String,
}

pub trait Transport: Sync {
    fn call(&self, request: &RemoteRequest) -> Result<RemoteResponse, String>;
}

pub mod prompts {
    //! Prompt templates shipped with the crate.
    use super::*;

    pub const CF_RELIGION: &str = include_str!("../../assets/prompts/cf_religion.txt");
    pub const CF_RACE_ETHNICITY: &str = include_str!("../../assets/prompts/cf_race_ethnicity.txt");
    pub const CF_GENDER_IDENTITY: &str =
        include_str!("../../assets/prompts/cf_gender_identity.txt");
    pub const CF_SEXUAL_ORIENTATION: &str =
        include_str!("../../assets/prompts/cf_sexual_orientation.txt");
    pub const NONHARMFUL_TOPIC_CURATION: &str =
        include_str!("../../assets/prompts/nonharmful_topic_curation.txt");
    pub const NONHARMFUL_QUERY_STITCHING: &str =
        include_str!("../../assets/prompts/nonharmful_query_stitching.txt");

    /// Generation prompt for templated examples of one harm. Shipped as
    /// reference text; nothing in this crate sends it anywhere.
    pub fn harmful_generation(harm: HarmKind) -> &'static str {
        match harm {
            HarmKind::Hate => include_str!("../../assets/prompts/aart_hate.txt"),
            HarmKind::Toxicity => include_str!("../../assets/prompts/aart_toxicity.txt"),
            HarmKind::Sexual => include_str!("../../assets/prompts/aart_sexual.txt"),
            HarmKind::Violence => include_str!("../../assets/prompts/aart_violence.txt"),
        }
    }

    /// Counterfactual rewrite prompt for the default taxonomy's categories.
    pub fn counterfactual(category: &str) -> Option<&'static str> {
        match category {
            RELIGION => Some(CF_RELIGION),
            RACE_ETHNICITY => Some(CF_RACE_ETHNICITY),
            GENDER_IDENTITY => Some(CF_GENDER_IDENTITY),
            SEXUAL_ORIENTATION => Some(CF_SEXUAL_ORIENTATION),
            _ => None,
        }
    }

    pub fn fill_counterfactual(
        template: &str,
        seed_subgroup: &str,
        seed_sentence: &str,
        counterfactual_subgroup: &str,
    ) -> String {
        template
            .replace("{seed_subgroup}", seed_subgroup)
            .replace("{seed_sentence}", seed_sentence)
            .replace("{counterfactual_subgroup}", counterfactual_subgroup)
    }
}

/// Rewriter that sends the category's few-shot prompt to a model.
pub struct ExternalRewriter<T> {
    transport: T,
    templates: HashMap<String, String>,
}

impl<T: Transport> ExternalRewriter<T> {
    /// Uses the shipped prompts for the default taxonomy.
    pub fn new(transport: T) -> Self {
        let templates = [RELIGION, RACE_ETHNICITY, GENDER_IDENTITY, SEXUAL_ORIENTATION]
            .into_iter()
            .filter_map(|c| prompts::counterfactual(c).map(|t| (c.to_string(), t.to_string())))
            .collect();
        ExternalRewriter {
            transport,
            templates,
        }
    }

    pub fn with_template(mut self, category: &str, template: String) -> Self {
        self.templates.insert(category.to_string(), template);
        self
    }
}

/// The model continues after `<counterfactual sentence>`; keep what precedes
/// the closing tag.
fn extract_sentence(reply: &str) -> &str {
    reply
        .split("</counterfactual sentence>")
        .next()
        .unwrap_or("")
        .trim()
}

impl<T: Transport> Rewriter for ExternalRewriter<T> {
    fn rewrite(&self, request: &RewriteRequest) -> Result<RewriteResult, RewriteError> {
        let template = self
            .templates
            .get(&request.category)
            .ok_or_else(|| RewriteError::NoPrompt(request.category.clone()))?;
        let prompt = prompts::fill_counterfactual(
            template,
            &request.seed_subgroup,
            &request.text,
            &request.target_subgroup,
        );
        let reply = self
            .transport
            .call(&RemoteRequest { prompt })
            .map_err(RewriteError::Transport)?;
        let text = extract_sentence(&reply.text);
        Ok(if text.is_empty() {
            RewriteResult::Rejected {
                rationale: "empty model reply".into(),
            }
        } else {
            RewriteResult::Rewritten {
                text: text.to_string(),
                rationale: "external rewrite".into(),
            }
        })
    }
}

/// Critic that asks a model whether a counterfactual is congruous.
///
/// The template receives `{seed_sentence}` and `{counterfactual_sentence}`;
/// a reply starting with `drop` (any case) drops the item and the rest of
/// the reply is the reason. Anything else keeps it.
pub struct RemoteCritic<T> {
    transport: T,
    template: String,
}

impl<T: Transport> RemoteCritic<T> {
    pub fn new(transport: T, template: String) -> Self {
        RemoteCritic {
            transport,
            template,
        }
    }
}

impl<T: Transport> Critic for RemoteCritic<T> {
    fn judge(&self, original: &Example, counterfactual: &Example) -> Result<Verdict, CriticError> {
        let prompt = self
            .template
            .replace("{seed_sentence}", &original.text)
            .replace("{counterfactual_sentence}", &counterfactual.text);
        let reply = self
            .transport
            .call(&RemoteRequest { prompt })
            .map_err(CriticError)?;
        let text = reply.text.trim();
        if text.len() >= 4 && text[..4].eq_ignore_ascii_case("drop") {
            let reason = text[4..].trim_start_matches([':', ' ']).trim();
            Ok(Verdict::Drop(if reason.is_empty() {
                "flagged by critic".into()
            } else {
                reason.to_string()
            }))
        } else {
            Ok(Verdict::Keep)
        }
    }
}

#[cfg(feature = "remote")]
pub struct HttpTransport {
    endpoint: String,
}

#[cfg(feature = "remote")]
impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTransport {
            endpoint: endpoint.into(),
        }
    }
}

#[cfg(feature = "remote")]
impl Transport for HttpTransport {
    fn call(&self, request: &RemoteRequest) -> Result<RemoteResponse, String> {
        ureq::post(&self.endpoint)
            .send_json(request)
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_json::<RemoteResponse>()
            .map_err(|e| e.to_string())
    }
}
