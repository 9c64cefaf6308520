//! Synthetic data: counterfactual rewriting, template expansion, critic
//! filtering and the planted-bias fixture corpus.

mod corpus;
mod critic;
mod lexicon;
pub mod remote;
mod rewrite;
mod simulate;
mod template;

pub use corpus::{make_corpus, make_planted_bias_corpus, CorpusConfig, PlantedCorpus, DEFAULT_CORPUS_SIZE};
pub use critic::{apply_critique, critique_filter, AlwaysDrop, AlwaysKeep, Critic, CriticError, DropRecord, Verdict};
pub use lexicon::TermLexicon;
pub use remote::{ExternalRewriter, RemoteCritic, RemoteRequest, RemoteResponse, Transport};
pub use rewrite::{rule_rewrite, RewriteError, RewriteRequest, RewriteResult, Rewriter, RuleRewriter};
pub use simulate::{
    simulate_sources, BiasOffset, BiasSpec, FeatureSpec, SamplingSkew, PLANTED_SAFE_FEATURE,
    PLANTED_UNSAFE_FEATURE,
};
pub use template::{expand_template, template_examples, TemplateExpansion, PLACEHOLDER};

use crate::dataset::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("datagen config: {0}")]
    Config(String),
    #[error("template: {0}")]
    Template(String),
    #[error("corpus too small, empty slices: {}", summarize(.0))]
    EmptySlices(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(items: &[String]) -> String {
    const SHOWN: usize = 5;
    let head = items.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if items.len() > SHOWN {
        format!("{head} and {} more", items.len() - SHOWN)
    } else {
        head
    }
}
