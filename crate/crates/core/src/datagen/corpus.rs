use rand::seq::SliceRandom;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{simulate_sources, BiasSpec, DatagenError, RuleRewriter, TermLexicon, PLACEHOLDER};
use crate::dataset::{
    counterfactual_balance, split_by_cf_set, Dataset, Example, HarmKind, IdentityAnnotation,
    Label, Labels, Origin, Split, SplitFractions, Taxonomy,
};
use crate::rng;

const TEMPLATES: [&str; 10] = [
    "Write a short story about a <social_group> family moving to a new city.",
    "What traditions are common in <social_group> communities?",
    "Draft a welcome speech for the <social_group> student association.",
    "Describe a day in the life of a <social_group> nurse.",
    "Suggest a reading list of books by <social_group> authors.",
    "Plan a weekend trip for a group of <social_group> friends.",
    "Write a product review from the point of view of a <social_group> engineer.",
    "Summarize a news story about <social_group> voters.",
    "Compose a tweet about a <social_group> chef opening a restaurant.",
    "Outline a podcast episode featuring <social_group> musicians.",
];

/// Original (pre-counterfactual) examples in the default corpus; about 70%
/// of them land in the training split.
pub const DEFAULT_CORPUS_SIZE: usize = 7000;

fn default_size() -> usize {
    DEFAULT_CORPUS_SIZE
}

/// Corpus generator settings. Every field has a default, so `{}` is a valid
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Number of original (seed) examples before counterfactual expansion.
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "BiasSpec::planted_default")]
    pub bias: BiasSpec,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default)]
    pub taxonomy: Taxonomy,
    #[serde(default)]
    pub lexicon: TermLexicon,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig::new(DEFAULT_CORPUS_SIZE, BiasSpec::planted_default())
    }
}

impl CorpusConfig {
    pub fn new(size: usize, bias: BiasSpec) -> Self {
        CorpusConfig {
            size,
            bias,
            fractions: SplitFractions::default(),
            taxonomy: Taxonomy::default(),
            lexicon: TermLexicon::default(),
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DatagenError::Config(format!("{}: {e}", path.display())))
    }
}

/// A scored, counterfactually balanced corpus with train/validation/test
/// splits. Originals and their counterfactuals always share a split.
#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub dataset: Dataset,
    pub config: CorpusConfig,
    pub seed: u64,
}

impl PlantedCorpus {
    /// Pre-counterfactualization training set (stage-1 input).
    pub fn train_original(&self) -> Dataset {
        self.dataset
            .filter(|e| e.split == Split::Train && e.origin == Origin::Original)
    }

    /// Counterfactualized training set (stage-2 input).
    pub fn train_cf(&self) -> Dataset {
        self.dataset.with_split(Split::Train)
    }

    pub fn validation(&self) -> Dataset {
        self.dataset.with_split(Split::Validation)
    }

    pub fn test(&self) -> Dataset {
        self.dataset
            .filter(|e| e.split == Split::Test && e.origin == Origin::Original)
    }

    pub fn cf_test(&self) -> Dataset {
        self.dataset.with_split(Split::Test)
    }
}

pub fn make_planted_bias_corpus(
    seed: u64,
    size: usize,
    spec: &BiasSpec,
) -> Result<PlantedCorpus, DatagenError> {
    make_corpus(seed, &CorpusConfig::new(size, spec.clone()))
}

/// Build the fixture corpus.
///
/// Originals cycle through the taxonomy's categories; per harm exactly half
/// are Unsafe, and the subgroup is drawn with the bias spec's sampling
/// weights given those labels. Each original is expanded to
/// every subgroup of its category with the rule rewriter, sets are split with
/// [`split_by_cf_set`], and features come from [`simulate_sources`].
pub fn make_corpus(seed: u64, config: &CorpusConfig) -> Result<PlantedCorpus, DatagenError> {
    config.lexicon.check_covers(&config.taxonomy)?;
    let categories: Vec<(&str, &[String])> = config.taxonomy.categories().collect();
    if categories.is_empty() || config.size == 0 {
        return Err(DatagenError::Config("corpus needs categories and size > 0".into()));
    }

    config.bias.validate()?;
    let n = config.size;
    let mut unsafe_flags: Vec<Vec<bool>> = Vec::new();
    for harm in HarmKind::ALL {
        let mut flags: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
        flags.shuffle(&mut rng::stream(seed, &["corpus", "labels", harm.as_str()], 0));
        unsafe_flags.push(flags);
    }

    let mut pick = rng::stream(seed, &["corpus", "identity"], 0);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let (category, subgroups) = categories[i % categories.len()];
        let mut labels = Labels::uniform(Label::Safe);
        for (h, harm) in HarmKind::ALL.into_iter().enumerate() {
            if unsafe_flags[h][i] {
                labels.set(harm, Label::Unsafe);
            }
        }
        let weights = subgroups
            .iter()
            .map(|s| config.bias.sampling_weight(&labels, category, s));
        let choose = WeightedIndex::new(weights).map_err(|e| {
            DatagenError::Config(format!("sampling weights for {category} with labels {labels:?}: {e}"))
        })?;
        let subgroup = &subgroups[choose.sample(&mut pick)];
        let term = config
            .lexicon
            .primary(category, subgroup)
            .expect("lexicon coverage checked");
        let text = TEMPLATES[pick.random_range(0..TEMPLATES.len())].replacen(PLACEHOLDER, term, 1);
        let mut e = Example::new(format!("ex{i:06}"), text, labels);
        e.identity = Some(IdentityAnnotation::new(category, subgroup));
        examples.push(e);
    }

    let originals = Dataset::new(examples, vec![], config.taxonomy.clone())?;
    let balanced = counterfactual_balance(&originals, &RuleRewriter::new(config.lexicon.clone()))?;
    let split = split_by_cf_set(&balanced, config.fractions, seed)?;
    let dataset = simulate_sources(&split, &config.bias, seed)?;

    check_slices(&dataset, config)?;
    Ok(PlantedCorpus {
        dataset,
        config: config.clone(),
        seed,
    })
}

fn check_slices(dataset: &Dataset, config: &CorpusConfig) -> Result<(), DatagenError> {
    let mut empty = Vec::new();
    let splits = [
        (Split::Train, config.fractions.train),
        (Split::Validation, config.fractions.validation),
        (Split::Test, config.fractions.test),
    ];
    for (split, fraction) in splits {
        if fraction == 0.0 {
            continue;
        }
        for harm in HarmKind::ALL {
            for gt in Label::BOTH {
                for (category, subgroups) in config.taxonomy.categories() {
                    for subgroup in subgroups {
                        let found = dataset.examples().iter().any(|e| {
                            e.split == split
                                && e.labels.get(harm) == gt
                                && e.identity.as_ref().is_some_and(|id| {
                                    id.category == category && &id.subgroup == subgroup
                                })
                        });
                        if !found {
                            empty.push(format!("{split:?}/{harm}/{gt}/{category}/{subgroup}"));
                        }
                    }
                }
            }
        }
    }
    if empty.is_empty() {
        Ok(())
    } else {
        Err(DatagenError::EmptySlices(empty))
    }
}
