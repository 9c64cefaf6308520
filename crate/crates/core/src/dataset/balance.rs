use std::collections::{BTreeSet, HashMap};

use super::{Dataset, DatasetError, Example, IdentityAnnotation, Origin};
use crate::datagen::{RewriteRequest, RewriteResult, Rewriter};

/// Augment every identity-bearing original with one counterfactual per other
/// subgroup of its category.
///
/// New examples share the seed's `cf_set_id` (a fresh `cf-<id>` is assigned
/// when the seed has none), copy its labels, split and weight, and carry
/// `features: None` until a scorer fills them in. Subgroups already present
/// in a set are not added again, so the operation is idempotent. Rewriter
/// rejections and failures skip that one counterfactual with a warning.
pub fn counterfactual_balance(
    dataset: &Dataset,
    rewriter: &dyn Rewriter,
) -> Result<Dataset, DatasetError> {
    let taxonomy = dataset.taxonomy();

    let mut present: HashMap<String, BTreeSet<String>> = HashMap::new();
    for e in dataset.examples().iter().filter(|e| !e.is_copy()) {
        if let (Some(set), Some(identity)) = (&e.cf_set_id, &e.identity) {
            present
                .entry(set.clone())
                .or_default()
                .insert(identity.subgroup.clone());
        }
    }

    let mut out = Vec::with_capacity(dataset.len());
    for e in dataset.examples() {
        let mut seed = e.clone();
        let identity = match (&e.identity, e.origin, e.is_copy()) {
            (Some(identity), Origin::Original, false) => identity.clone(),
            _ => {
                out.push(seed);
                continue;
            }
        };
        let set_id = seed
            .cf_set_id
            .get_or_insert_with(|| format!("cf-{}", e.id))
            .clone();
        let seen = present.entry(set_id.clone()).or_default();
        seen.insert(identity.subgroup.clone());
        out.push(seed);

        let Some(subgroups) = taxonomy.subgroups(&identity.category) else {
            continue;
        };
        for target in subgroups {
            if seen.contains(target) {
                continue;
            }
            let request = RewriteRequest {
                text: e.text.clone(),
                category: identity.category.clone(),
                seed_subgroup: identity.subgroup.clone(),
                target_subgroup: target.clone(),
            };
            match rewriter.rewrite(&request) {
                Ok(RewriteResult::Rewritten { text, .. }) => {
                    seen.insert(target.clone());
                    out.push(Example {
                        id: format!("{}~{}", e.id, target),
                        text,
                        cf_set_id: Some(set_id.clone()),
                        identity: Some(IdentityAnnotation::new(&identity.category, target)),
                        labels: e.labels,
                        features: None,
                        weight: e.weight,
                        split: e.split,
                        origin: Origin::Counterfactual,
                        source_id: None,
                    });
                }
                Ok(RewriteResult::Rejected { rationale }) => {
                    log::warn!(
                        "skipping counterfactual {} -> {target}: rejected ({rationale})",
                        e.id
                    );
                }
                Err(err) => {
                    log::warn!("skipping counterfactual {} -> {target}: {err}", e.id);
                }
            }
        }
    }

    Dataset::new(out, dataset.feature_names().to_vec(), taxonomy.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{RewriteError, RuleRewriter, TermLexicon};
    use crate::dataset::{Label, Labels, Taxonomy, RELIGION, SEXUAL_ORIENTATION};

    fn seeded(id: &str, text: &str, category: &str, subgroup: &str) -> Example {
        let mut e = Example::new(id, text, Labels::uniform(Label::Safe));
        e.labels.hate = Label::Unsafe;
        e.identity = Some(IdentityAnnotation::new(category, subgroup));
        e
    }

    fn balance(examples: Vec<Example>) -> Dataset {
        let ds = Dataset::new(examples, vec![], Taxonomy::default()).unwrap();
        counterfactual_balance(&ds, &RuleRewriter::new(TermLexicon::default())).unwrap()
    }

    #[test]
    fn two_subgroup_category_gains_one() {
        let out = balance(vec![seeded(
            "a",
            "my sister is gay",
            SEXUAL_ORIENTATION,
            "NonHeterosexual",
        )]);
        assert_eq!(out.len(), 2);
        let cf = &out.examples()[1];
        assert_eq!(cf.text, "my sister is straight");
        assert_eq!(cf.origin, Origin::Counterfactual);
        assert_eq!(cf.cf_set_id.as_deref(), Some("cf-a"));
        assert_eq!(cf.features, None);
    }

    #[test]
    fn unannotated_example_unchanged() {
        let plain = Example::new("p", "hello", Labels::uniform(Label::Safe));
        let out = balance(vec![plain.clone()]);
        assert_eq!(out.examples(), &[plain]);
    }

    #[test]
    fn religion_gains_six_with_same_labels() {
        let taxonomy = Taxonomy::default();
        let expected = taxonomy.subgroups(RELIGION).unwrap().len() - 1;
        let out = balance(vec![seeded("r", "A Jewish holiday", RELIGION, "Judaism")]);
        assert_eq!(out.len() - 1, expected);
        assert_eq!(expected, 6);
        let labels = out.examples()[0].labels;
        assert!(out.examples().iter().all(|e| e.labels == labels));
        assert_eq!(out.cf_sets().len(), 1);
        assert_eq!(out.cf_sets()[0].members.len(), 7);
    }

    #[test]
    fn idempotent() {
        let once = balance(vec![seeded("r", "A Jewish holiday", RELIGION, "Judaism")]);
        let twice =
            counterfactual_balance(&once, &RuleRewriter::new(TermLexicon::default())).unwrap();
        assert_eq!(once, twice);
    }

    struct Failing;
    impl Rewriter for Failing {
        fn rewrite(&self, _: &RewriteRequest) -> Result<RewriteResult, RewriteError> {
            Err(RewriteError::Transport("down".into()))
        }
    }

    #[test]
    fn rewriter_failure_skips_not_fatal() {
        let ds = Dataset::new(
            vec![seeded("a", "gay", SEXUAL_ORIENTATION, "NonHeterosexual")],
            vec![],
            Taxonomy::default(),
        )
        .unwrap();
        let out = counterfactual_balance(&ds, &Failing).unwrap();
        assert_eq!(out.len(), 1);
    }
}
