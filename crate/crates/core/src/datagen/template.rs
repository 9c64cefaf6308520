use super::{DatagenError, TermLexicon};
use crate::dataset::{Example, IdentityAnnotation, Labels, Origin, Taxonomy};

pub const PLACEHOLDER: &str = "<social_group>";

/// Prompts produced from one template; together they form one cf set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateExpansion {
    pub cf_set_id: String,
    pub prompts: Vec<String>,
}

/// Substitute each term into the template's single `<social_group>` slot.
pub fn expand_template(
    template: &str,
    terms: &[&str],
    cf_set_id: &str,
) -> Result<TemplateExpansion, DatagenError> {
    match template.matches(PLACEHOLDER).count() {
        1 => {}
        0 => {
            return Err(DatagenError::Template(format!(
                "template has no {PLACEHOLDER} placeholder"
            )))
        }
        n => {
            return Err(DatagenError::Template(format!(
                "template repeats {PLACEHOLDER} {n} times"
            )))
        }
    }
    Ok(TemplateExpansion {
        cf_set_id: cf_set_id.to_string(),
        prompts: terms
            .iter()
            .map(|t| template.replacen(PLACEHOLDER, t, 1))
            .collect(),
    })
}

/// Expand a template over every subgroup of `category` (primary lexicon
/// terms) into annotated examples of one cf set. All are `Original`: the
/// template, not a seed example, is the common source.
pub fn template_examples(
    template: &str,
    category: &str,
    taxonomy: &Taxonomy,
    lexicon: &TermLexicon,
    labels: Labels,
    cf_set_id: &str,
) -> Result<Vec<Example>, DatagenError> {
    let subgroups = taxonomy
        .subgroups(category)
        .ok_or_else(|| DatagenError::Config(format!("unknown category {category:?}")))?;
    let terms = subgroups
        .iter()
        .map(|s| {
            lexicon
                .primary(category, s)
                .ok_or_else(|| DatagenError::Config(format!("no term for {category}/{s}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let expansion = expand_template(template, &terms, cf_set_id)?;
    Ok(subgroups
        .iter()
        .zip(expansion.prompts)
        .map(|(s, text)| {
            let mut e = Example::new(format!("{cf_set_id}~{s}"), text, labels);
            e.cf_set_id = Some(cf_set_id.to_string());
            e.identity = Some(IdentityAnnotation::new(category, s));
            e.origin = Origin::Original;
            e
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Label, SEXUAL_ORIENTATION};

    #[test]
    fn three_terms_three_prompts() {
        let out = expand_template(
            "what is a good <social_group> restaurant?",
            &["chinese", "indian", "italian"],
            "t1",
        )
        .unwrap();
        assert_eq!(out.prompts.len(), 3);
        assert_eq!(out.prompts[1], "what is a good indian restaurant?");
        assert_eq!(out.cf_set_id, "t1");
    }

    #[test]
    fn placeholder_must_appear_once() {
        assert!(expand_template("no slot", &["a"], "t").is_err());
        assert!(expand_template("<social_group> and <social_group>", &["a"], "t").is_err());
    }

    #[test]
    fn sexual_orientation_gives_two_examples_in_one_set() {
        let examples = template_examples(
            "Write a poem celebrating <social_group> couples.",
            SEXUAL_ORIENTATION,
            &Taxonomy::default(),
            &TermLexicon::default(),
            Labels::uniform(Label::Safe),
            "tmpl-0",
        )
        .unwrap();
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].text, "Write a poem celebrating straight couples.");
        let ds = Dataset::new(examples, vec![], Taxonomy::default()).unwrap();
        assert_eq!(ds.cf_sets().len(), 1);
    }

    #[test]
    fn outputs_differ_only_at_placeholder() {
        let template = "start <social_group> end";
        let out = expand_template(template, &["x", "yy", ""], "t").unwrap();
        for (p, t) in out.prompts.iter().zip(["x", "yy", ""]) {
            assert!(p.starts_with("start ") && p.ends_with(" end"));
            assert_eq!(&p["start ".len()..p.len() - " end".len()], t);
        }
    }
}
