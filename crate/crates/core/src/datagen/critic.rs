use serde::Serialize;
use std::collections::HashMap;

use crate::dataset::{Dataset, DatasetError, Example, Origin};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop(String),
}

#[derive(Debug, thiserror::Error)]
#[error("critic transport: {0}")]
pub struct CriticError(pub String);

/// Judges whether a counterfactual still fits its original's context.
pub trait Critic: Sync {
    fn judge(&self, original: &Example, counterfactual: &Example) -> Result<Verdict, CriticError>;
}

/// Keeps everything. The default critic.
pub struct AlwaysKeep;

impl Critic for AlwaysKeep {
    fn judge(&self, _: &Example, _: &Example) -> Result<Verdict, CriticError> {
        Ok(Verdict::Keep)
    }
}

pub struct AlwaysDrop(pub String);

impl Critic for AlwaysDrop {
    fn judge(&self, _: &Example, _: &Example) -> Result<Verdict, CriticError> {
        Ok(Verdict::Drop(self.0.clone()))
    }
}

/// One dropped counterfactual.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub id: String,
    pub original_id: String,
    pub reason: String,
}

/// Ask `critic` about one pair. Transport errors keep the item.
pub fn critique_filter(original: &Example, counterfactual: &Example, critic: &dyn Critic) -> Verdict {
    match critic.judge(original, counterfactual) {
        Ok(v) => v,
        Err(err) => {
            log::warn!("keeping {} after critic failure: {err}", counterfactual.id);
            Verdict::Keep
        }
    }
}

/// Run the critic over every counterfactual in `dataset` against the
/// original of its set, removing dropped ones. Sets without an original
/// member are left alone.
pub fn apply_critique(
    dataset: &Dataset,
    critic: &dyn Critic,
) -> Result<(Dataset, Vec<DropRecord>), DatasetError> {
    let mut original_of: HashMap<&str, &Example> = HashMap::new();
    for set in dataset.cf_sets() {
        if let Some(&m) = set
            .members
            .iter()
            .find(|&&m| dataset.examples()[m].origin == Origin::Original)
        {
            original_of.insert(set.cf_set_id.as_str(), &dataset.examples()[m]);
        }
    }

    let mut drops = Vec::new();
    let mut kept = Vec::with_capacity(dataset.len());
    for e in dataset.examples() {
        let original = match (e.origin, e.is_copy(), e.cf_set_id.as_deref()) {
            (Origin::Counterfactual, false, Some(set)) => original_of.get(set).copied(),
            _ => None,
        };
        match original.map(|o| (o, critique_filter(o, e, critic))) {
            Some((o, Verdict::Drop(reason))) => {
                log::info!("critic dropped {}: {reason}", e.id);
                drops.push(DropRecord {
                    id: e.id.clone(),
                    original_id: o.id.clone(),
                    reason,
                });
            }
            _ => kept.push(e.clone()),
        }
    }
    let out = Dataset::new(
        kept,
        dataset.feature_names().to_vec(),
        dataset.taxonomy().clone(),
    )?;
    Ok((out, drops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{RuleRewriter, TermLexicon};
    use crate::dataset::{
        counterfactual_balance, IdentityAnnotation, Label, Labels, Taxonomy, RACE_ETHNICITY,
    };

    /// `n` seeds over Race/Ethnicity, each expanding to six members.
    fn balanced(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                let mut e = Example::new(format!("e{i}"), "a Black author", Labels::uniform(Label::Safe));
                e.identity = Some(IdentityAnnotation::new(RACE_ETHNICITY, "Black"));
                e
            })
            .collect();
        let ds = Dataset::new(examples, vec![], Taxonomy::default()).unwrap();
        counterfactual_balance(&ds, &RuleRewriter::new(TermLexicon::default())).unwrap()
    }

    #[test]
    fn always_keep_is_identity() {
        let ds = balanced(3);
        let (out, drops) = apply_critique(&ds, &AlwaysKeep).unwrap();
        assert_eq!(out, ds);
        assert!(drops.is_empty());
    }

    #[test]
    fn always_drop_removes_every_counterfactual() {
        let ds = balanced(3200);
        let n_cf = ds
            .examples()
            .iter()
            .filter(|e| e.origin == Origin::Counterfactual)
            .count();
        assert_eq!(n_cf, 16_000);
        let (out, drops) = apply_critique(&ds, &AlwaysDrop("incongruous".into())).unwrap();
        assert_eq!(drops.len(), 16_000);
        assert!(out.examples().iter().all(|e| e.origin == Origin::Original));
    }

    struct Broken;
    impl Critic for Broken {
        fn judge(&self, _: &Example, _: &Example) -> Result<Verdict, CriticError> {
            Err(CriticError("timeout".into()))
        }
    }

    #[test]
    fn transport_failure_fails_open() {
        let ds = balanced(2);
        let (out, drops) = apply_critique(&ds, &Broken).unwrap();
        assert_eq!(out.len(), ds.len());
        assert!(drops.is_empty());
    }
}
