use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{Dataset, DatasetError, Split};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(DatasetError::Fractions(format!(
                "{parts:?} must be finite and non-negative"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Fractions(format!("{parts:?} sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Assign splits so that every counterfactual set lands in exactly one split.
///
/// Units of assignment are whole cf sets (plus any resampled copies tagged
/// with the set's id) and, for examples without a set, single examples. Units
/// are ordered by key, shuffled with the seeded stream, then cut at
/// `round(train * units)` and `round((train + validation) * units)`.
pub fn split_by_cf_set(
    dataset: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    fractions.validate()?;

    let mut units: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.examples().iter().enumerate() {
        let key = match &e.cf_set_id {
            Some(set) => format!("set:{set}"),
            None => format!("id:{}", e.id),
        };
        units.entry(key).or_default().push(i);
    }

    let mut order: Vec<Vec<usize>> = units.into_values().collect();
    order.shuffle(&mut rng::stream(seed, &["split"], 0));

    let n = order.len();
    let train_end = ((fractions.train * n as f64).round() as usize).min(n);
    let val_end =
        (((fractions.train + fractions.validation) * n as f64).round() as usize).clamp(train_end, n);

    let mut examples = dataset.examples().to_vec();
    for (rank, unit) in order.iter().enumerate() {
        let split = if rank < train_end {
            Split::Train
        } else if rank < val_end {
            Split::Validation
        } else {
            Split::Test
        };
        for &i in unit {
            examples[i].split = split;
        }
    }
    Dataset::new(
        examples,
        dataset.feature_names().to_vec(),
        dataset.taxonomy().clone(),
    )
}
