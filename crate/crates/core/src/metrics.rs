//! Threshold-agnostic fairness metrics and AU-PRC.
//!
//! Every function takes a dataset and a score vector aligned with
//! [`Dataset::examples`]; scores are for one harm.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataset::{Dataset, HarmKind, Label};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("singleton counterfactual set")]
    SingletonSet,
    #[error("no counterfactual sets")]
    NoSets,
    #[error("insufficient slices for {category} ({gt}): need 2, have {found}")]
    InsufficientSlices {
        category: String,
        gt: Label,
        found: usize,
    },
    #[error("AU-PRC undefined: no unsafe labels")]
    NoPositives,
    #[error("score vector has {scores} entries for {expected} examples")]
    LengthMismatch { scores: usize, expected: usize },
    #[error("score {0} is not a number in [0, 1]")]
    InvalidScore(f64),
    #[error("evaluation data differ: {0}")]
    EvalMismatch(String),
}

fn check_scores(scores: &[f64], expected: usize) -> Result<(), MetricsError> {
    if scores.len() != expected {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            expected,
        });
    }
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(&bad) => Err(MetricsError::InvalidScore(bad)),
        None => Ok(()),
    }
}

/// Population variance (divides by n).
pub fn counterfactual_variance(scores: &[f64]) -> Result<f64, MetricsError> {
    if scores.len() < 2 {
        return Err(MetricsError::SingletonSet);
    }
    // Deviations from the first score keep constant sets at exactly zero.
    let n = scores.len() as f64;
    let x0 = scores[0];
    let mean = scores.iter().map(|s| s - x0).sum::<f64>() / n;
    Ok(scores
        .iter()
        .map(|s| (s - x0 - mean) * (s - x0 - mean))
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcvEntry {
    pub acv: f64,
    /// Over sets whose shared label is Safe; `None` when there are none.
    pub acv_safe: Option<f64>,
    pub acv_unsafe: Option<f64>,
    pub n_sets: usize,
    pub n_singletons_excluded: usize,
}

/// Average counterfactual variance over the dataset's cf sets with at least
/// two members.
pub fn acv(dataset: &Dataset, scores: &[f64], harm: HarmKind) -> Result<AcvEntry, MetricsError> {
    check_scores(scores, dataset.len())?;
    let mut total = 0.0;
    let mut by_gt = [(0.0, 0usize); 2];
    let mut n_sets = 0;
    let mut singletons = 0;
    let mut buf = Vec::new();
    for set in dataset.cf_sets() {
        if set.members.len() < 2 {
            singletons += 1;
            continue;
        }
        buf.clear();
        buf.extend(set.members.iter().map(|&m| scores[m]));
        let var = counterfactual_variance(&buf)?;
        total += var;
        n_sets += 1;
        let gt = dataset.examples()[set.members[0]].labels.get(harm);
        let slot = &mut by_gt[gt.is_unsafe() as usize];
        slot.0 += var;
        slot.1 += 1;
    }
    if n_sets == 0 {
        return Err(MetricsError::NoSets);
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    Ok(AcvEntry {
        acv: total / n_sets as f64,
        acv_safe: mean(by_gt[0]),
        acv_unsafe: mean(by_gt[1]),
        n_sets,
        n_singletons_excluded: singletons,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceStat {
    pub mean: f64,
    pub n: usize,
}

/// Mean score per (gt, category, subgroup) for one harm. Slices without
/// examples are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlicedAverages {
    pub by_gt: BTreeMap<Label, BTreeMap<String, BTreeMap<String, SliceStat>>>,
}

impl SlicedAverages {
    pub fn get(&self, gt: Label, category: &str, subgroup: &str) -> Option<SliceStat> {
        self.by_gt.get(&gt)?.get(category)?.get(subgroup).copied()
    }

    pub fn mean(&self, gt: Label, category: &str, subgroup: &str) -> Option<f64> {
        self.get(gt, category, subgroup).map(|s| s.mean)
    }

    /// `(category, subgroup, stat)` for every slice under `gt`, in key order.
    pub fn slices(&self, gt: Label) -> impl Iterator<Item = (&str, &str, SliceStat)> {
        self.by_gt.get(&gt).into_iter().flat_map(|cats| {
            cats.iter().flat_map(|(c, subs)| {
                subs.iter().map(move |(s, stat)| (c.as_str(), s.as_str(), *stat))
            })
        })
    }
}

pub fn sliced_averages(
    dataset: &Dataset,
    scores: &[f64],
    harm: HarmKind,
) -> Result<SlicedAverages, MetricsError> {
    check_scores(scores, dataset.len())?;
    let mut sums: BTreeMap<(Label, &str, &str), (f64, usize)> = BTreeMap::new();
    for (e, &s) in dataset.examples().iter().zip(scores) {
        if let Some(id) = &e.identity {
            let slot = sums
                .entry((e.labels.get(harm), &id.category, &id.subgroup))
                .or_default();
            slot.0 += s;
            slot.1 += 1;
        }
    }
    let mut out = SlicedAverages::default();
    for ((gt, c, s), (sum, n)) in sums {
        out.by_gt
            .entry(gt)
            .or_default()
            .entry(c.to_string())
            .or_default()
            .insert(s.to_string(), SliceStat { mean: sum / n as f64, n });
    }
    Ok(out)
}

/// Largest minus smallest SA among the category's subgroups under `gt`.
pub fn max_sa_gap(sa: &SlicedAverages, gt: Label, category: &str) -> Result<f64, MetricsError> {
    let means: Vec<f64> = sa
        .by_gt
        .get(&gt)
        .and_then(|cats| cats.get(category))
        .map(|subs| subs.values().map(|s| s.mean).collect())
        .unwrap_or_default();
    if means.len() < 2 {
        return Err(MetricsError::InsufficientSlices {
            category: category.to_string(),
            gt,
            found: means.len(),
        });
    }
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Average precision, `sum_n (R_n - R_{n-1}) * P_n`, over descending unique
/// score thresholds. Tied scores enter together.
pub fn au_prc(scores: &[f64], labels: &[Label]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            expected: labels.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(MetricsError::InvalidScore(bad));
    }
    let positives = labels.iter().filter(|l| l.is_unsafe()).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]].is_unsafe() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Per-harm metrics in the report layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmEval {
    pub acv: f64,
    pub acv_safe: Option<f64>,
    pub acv_unsafe: Option<f64>,
    pub n_sets: usize,
    pub n_singletons_excluded: usize,
    pub sa: SlicedAverages,
    pub au_prc_test: f64,
    pub au_prc_cf: f64,
}

/// Metrics for one model on one (test, cf test) pair. ACV and SA are taken
/// on the cf test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_hash: String,
    pub cf_test_hash: String,
    pub harms: BTreeMap<HarmKind, HarmEval>,
}

/// Scores for one dataset, per harm, aligned with its examples.
pub type ScoreTable = BTreeMap<HarmKind, Vec<f64>>;

fn labels_for(dataset: &Dataset, harm: HarmKind) -> Vec<Label> {
    dataset.examples().iter().map(|e| e.labels.get(harm)).collect()
}

pub fn evaluate(
    test: &Dataset,
    test_scores: &ScoreTable,
    cf_test: &Dataset,
    cf_scores: &ScoreTable,
) -> Result<Evaluation, MetricsError> {
    let mut harms = BTreeMap::new();
    for (&harm, cf) in cf_scores {
        let t = test_scores.get(&harm).ok_or_else(|| {
            MetricsError::EvalMismatch(format!("no test scores for {harm}"))
        })?;
        check_scores(t, test.len())?;
        let a = acv(cf_test, cf, harm)?;
        harms.insert(
            harm,
            HarmEval {
                acv: a.acv,
                acv_safe: a.acv_safe,
                acv_unsafe: a.acv_unsafe,
                n_sets: a.n_sets,
                n_singletons_excluded: a.n_singletons_excluded,
                sa: sliced_averages(cf_test, cf, harm)?,
                au_prc_test: au_prc(t, &labels_for(test, harm))?,
                au_prc_cf: au_prc(cf, &labels_for(cf_test, harm))?,
            },
        );
    }
    Ok(Evaluation {
        test_hash: test.content_hash(),
        cf_test_hash: cf_test.content_hash(),
        harms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub au_prc_test: f64,
    pub au_prc_cf: f64,
    pub acv: f64,
    pub acv_safe: Option<f64>,
    pub acv_unsafe: Option<f64>,
}

impl From<&HarmEval> for MetricSummary {
    fn from(h: &HarmEval) -> Self {
        MetricSummary {
            au_prc_test: h.au_prc_test,
            au_prc_cf: h.au_prc_cf,
            acv: h.acv,
            acv_safe: h.acv_safe,
            acv_unsafe: h.acv_unsafe,
        }
    }
}

/// Percentage deltas; `None` where the baseline is 0 or missing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub au_prc_test: Option<f64>,
    pub au_prc_cf: Option<f64>,
    pub acv: Option<f64>,
    pub acv_safe: Option<f64>,
    pub acv_unsafe: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmComparison {
    pub baseline: MetricSummary,
    pub remediated: MetricSummary,
    pub pct_delta: MetricDeltas,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsComparison {
    pub test_hash: String,
    pub cf_test_hash: String,
    pub harms: BTreeMap<HarmKind, HarmComparison>,
}

/// `(new - old) / old * 100`, or `None` when `old` is 0.
pub fn pct_delta(old: f64, new: f64) -> Option<f64> {
    (old != 0.0).then(|| (new - old) / old * 100.0)
}

fn pct_delta_opt(old: Option<f64>, new: Option<f64>) -> Option<f64> {
    pct_delta(old?, new?)
}

pub fn compare(baseline: &Evaluation, remediated: &Evaluation) -> Result<MetricsComparison, MetricsError> {
    if baseline.test_hash != remediated.test_hash || baseline.cf_test_hash != remediated.cf_test_hash {
        return Err(MetricsError::EvalMismatch("test data hashes differ".into()));
    }
    if !baseline.harms.keys().eq(remediated.harms.keys()) {
        return Err(MetricsError::EvalMismatch("evaluated harms differ".into()));
    }
    let harms = baseline
        .harms
        .iter()
        .map(|(&harm, b)| {
            let b = MetricSummary::from(b);
            let r = MetricSummary::from(&remediated.harms[&harm]);
            let pct_delta = MetricDeltas {
                au_prc_test: pct_delta(b.au_prc_test, r.au_prc_test),
                au_prc_cf: pct_delta(b.au_prc_cf, r.au_prc_cf),
                acv: pct_delta(b.acv, r.acv),
                acv_safe: pct_delta_opt(b.acv_safe, r.acv_safe),
                acv_unsafe: pct_delta_opt(b.acv_unsafe, r.acv_unsafe),
            };
            (
                harm,
                HarmComparison {
                    baseline: b,
                    remediated: r,
                    pct_delta,
                },
            )
        })
        .collect();
    Ok(MetricsComparison {
        test_hash: baseline.test_hash.clone(),
        cf_test_hash: baseline.cf_test_hash.clone(),
        harms,
    })
}
