//! Fair data reweighting: resample under-performing identity slices of the
//! training set and attach a weight to the sampled copies.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::dataset::{Dataset, DatasetError, Example, HarmKind, Label};
use crate::metrics::SlicedAverages;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum FdwError {
    #[error("no sliced averages for {0} examples")]
    EmptySlices(Label),
    #[error("invalid fdw parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    /// Weight given to every sampled copy.
    pub lambda: f64,
    /// Softmax sharpness over slice losses.
    pub beta: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            lambda: 1.0,
            beta: 50.0,
        }
    }
}

/// `{"hate": {"safe": {"lambda": .., "beta": ..}, "unsafe": {..}}, ..}`.
/// Arms missing from the file take [`ArmParams::default`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FdwConfig {
    pub harms: BTreeMap<HarmKind, BTreeMap<Label, ArmParams>>,
}

impl FdwConfig {
    /// The same parameters for every harm and arm.
    pub fn uniform(params: ArmParams) -> Self {
        let arms: BTreeMap<Label, ArmParams> = Label::BOTH.into_iter().map(|gt| (gt, params)).collect();
        FdwConfig {
            harms: HarmKind::ALL.into_iter().map(|h| (h, arms.clone())).collect(),
        }
    }

    pub fn params(&self, harm: HarmKind, gt: Label) -> ArmParams {
        self.harms
            .get(&harm)
            .and_then(|arms| arms.get(&gt))
            .copied()
            .unwrap_or_default()
    }

    pub fn set(&mut self, harm: HarmKind, gt: Label, params: ArmParams) {
        self.harms.entry(harm).or_default().insert(gt, params);
    }

    pub fn validate(&self) -> Result<(), FdwError> {
        for (harm, arms) in &self.harms {
            for (gt, p) in arms {
                for (name, v) in [("lambda", p.lambda), ("beta", p.beta)] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(FdwError::InvalidParam(format!(
                            "{harm}.{gt}.{name} = {v}, must be finite and >= 0"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub category: String,
    pub subgroup: String,
}

impl SliceKey {
    pub fn new(category: impl Into<String>, subgroup: impl Into<String>) -> Self {
        SliceKey {
            category: category.into(),
            subgroup: subgroup.into(),
        }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.category, self.subgroup)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceLoss {
    pub slice: SliceKey,
    pub gt: Label,
    pub loss: f64,
}

/// Safe slices lose their mean score, Unsafe slices one minus it.
pub fn slice_losses(sa: &SlicedAverages, gt: Label) -> Result<Vec<SliceLoss>, FdwError> {
    let losses: Vec<SliceLoss> = sa
        .slices(gt)
        .map(|(c, s, stat)| SliceLoss {
            slice: SliceKey::new(c, s),
            gt,
            loss: match gt {
                Label::Safe => stat.mean,
                Label::Unsafe => 1.0 - stat.mean,
            },
        })
        .collect();
    if losses.is_empty() {
        return Err(FdwError::EmptySlices(gt));
    }
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    pub slices: Vec<SliceKey>,
    pub p: Vec<f64>,
}

impl SamplingDistribution {
    pub fn prob(&self, slice: &SliceKey) -> Option<f64> {
        self.slices.iter().position(|s| s == slice).map(|i| self.p[i])
    }
}

/// `p_i = exp(beta * L_i - m) / sum_j exp(beta * L_j - m)`, `m = max beta * L`.
pub fn sampling_distribution(losses: &[SliceLoss], beta: f64) -> Result<SamplingDistribution, FdwError> {
    if losses.is_empty() {
        return Err(FdwError::InvalidParam("no slices to sample from".into()));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(FdwError::InvalidParam(format!("beta = {beta}")));
    }
    let logits: Vec<f64> = losses.iter().map(|l| beta * l.loss).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(SamplingDistribution {
        slices: losses.iter().map(|l| l.slice.clone()).collect(),
        p: exps.iter().map(|e| e / z).collect(),
    })
}

/// One sampled copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub arm: Label,
    pub slice: SliceKey,
    pub source_id: String,
    pub new_id: String,
}

#[derive(Clone, Debug)]
pub struct ResampleOutput {
    /// The input examples followed by the Safe copies, then the Unsafe copies.
    pub dataset: Dataset,
    pub draws: Vec<DrawRecord>,
    pub distributions: BTreeMap<Label, SamplingDistribution>,
    /// Arms that had nothing to sample from.
    pub skipped: Vec<Label>,
}

/// Draw `n` slice indices from `dist` with `rng`.
pub fn draw_slices<R: Rng>(dist: &SamplingDistribution, n: usize, rng: &mut R) -> Vec<usize> {
    let index = WeightedIndex::new(&dist.p).expect("softmax weights are positive and finite");
    (0..n).map(|_| index.sample(rng)).collect()
}

/// Resample `train` for one harm.
///
/// Each arm draws `|train|` copies: a slice by the softmax over the
/// baseline's slice losses, then an example uniformly among that slice's
/// examples with the arm's label. Slices with no such example are left out
/// of the softmax. Copies get id `{source}#fdw-{harm}-{arm}-{n}`, weight
/// lambda and a `source_id` back-reference.
pub fn resample(
    train: &Dataset,
    harm: HarmKind,
    sa_baseline: &SlicedAverages,
    config: &FdwConfig,
    seed: u64,
) -> Result<ResampleOutput, FdwError> {
    config.validate()?;
    let n = train.len();
    let mut examples: Vec<Example> = train.examples().to_vec();
    let mut draws = Vec::new();
    let mut distributions = BTreeMap::new();
    let mut skipped = Vec::new();

    for gt in Label::BOTH {
        let params = config.params(harm, gt);
        let mut members: BTreeMap<SliceKey, Vec<usize>> = BTreeMap::new();
        for (i, e) in train.examples().iter().enumerate() {
            if let (Some(id), true) = (&e.identity, e.labels.get(harm) == gt) {
                members
                    .entry(SliceKey::new(&id.category, &id.subgroup))
                    .or_default()
                    .push(i);
            }
        }
        let losses: Vec<SliceLoss> = match slice_losses(sa_baseline, gt) {
            Ok(l) => l.into_iter().filter(|l| members.contains_key(&l.slice)).collect(),
            Err(_) => Vec::new(),
        };
        if losses.is_empty() {
            log::warn!("fdw {harm}/{gt}: no populated slices, arm skipped");
            skipped.push(gt);
            continue;
        }
        for key in members.keys() {
            if !losses.iter().any(|l| &l.slice == key) {
                log::warn!("fdw {harm}/{gt}: slice {key} has no baseline SA and is not sampled");
            }
        }

        let dist = sampling_distribution(&losses, params.beta)?;
        let mut rng = rng::stream(seed, &["fdw", harm.as_str(), gt.as_str()], 0);
        let index = WeightedIndex::new(&dist.p).expect("softmax weights are positive and finite");
        for k in 0..n {
            let slice = &dist.slices[index.sample(&mut rng)];
            let pool = &members[slice];
            let src = &train.examples()[pool[rng.random_range(0..pool.len())]];
            let new_id = format!("{}#fdw-{harm}-{gt}-{k}", src.id);
            draws.push(DrawRecord {
                arm: gt,
                slice: slice.clone(),
                source_id: src.id.clone(),
                new_id: new_id.clone(),
            });
            examples.push(Example {
                id: new_id,
                weight: params.lambda,
                source_id: Some(src.id.clone()),
                ..src.clone()
            });
        }
        distributions.insert(gt, dist);
    }

    let dataset = Dataset::new(examples, train.feature_names().to_vec(), train.taxonomy().clone())?;
    Ok(ResampleOutput {
        dataset,
        draws,
        distributions,
        skipped,
    })
}

/// Provenance log, one JSON object per draw.
pub fn draws_to_jsonl(draws: &[DrawRecord]) -> String {
    let mut out = String::new();
    for d in draws {
        out.push_str(&serde_json::to_string(d).expect("draw records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdentityAnnotation, Labels, Taxonomy, RELIGION};
    use crate::metrics::{sliced_averages, SliceStat};
    use proptest::prelude::*;

    fn loss(sub: &str, l: f64) -> SliceLoss {
        SliceLoss {
            slice: SliceKey::new(RELIGION, sub),
            gt: Label::Safe,
            loss: l,
        }
    }

    #[test]
    fn losses_follow_gt() {
        let mut sa = SlicedAverages::default();
        let rel = |sa: &mut SlicedAverages, gt, sub: &str, mean| {
            sa.by_gt
                .entry(gt)
                .or_default()
                .entry(RELIGION.to_string())
                .or_default()
                .insert(sub.to_string(), SliceStat { mean, n: 1 });
        };
        rel(&mut sa, Label::Safe, "Islam", 0.3);
        rel(&mut sa, Label::Unsafe, "Islam", 1.0);
        rel(&mut sa, Label::Unsafe, "Judaism", 0.2);
        assert_eq!(slice_losses(&sa, Label::Safe).unwrap()[0].loss, 0.3);
        let u = slice_losses(&sa, Label::Unsafe).unwrap();
        assert_eq!(u[0].loss, 0.0);
        assert!((u[1].loss - 0.8).abs() < 1e-12);
        assert!(slice_losses(&SlicedAverages::default(), Label::Safe).is_err());
    }

    #[test]
    fn softmax_examples() {
        let four: Vec<SliceLoss> = ["a", "b", "c", "d"].iter().zip([0.1, 0.5, 0.9, 0.2]).map(|(s, l)| loss(s, l)).collect();
        assert!(sampling_distribution(&four, 0.0).unwrap().p.iter().all(|&p| p == 0.25));

        let two = [loss("a", 0.0), loss("b", 1.0)];
        let d = sampling_distribution(&two, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((d.p[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((d.p[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((d.p[0] - 0.2689).abs() < 1e-4);

        let sharp = sampling_distribution(&four, 1e4).unwrap();
        assert!(sharp.p[2] > 1.0 - 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            ls in prop::collection::vec(0.0f64..=1.0, 1..10),
            beta in 0.0f64..500.0,
            c in -1.0f64..1.0,
        ) {
            let a: Vec<SliceLoss> = ls.iter().enumerate().map(|(i, &l)| loss(&i.to_string(), l)).collect();
            let b: Vec<SliceLoss> = ls.iter().enumerate().map(|(i, &l)| loss(&i.to_string(), l + c)).collect();
            let pa = sampling_distribution(&a, beta).unwrap().p;
            let pb = sampling_distribution(&b, beta).unwrap().p;
            prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn argmax_probability_grows_with_beta(
            ls in prop::collection::vec(0.0f64..=1.0, 2..10),
            b1 in 0.0f64..100.0,
            db in 0.0f64..100.0,
        ) {
            let a: Vec<SliceLoss> = ls.iter().enumerate().map(|(i, &l)| loss(&i.to_string(), l)).collect();
            let arg = (0..ls.len()).max_by(|&i, &j| ls[i].total_cmp(&ls[j])).unwrap();
            let p1 = sampling_distribution(&a, b1).unwrap().p[arg];
            let p2 = sampling_distribution(&a, b1 + db).unwrap().p[arg];
            prop_assert!(p2 >= p1 - 1e-12);
        }
    }

    fn train_set() -> Dataset {
        let subs = ["Islam", "Judaism", "Hinduism"];
        let mut examples = Vec::new();
        for i in 0..30 {
            let gt = if i % 2 == 0 { Label::Safe } else { Label::Unsafe };
            let mut e = Example::new(format!("t{i}"), "x", Labels::uniform(gt));
            e.identity = Some(IdentityAnnotation::new(RELIGION, subs[i % 3]));
            e.features = Some(vec![0.5]);
            examples.push(e);
        }
        examples.push({
            let mut e = Example::new("plain", "x", Labels::uniform(Label::Safe));
            e.features = Some(vec![0.1]);
            e
        });
        Dataset::new(examples, vec!["f".into()], Taxonomy::default()).unwrap()
    }

    fn baseline_sa(ds: &Dataset) -> SlicedAverages {
        let scores: Vec<f64> = ds
            .examples()
            .iter()
            .map(|e| match e.identity.as_ref().map(|i| i.subgroup.as_str()) {
                Some("Islam") => 0.7,
                _ => 0.3,
            })
            .collect();
        sliced_averages(ds, &scores, HarmKind::Hate).unwrap()
    }

    #[test]
    fn resample_shape_and_provenance() {
        let train = train_set();
        let sa = baseline_sa(&train);
        let cfg = FdwConfig::uniform(ArmParams { lambda: 0.5, beta: 10.0 });
        let out = resample(&train, HarmKind::Hate, &sa, &cfg, 3).unwrap();
        let n = train.len();
        assert_eq!(out.dataset.len(), 3 * n);
        assert_eq!(out.draws.len(), 2 * n);
        for d in &out.draws {
            let copy = out.dataset.get(&d.new_id).unwrap();
            let src = train.get(&d.source_id).unwrap();
            assert_eq!(copy.labels.hate, d.arm);
            assert_eq!(src.labels.hate, d.arm);
            let id = src.identity.as_ref().unwrap();
            assert_eq!(SliceKey::new(&id.category, &id.subgroup), d.slice);
            assert_eq!(copy.weight, 0.5);
            assert_eq!(copy.source_id.as_deref(), Some(src.id.as_str()));
            assert!(d.new_id.contains("#fdw-hate-"));
        }
        assert!(out.draws.iter().all(|d| d.source_id != "plain"));
        let again = resample(&train, HarmKind::Hate, &sa, &cfg, 3).unwrap();
        assert_eq!(draws_to_jsonl(&out.draws), draws_to_jsonl(&again.draws));
        assert_eq!(out.dataset.to_jsonl(), again.dataset.to_jsonl());
    }

    #[test]
    fn single_slice_takes_every_draw() {
        let train = train_set().filter(|e| {
            e.identity.as_ref().map(|i| i.subgroup == "Islam").unwrap_or(false)
        });
        let sa = baseline_sa(&train);
        let out = resample(&train, HarmKind::Hate, &sa, &FdwConfig::default(), 1).unwrap();
        assert_eq!(out.dataset.len(), 3 * train.len());
        assert!(out.draws.iter().all(|d| d.slice.subgroup == "Islam"));
    }

    #[test]
    fn empty_arm_is_skipped() {
        let train = train_set().filter(|e| e.labels.hate == Label::Safe);
        let sa = baseline_sa(&train);
        let out = resample(&train, HarmKind::Hate, &sa, &FdwConfig::default(), 1).unwrap();
        assert_eq!(out.skipped, vec![Label::Unsafe]);
        assert_eq!(out.dataset.len(), 2 * train.len());
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{"hate": {"safe": {"lambda": 1.0, "beta": 50.0}, "unsafe": {"lambda": 0.1, "beta": 5.0}}}"#;
        let cfg: FdwConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.params(HarmKind::Hate, Label::Unsafe), ArmParams { lambda: 0.1, beta: 5.0 });
        assert_eq!(cfg.params(HarmKind::Violence, Label::Safe), ArmParams::default());
        let bad = FdwConfig::uniform(ArmParams { lambda: -1.0, beta: 1.0 });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empirical_frequencies_match_p() {
        let ls = [loss("a", 0.0), loss("b", (3.0f64).ln())];
        let dist = sampling_distribution(&ls, 1.0).unwrap();
        assert!((dist.p[1] - 0.75).abs() < 1e-12);
        let picks = draw_slices(&dist, 100_000, &mut rng::stream(9, &["freq"], 0));
        let freq = picks.iter().filter(|&&i| i == 1).count() as f64 / 1e5;
        assert!((freq - 0.75).abs() < 0.01, "{freq}");
    }
}
