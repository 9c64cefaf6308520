use std::collections::HashMap;
use std::sync::OnceLock;

use proptest::prelude::*;

use fairensemble::datagen::{make_planted_bias_corpus, BiasSpec, PlantedCorpus};
use fairensemble::dataset::parse_jsonl;
use fairensemble::ensemble::{feature_contributions, score_dataset};
use fairensemble::fdw::{resample, ArmParams};
use fairensemble::metrics::{acv, sliced_averages};
use fairensemble::{FdwConfig, ForestConfig, ForestModel, HarmKind, Label, Taxonomy};

fn corpus() -> &'static PlantedCorpus {
    static CORPUS: OnceLock<PlantedCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| make_planted_bias_corpus(5, 800, &BiasSpec::planted_default()).unwrap())
}

fn small_forest(seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: 8,
        max_depth: 4,
        seed,
        ..ForestConfig::default()
    }
}

fn model() -> &'static ForestModel {
    static MODEL: OnceLock<ForestModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let train = corpus().train_original();
        ForestModel::train_heads([HarmKind::Hate, HarmKind::Violence].map(|h| (h, &train)), &small_forest(1)).unwrap()
    })
}

#[test]
fn corpus_sets_never_straddle_splits() {
    let ds = &corpus().dataset;
    for set in ds.cf_sets() {
        let split = ds.examples()[set.members[0]].split;
        assert!(set.members.iter().all(|&m| ds.examples()[m].split == split), "{}", set.cf_set_id);
    }
}

#[test]
fn corpus_survives_jsonl_round_trip() {
    let ds = &corpus().dataset;
    let back = parse_jsonl(&ds.to_jsonl(), Taxonomy::default()).unwrap();
    assert_eq!(&back, ds);
    assert_eq!(back.content_hash(), ds.content_hash());
}

#[test]
fn model_round_trips_and_scores_are_probabilities() {
    let m = model();
    let back = ForestModel::from_json(&m.to_json()).unwrap();
    let test = corpus().cf_test();
    for harm in [HarmKind::Hate, HarmKind::Violence] {
        let a = score_dataset(m, &test, harm).unwrap();
        let b = score_dataset(&back, &test, harm).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (0.0..=1.0).contains(s)));
        let total: f64 = feature_contributions(m, harm).unwrap().values().sum();
        assert!((total - 100.0).abs() < 1e-9, "{harm}: {total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resample_appends_weighted_copies(
        lambda in 0.0f64..5.0,
        beta in 0.0f64..200.0,
        seed in any::<u64>(),
    ) {
        let c = corpus();
        let train = c.train_cf();
        let validation = c.validation();
        let scores = score_dataset(model(), &validation, HarmKind::Hate).unwrap();
        let sa = sliced_averages(&validation, &scores, HarmKind::Hate).unwrap();
        let config = FdwConfig::uniform(ArmParams { lambda, beta });

        let out = resample(&train, HarmKind::Hate, &sa, &config, seed).unwrap();
        let n = train.len();
        prop_assert!(out.skipped.is_empty());
        prop_assert_eq!(out.dataset.len(), 3 * n);
        prop_assert_eq!(&out.dataset.examples()[..n], train.examples());
        prop_assert_eq!(out.dataset.cf_sets(), train.cf_sets());
        prop_assert_eq!(out.draws.len(), 2 * n);

        let by_id: HashMap<&str, _> = train.examples().iter().map(|e| (e.id.as_str(), e)).collect();
        for (k, copy) in out.dataset.examples()[n..].iter().enumerate() {
            let arm = if k < n { Label::Safe } else { Label::Unsafe };
            let src = by_id[copy.source_id.as_deref().unwrap()];
            prop_assert_eq!(copy.weight, lambda);
            prop_assert_eq!(copy.labels.hate, arm);
            prop_assert_eq!(&copy.labels, &src.labels);
            prop_assert_eq!(&copy.identity, &src.identity);
            prop_assert_eq!(&copy.features, &src.features);
        }
        for dist in out.distributions.values() {
            prop_assert!((dist.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let again = resample(&train, HarmKind::Hate, &sa, &config, seed).unwrap();
        prop_assert_eq!(again.draws, out.draws);
    }

    #[test]
    fn acv_is_shift_invariant_and_scales_quadratically(scale in 0.05f64..1.0, offset in 0.0f64..1.0) {
        let test = corpus().cf_test();
        let scores = score_dataset(model(), &test, HarmKind::Hate).unwrap();
        let base = acv(&test, &scores, HarmKind::Hate).unwrap();
        // affine map that keeps scores inside [0, 1]
        let moved: Vec<f64> = scores.iter().map(|s| scale * s + offset * (1.0 - scale)).collect();
        let got = acv(&test, &moved, HarmKind::Hate).unwrap();
        prop_assert!((got.acv - scale * scale * base.acv).abs() <= 1e-12);
        prop_assert_eq!(got.n_sets, base.n_sets);
    }

    #[test]
    fn training_is_deterministic_per_seed(seed in any::<u64>()) {
        let train = corpus().train_original();
        let a = ForestModel::train_heads([(HarmKind::Hate, &train)], &small_forest(seed)).unwrap();
        let b = ForestModel::train_heads([(HarmKind::Hate, &train)], &small_forest(seed)).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
    }
}
