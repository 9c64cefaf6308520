//! Two-stage debiasing: train a baseline on the original training set, take
//! its sliced averages on validation, resample the counterfactualized
//! training set with FDW and retrain. Also the lambda/beta sweeps and the
//! single-source comparison.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::datagen::PlantedCorpus;
use crate::dataset::{load_jsonl_with, Dataset, HarmKind, Label, Origin, Taxonomy};
use crate::ensemble::{feature_contributions, score_dataset, score_table, ForestConfig, ForestModel};
use crate::fdw::{draws_to_jsonl, resample, DrawRecord, FdwConfig};
use crate::metrics::{
    acv, au_prc, compare, evaluate, max_sa_gap, pct_delta, sliced_averages, Evaluation,
    MetricsComparison, SlicedAverages,
};
use crate::rng::derive_seed;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("pipeline config: {0}")]
    Config(String),
}

fn at<E: Into<BoxError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Counterfactualized training set: originals plus their scored
    /// counterfactuals. Stage 1 uses only the originals.
    pub train: PathBuf,
    pub validation: PathBuf,
    /// Its original examples form the test set. Without `cf_test`, the whole
    /// file (originals and counterfactuals) is also the cf test set.
    pub test: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf_test: Option<PathBuf>,
}

/// Pipeline config file. Relative paths are resolved against the file's
/// directory. The forest's own `seed` is ignored: every seed derives from
/// the top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataPaths,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub fdw: FdwConfig,
    #[serde(default)]
    pub harms: Option<Vec<HarmKind>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.train);
        resolve(&mut cfg.data.validation);
        resolve(&mut cfg.data.test);
        cfg.data.cf_test.as_mut().map(resolve);
        cfg.taxonomy.as_mut().map(resolve);
        cfg.out.as_mut().map(resolve);
        Ok(cfg)
    }

    /// Check everything that can be checked without reading the datasets.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut paths = vec![&self.data.train, &self.data.validation, &self.data.test];
        paths.extend(self.data.cf_test.iter());
        paths.extend(self.taxonomy.iter());
        for p in paths {
            if !p.is_file() {
                return Err(PipelineError::Config(format!("missing file {}", p.display())));
            }
        }
        self.forest
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.fdw
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.harms.as_ref().is_some_and(|h| h.is_empty()) {
            return Err(PipelineError::Config("harms must not be empty".into()));
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<RunSettings, PipelineError> {
        let seed = self
            .seed
            .ok_or_else(|| PipelineError::Config("a seed is required".into()))?;
        Ok(RunSettings {
            forest: self.forest.clone(),
            fdw: self.fdw.clone(),
            harms: self.harms.clone().unwrap_or_else(|| HarmKind::ALL.to_vec()),
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub forest: ForestConfig,
    pub fdw: FdwConfig,
    pub harms: Vec<HarmKind>,
    pub seed: u64,
}

impl RunSettings {
    pub fn new(seed: u64) -> Self {
        RunSettings {
            forest: ForestConfig::default(),
            fdw: FdwConfig::default(),
            harms: HarmKind::ALL.to_vec(),
            seed,
        }
    }

    /// Forest config with the run's derived seed. Both stages share it, so
    /// the two models differ only through their training data.
    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            seed: derive_seed(self.seed, "forest"),
            ..self.forest.clone()
        }
    }

    pub fn fdw_seed(&self) -> u64 {
        derive_seed(self.seed, "fdw")
    }
}

/// The five datasets a run needs.
#[derive(Clone, Debug)]
pub struct PipelineData {
    pub train_original: Dataset,
    pub train_cf: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub cf_test: Dataset,
}

impl PipelineData {
    pub fn from_corpus(corpus: &PlantedCorpus) -> Self {
        PipelineData {
            train_original: corpus.train_original(),
            train_cf: corpus.train_cf(),
            validation: corpus.validation(),
            test: corpus.test(),
            cf_test: corpus.cf_test(),
        }
    }

    pub fn load(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let stage = "load";
        let taxonomy = match &config.taxonomy {
            Some(p) => Taxonomy::from_json_file(p).map_err(at(stage))?,
            None => Taxonomy::default(),
        };
        let load = |p: &Path| {
            load_jsonl_with(p, taxonomy.clone()).map_err(|e| PipelineError::Stage {
                stage,
                source: format!("{}: {e}", p.display()).into(),
            })
        };
        let train_cf = load(&config.data.train)?;
        if !train_cf.examples().iter().any(|e| e.origin == Origin::Counterfactual) {
            return Err(PipelineError::Stage {
                stage,
                source: "training set has no counterfactual examples; run counterfactualize first".into(),
            });
        }
        let test_file = load(&config.data.test)?;
        let test = test_file.originals();
        let cf_test = match &config.data.cf_test {
            Some(p) => load(p)?,
            None => test_file,
        };
        let data = PipelineData {
            train_original: train_cf.originals(),
            train_cf,
            validation: load(&config.data.validation)?,
            test,
            cf_test,
        };
        if !data.train_cf.is_scored() || !data.cf_test.is_scored() {
            return Err(PipelineError::Stage {
                stage,
                source: "every train and cf test example needs features".into(),
            });
        }
        Ok(data)
    }

    fn check_stage1_input(&self) -> Result<(), PipelineError> {
        match self
            .train_original
            .examples()
            .iter()
            .find(|e| e.origin != Origin::Original || e.is_copy())
        {
            Some(e) => Err(PipelineError::Stage {
                stage: "baseline",
                source: format!("stage-1 training data contains non-original example {:?}", e.id).into(),
            }),
            None => Ok(()),
        }
    }
}

/// Feature contribution percentages of both models for one harm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionShift {
    pub baseline: BTreeMap<String, f64>,
    pub remediated: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataHashes {
    pub train_original: String,
    pub train_cf: String,
    pub validation: String,
    pub test: String,
    pub cf_test: String,
}

/// Everything written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub settings: RunSettings,
    pub data: DataHashes,
    pub baseline: Evaluation,
    pub remediated: Evaluation,
    pub comparison: MetricsComparison,
    pub feature_contributions: BTreeMap<HarmKind, ContributionShift>,
    pub fdw_skipped_arms: BTreeMap<HarmKind, Vec<Label>>,
    pub model_params: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub baseline: ForestModel,
    pub remediated: ForestModel,
    pub sa_validation: BTreeMap<HarmKind, SlicedAverages>,
    pub provenance: Vec<DrawRecord>,
    pub report: RunReport,
}

pub const BASELINE_MODEL: &str = "baseline.model.json";
pub const REMEDIATED_MODEL: &str = "remediated.model.json";
pub const SA_VALIDATION: &str = "sa_validation.json";
pub const FDW_PROVENANCE: &str = "fdw_provenance.jsonl";
pub const REPORT: &str = "report.json";

/// Pretty JSON with a trailing newline, the format of every JSON artifact.
pub fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts serialize");
    s.push('\n');
    s
}

fn write(out: Option<&Path>, name: &str, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = out {
        std::fs::write(dir.join(name), contents).map_err(at("write artifacts"))?;
    }
    Ok(())
}

/// Stage 1: baseline on the original training set and its sliced averages
/// on validation.
pub fn stage_one(
    data: &PipelineData,
    settings: &RunSettings,
) -> Result<(ForestModel, BTreeMap<HarmKind, SlicedAverages>), PipelineError> {
    data.check_stage1_input()?;
    let forest = settings.forest_config();
    let baseline = ForestModel::train_heads(
        settings.harms.iter().map(|&h| (h, &data.train_original)),
        &forest,
    )
    .map_err(at("baseline"))?;
    let mut sa = BTreeMap::new();
    for &harm in &settings.harms {
        let scores = score_dataset(&baseline, &data.validation, harm).map_err(at("validation sa"))?;
        sa.insert(
            harm,
            sliced_averages(&data.validation, &scores, harm).map_err(at("validation sa"))?,
        );
    }
    Ok((baseline, sa))
}

/// Stage 2 for one harm: FDW resample of the counterfactualized training set.
fn remediated_training_set(
    data: &PipelineData,
    settings: &RunSettings,
    harm: HarmKind,
    sa: &SlicedAverages,
) -> Result<(Dataset, Vec<DrawRecord>, Vec<Label>), PipelineError> {
    let out = resample(&data.train_cf, harm, sa, &settings.fdw, settings.fdw_seed()).map_err(at("fdw"))?;
    Ok((out.dataset, out.draws, out.skipped))
}

/// Run both stages and evaluate. With `out`, artifacts are written as each
/// stage finishes, so a failed run keeps what it produced.
pub fn run_on(
    data: &PipelineData,
    settings: &RunSettings,
    out: Option<&Path>,
) -> Result<RunArtifacts, PipelineError> {
    let (baseline, sa_validation) = stage_one(data, settings)?;
    write(out, BASELINE_MODEL, &baseline.to_json())?;
    write(out, SA_VALIDATION, &pretty(&sa_validation))?;

    let forest = settings.forest_config();
    let mut remediated = ForestModel::new(baseline.feature_names.clone());
    let mut provenance = Vec::new();
    let mut skipped = BTreeMap::new();
    for &harm in &settings.harms {
        let (train, draws, skip) = remediated_training_set(data, settings, harm, &sa_validation[&harm])?;
        let head = crate::ensemble::train(&train, harm, &forest).map_err(at("remediated"))?;
        remediated.heads.insert(harm, head);
        provenance.extend(draws);
        skipped.insert(harm, skip);
    }
    write(out, FDW_PROVENANCE, &draws_to_jsonl(&provenance))?;
    write(out, REMEDIATED_MODEL, &remediated.to_json())?;

    let report = build_report(data, settings, &baseline, &remediated, skipped)?;
    write(out, REPORT, &pretty(&report))?;
    Ok(RunArtifacts {
        baseline,
        remediated,
        sa_validation,
        provenance,
        report,
    })
}

pub fn evaluate_model(model: &ForestModel, test: &Dataset, cf_test: &Dataset) -> Result<Evaluation, PipelineError> {
    let stage = "evaluate";
    let t = score_table(model, test).map_err(at(stage))?;
    let c = score_table(model, cf_test).map_err(at(stage))?;
    evaluate(test, &t, cf_test, &c).map_err(at(stage))
}

/// Recompute the report from trained models and the datasets.
pub fn build_report(
    data: &PipelineData,
    settings: &RunSettings,
    baseline: &ForestModel,
    remediated: &ForestModel,
    fdw_skipped_arms: BTreeMap<HarmKind, Vec<Label>>,
) -> Result<RunReport, PipelineError> {
    let base_eval = evaluate_model(baseline, &data.test, &data.cf_test)?;
    let rem_eval = evaluate_model(remediated, &data.test, &data.cf_test)?;
    let comparison = compare(&base_eval, &rem_eval).map_err(at("compare"))?;
    let mut contributions = BTreeMap::new();
    for &harm in &settings.harms {
        contributions.insert(
            harm,
            ContributionShift {
                baseline: feature_contributions(baseline, harm).map_err(at("contributions"))?,
                remediated: feature_contributions(remediated, harm).map_err(at("contributions"))?,
            },
        );
    }
    Ok(RunReport {
        seed: settings.seed,
        settings: settings.clone(),
        data: DataHashes {
            train_original: data.train_original.content_hash(),
            train_cf: data.train_cf.content_hash(),
            validation: data.validation.content_hash(),
            test: data.test.content_hash(),
            cf_test: data.cf_test.content_hash(),
        },
        baseline: base_eval,
        remediated: rem_eval,
        comparison,
        feature_contributions: contributions,
        fdw_skipped_arms,
        model_params: BTreeMap::from([
            ("baseline".to_string(), baseline.n_params()),
            ("remediated".to_string(), remediated.n_params()),
        ]),
    })
}

/// Rebuild a run's report from its two saved models. Skipped FDW arms are
/// recomputed from the baseline's sliced averages on validation.
pub fn report_from_models(
    data: &PipelineData,
    settings: &RunSettings,
    baseline: &ForestModel,
    remediated: &ForestModel,
) -> Result<RunReport, PipelineError> {
    let mut skipped = BTreeMap::new();
    for &harm in &settings.harms {
        let scores = score_dataset(baseline, &data.validation, harm).map_err(at("validation sa"))?;
        let sa = sliced_averages(&data.validation, &scores, harm).map_err(at("validation sa"))?;
        let (_, _, skip) = remediated_training_set(data, settings, harm, &sa)?;
        skipped.insert(harm, skip);
    }
    build_report(data, settings, baseline, remediated, skipped)
}

/// Load the data named by `config`, run, and write artifacts under the
/// config's `out` directory (created if needed).
pub fn run_two_stage(config: &PipelineConfig) -> Result<RunArtifacts, PipelineError> {
    config.validate()?;
    let settings = config.settings()?;
    let data = PipelineData::load(config)?;
    let out = config.out.as_deref();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(at("write artifacts"))?;
    }
    run_on(&data, &settings, out)
}

/// Which FDW parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda(Label),
    Beta(Label),
}

impl SweepParam {
    pub fn name(self) -> String {
        match self {
            SweepParam::Lambda(gt) => format!("lambda_{gt}"),
            SweepParam::Beta(gt) => format!("beta_{gt}"),
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, gt) = s
            .split_once('_')
            .ok_or_else(|| format!("unknown sweep parameter {s:?}"))?;
        let gt: Label = gt.parse()?;
        match kind {
            "lambda" => Ok(SweepParam::Lambda(gt)),
            "beta" => Ok(SweepParam::Beta(gt)),
            _ => Err(format!(
                "unknown sweep parameter {s:?} (expected lambda_safe, lambda_unsafe, beta_safe or beta_unsafe)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// %ΔACV for a lambda sweep, max SA gap for a beta sweep. `None` when
    /// the baseline ACV is zero.
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: String,
    pub metric: String,
    pub harm: HarmKind,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn file_name(&self) -> String {
        format!("sweep_{}.csv", self.param)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.param, self.metric);
        for r in &self.rows {
            match r.metric {
                Some(m) => s.push_str(&format!("{},{m}\n", r.value)),
                None => s.push_str(&format!("{},\n", r.value)),
            }
        }
        s
    }
}

fn check_values(values: &[f64]) -> Result<(), PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(PipelineError::Config(format!("sweep value {v} must be finite and >= 0")));
    }
    Ok(())
}

/// Retrain the `harm` head once per value and score the cf test set. Every
/// point reuses the stage-1 sliced averages and the run's seeds.
fn sweep_points(
    data: &PipelineData,
    settings: &RunSettings,
    harm: HarmKind,
    param: SweepParam,
    values: &[f64],
    sa: &SlicedAverages,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let forest = settings.forest_config();
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut s = settings.clone();
        let gt = match param {
            SweepParam::Lambda(gt) | SweepParam::Beta(gt) => gt,
        };
        let mut arm = s.fdw.params(harm, gt);
        match param {
            SweepParam::Lambda(_) => arm.lambda = v,
            SweepParam::Beta(_) => arm.beta = v,
        }
        s.fdw.set(harm, gt, arm);
        let (train, _, _) = remediated_training_set(data, &s, harm, sa)?;
        let head = crate::ensemble::train(&train, harm, &forest).map_err(at("sweep"))?;
        let mut model = ForestModel::new(train.feature_names().to_vec());
        model.heads.insert(harm, head);
        out.push(score_dataset(&model, &data.cf_test, harm).map_err(at("sweep"))?);
    }
    Ok(out)
}

fn stage_one_for(
    data: &PipelineData,
    settings: &RunSettings,
    harm: HarmKind,
) -> Result<(ForestModel, SlicedAverages), PipelineError> {
    let s = RunSettings {
        harms: vec![harm],
        ..settings.clone()
    };
    let (baseline, mut sa) = stage_one(data, &s)?;
    Ok((baseline, sa.remove(&harm).expect("stage one covers the harm")))
}

/// %ΔACV conditioned on `gt` against the stage-1 baseline, per lambda.
pub fn sweep_lambda(
    data: &PipelineData,
    settings: &RunSettings,
    harm: HarmKind,
    gt: Label,
    values: &[f64],
) -> Result<SweepTable, PipelineError> {
    check_values(values)?;
    let (baseline, sa) = stage_one_for(data, settings, harm)?;
    let acv_gt = |scores: &[f64]| -> Result<Option<f64>, PipelineError> {
        let a = acv(&data.cf_test, scores, harm).map_err(at("sweep"))?;
        Ok(match gt {
            Label::Safe => a.acv_safe,
            Label::Unsafe => a.acv_unsafe,
        })
    };
    let base_scores = score_dataset(&baseline, &data.cf_test, harm).map_err(at("sweep"))?;
    let base = acv_gt(&base_scores)?;
    let points = sweep_points(data, settings, harm, SweepParam::Lambda(gt), values, &sa)?;
    let rows = values
        .iter()
        .zip(points)
        .map(|(&value, scores)| {
            let new = acv_gt(&scores)?;
            Ok(SweepRow {
                value,
                metric: base.zip(new).and_then(|(b, n)| pct_delta(b, n)),
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(SweepTable {
        param: SweepParam::Lambda(gt).name(),
        metric: format!("pct_delta_acv_{gt}"),
        harm,
        rows,
    })
}

/// Max SA gap on the cf test set for `category` under `gt`, per beta of
/// the `gt` arm.
pub fn sweep_beta(
    data: &PipelineData,
    settings: &RunSettings,
    harm: HarmKind,
    gt: Label,
    category: &str,
    values: &[f64],
) -> Result<SweepTable, PipelineError> {
    check_values(values)?;
    let (_, sa) = stage_one_for(data, settings, harm)?;
    let points = sweep_points(data, settings, harm, SweepParam::Beta(gt), values, &sa)?;
    let rows = values
        .iter()
        .zip(points)
        .map(|(&value, scores)| {
            let sa = sliced_averages(&data.cf_test, &scores, harm).map_err(at("sweep"))?;
            let gap = max_sa_gap(&sa, gt, category).map_err(at("sweep"))?;
            Ok(SweepRow {
                value,
                metric: Some(gap),
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(SweepTable {
        param: SweepParam::Beta(gt).name(),
        metric: format!("max_sa_gap_{gt}"),
        harm,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceComparison {
    pub harm: HarmKind,
    /// AU-PRC of each raw feature used alone as the score.
    pub features: BTreeMap<String, f64>,
    pub best_feature: String,
    pub ensemble: f64,
    /// Percent improvement of the ensemble over the best feature.
    pub improvement_pct: Option<f64>,
}

impl SourceComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("harm,source,au_prc\n");
        for (name, v) in &self.features {
            s.push_str(&format!("{},{name},{v}\n", self.harm));
        }
        s.push_str(&format!("{},ensemble,{}\n", self.harm, self.ensemble));
        s
    }
}

pub fn compare_to_sources(dataset: &Dataset, model: &ForestModel, harm: HarmKind) -> Result<SourceComparison, PipelineError> {
    let stage = "compare sources";
    let labels: Vec<Label> = dataset.examples().iter().map(|e| e.labels.get(harm)).collect();
    let mut features = BTreeMap::new();
    for (j, name) in dataset.feature_names().iter().enumerate() {
        let scores: Vec<f64> = dataset
            .examples()
            .iter()
            .map(|e| e.features.as_ref().map(|x| x[j]).ok_or_else(|| format!("example {:?} has no features", e.id)))
            .collect::<Result<_, _>>()
            .map_err(at(stage))?;
        features.insert(name.clone(), au_prc(&scores, &labels).map_err(at(stage))?);
    }
    let (best_feature, best) = features
        .iter()
        .fold(None::<(&String, f64)>, |acc, (n, &v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((n, v)),
        })
        .ok_or_else(|| PipelineError::Stage {
            stage,
            source: "dataset has no features".into(),
        })?;
    let best_feature = best_feature.clone();
    let scores = score_dataset(model, dataset, harm).map_err(at(stage))?;
    let ensemble = au_prc(&scores, &labels).map_err(at(stage))?;
    Ok(SourceComparison {
        harm,
        features,
        best_feature,
        ensemble,
        improvement_pct: pct_delta(best, ensemble),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_planted_bias_corpus, BiasSpec};
    use crate::ensemble::FeaturesPerSplit;
    use crate::fdw::ArmParams;

    fn small_settings(seed: u64) -> RunSettings {
        RunSettings {
            forest: ForestConfig {
                n_trees: 10,
                max_depth: 5,
                min_samples_leaf: 5,
                features_per_split: FeaturesPerSplit::Sqrt,
                seed: 0,
            },
            fdw: FdwConfig::default(),
            harms: vec![HarmKind::Hate],
            seed,
        }
    }

    fn small_data() -> PipelineData {
        PipelineData::from_corpus(&make_planted_bias_corpus(2, 900, &BiasSpec::planted_default()).unwrap())
    }

    #[test]
    fn run_is_deterministic_and_writes_artifacts() {
        let data = small_data();
        let dir = tempfile::tempdir().unwrap();
        let a = run_on(&data, &small_settings(7), Some(dir.path())).unwrap();
        let b = run_on(&data, &small_settings(7), None).unwrap();
        assert_eq!(a.remediated.to_json(), b.remediated.to_json());
        assert_eq!(pretty(&a.report), pretty(&b.report));
        for f in [BASELINE_MODEL, REMEDIATED_MODEL, SA_VALIDATION, FDW_PROVENANCE, REPORT] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert_eq!(a.report.baseline.test_hash, a.report.remediated.test_hash);
        assert_eq!(a.provenance.len(), 2 * data.train_cf.len());

        let rebuilt = report_from_models(&data, &small_settings(7), &a.baseline, &a.remediated).unwrap();
        assert_eq!(pretty(&rebuilt), pretty(&a.report));
    }

    #[test]
    fn zero_lambda_matches_counterfactual_only_model() {
        let data = small_data();
        let mut s = small_settings(3);
        s.fdw = FdwConfig::uniform(ArmParams { lambda: 0.0, beta: 20.0 });
        let run = run_on(&data, &s, None).unwrap();
        let cf_only = crate::ensemble::train(&data.train_cf, HarmKind::Hate, &s.forest_config()).unwrap();
        assert_eq!(run.remediated.heads[&HarmKind::Hate].trees, cf_only.trees);
    }

    #[test]
    fn sweeps_have_one_row_per_value() {
        let data = small_data();
        let s = small_settings(5);
        let t = sweep_lambda(&data, &s, HarmKind::Hate, Label::Safe, &[0.1, 0.1, 1.0]).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0], t.rows[1]);
        assert_eq!(t.file_name(), "sweep_lambda_safe.csv");
        assert_eq!(t.to_csv().lines().count(), 4);
        let g = sweep_beta(&data, &s, HarmKind::Hate, Label::Unsafe, "Sexual Orientation", &[0.0]).unwrap();
        assert_eq!(g.rows.len(), 1);
        assert!(sweep_beta(&data, &s, HarmKind::Hate, Label::Unsafe, "Age", &[1.0]).is_err());
        assert!(sweep_lambda(&data, &s, HarmKind::Hate, Label::Safe, &[]).is_err());
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!("lambda_safe".parse::<SweepParam>().unwrap(), SweepParam::Lambda(Label::Safe));
        assert_eq!("beta_unsafe".parse::<SweepParam>().unwrap(), SweepParam::Beta(Label::Unsafe));
        assert!("gamma_safe".parse::<SweepParam>().is_err());
        assert!("lambda".parse::<SweepParam>().is_err());
    }

    #[test]
    fn constant_ensemble_scores_at_prevalence() {
        use crate::ensemble::{ForestHead, HeadProvenance, TreeNode};
        let data = small_data();
        let cmp = compare_to_sources(&data.test, &{
            let mut m = ForestModel::new(data.test.feature_names().to_vec());
            m.heads.insert(
                HarmKind::Hate,
                ForestHead {
                    harm: HarmKind::Hate,
                    config: ForestConfig::default(),
                    provenance: HeadProvenance {
                        dataset_hash: String::new(),
                        n_examples: 0,
                        n_weighted: 0,
                    },
                    trees: vec![TreeNode::Leaf(0.5)],
                },
            );
            m
        }, HarmKind::Hate)
        .unwrap();
        let prevalence = data.test.examples().iter().filter(|e| e.labels.hate.is_unsafe()).count() as f64
            / data.test.len() as f64;
        assert!((cmp.ensemble - prevalence).abs() < 1e-12);
        assert!(cmp.improvement_pct.unwrap() < 0.0);
        assert_eq!(cmp.features.len(), data.test.feature_names().len());
    }

    #[test]
    fn config_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"data": {"train": "t.jsonl", "validation": "v.jsonl", "test": "x.jsonl", "cf_test": "c.jsonl"}, "seed": 1,
                "forest": {"n_trees": 3}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.data.train, dir.path().join("t.jsonl"));
        assert_eq!(cfg.data.cf_test, Some(dir.path().join("c.jsonl")));
        assert_eq!(cfg.forest.n_trees, 3);
        assert_eq!(cfg.forest.max_depth, 8);
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(m)) if m.contains("missing file")));
    }
}
