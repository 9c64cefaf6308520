use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use fairensemble::datagen::{
    apply_critique, make_corpus, AlwaysKeep, CorpusConfig, DatagenError, RuleRewriter, TermLexicon,
};
use fairensemble::dataset::{counterfactual_balance, load_jsonl, Split};
use fairensemble::ensemble::ForestModel;
use fairensemble::pipeline::{
    compare_to_sources, evaluate_model, pretty, report_from_models, run_two_stage, stage_one, sweep_beta,
    sweep_lambda, PipelineConfig, PipelineData, PipelineError, SweepParam, BASELINE_MODEL, REMEDIATED_MODEL,
    REPORT, SA_VALIDATION,
};
use fairensemble::{HarmKind, Label};

#[derive(Parser)]
#[command(name = "fairensemble", version, about = "Counterfactual debiasing for safety-classifier ensembles")]
struct Cli {
    /// Worker threads for training and scoring (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted-bias corpus and a matching pipeline config.
    GenCorpus {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Corpus config JSON; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Add rule-based counterfactuals for every identity-bearing original.
    Counterfactualize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Term lexicon JSON (category -> subgroup -> terms).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stage 1 only: baseline model and its validation sliced averages.
    TrainBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Both stages: baseline, FDW resampling, remediated model, report.
    Debias {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on a test file with counterfactual sets.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary one FDW parameter and tabulate its fairness metric.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// lambda_safe, lambda_unsafe, beta_safe, beta_unsafe, or lambda/beta with --gt.
        #[arg(long)]
        param: String,
        #[arg(long)]
        gt: Option<Label>,
        #[arg(long, default_value = "hate")]
        harm: HarmKind,
        /// Comma-separated parameter values.
        #[arg(long)]
        values: String,
        /// Identity category for beta sweeps.
        #[arg(long)]
        category: Option<String>,
    },
    /// AU-PRC of each raw source feature against the ensemble.
    CompareSources {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Default: every head in the model.
        #[arg(long)]
        harm: Option<HarmKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report.json from a debias run's saved models.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding baseline.model.json and remediated.model.json.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A problem with the invocation itself (flags, config, missing inputs).
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|c| {
        c.is::<Invalid>()
            || matches!(c.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)))
            || matches!(
                c.downcast_ref::<DatagenError>(),
                Some(DatagenError::Config(_) | DatagenError::EmptySlices(_))
            )
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("starting thread pool")?;
    }
    match cli.command {
        Command::GenCorpus { seed, out, config } => gen_corpus(seed, &out, config.as_deref()),
        Command::Counterfactualize { data, out, config } => counterfactualize(&data, &out, config.as_deref()),
        Command::TrainBaseline { config, seed, out } => train_baseline(&config, seed, &out),
        Command::Debias { config, seed, out } => debias(&config, seed, out),
        Command::Eval { model, data, out } => eval(&model, &data, &out),
        Command::Sweep {
            config,
            seed,
            out,
            param,
            gt,
            harm,
            values,
            category,
        } => sweep(&config, seed, &out, &param, gt, harm, &values, category.as_deref()),
        Command::CompareSources { model, data, harm, out } => compare_sources(&model, &data, harm, &out),
        Command::Report {
            config,
            model,
            seed,
            out,
        } => report(&config, &model, seed, &out),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Load and validate a pipeline config, applying a `--seed` override.
fn load_config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig> {
    require_file(path, "config")?;
    let mut cfg = PipelineConfig::load(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if cfg.seed.is_none() {
        return Err(invalid("a seed is required: pass --seed or set \"seed\" in the config"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<ForestModel> {
    ForestModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn gen_corpus(seed: u64, out: &Path, config: Option<&Path>) -> Result<String> {
    let cfg = match config {
        Some(p) => {
            require_file(p, "config")?;
            CorpusConfig::from_json_file(p)?
        }
        None => CorpusConfig::default(),
    };
    let corpus = make_corpus(seed, &cfg)?;
    let train = corpus.train_cf();
    let validation = corpus.validation();
    let test = corpus.dataset.with_split(Split::Test);

    create_out(out)?;
    write(out, "train.jsonl", &train.to_jsonl())?;
    write(out, "validation.jsonl", &validation.to_jsonl())?;
    write(out, "test.jsonl", &test.to_jsonl())?;
    write(out, "corpus.json", &pretty(&json!({ "seed": seed, "config": cfg })))?;
    let pipeline = json!({
        "data": {"train": "train.jsonl", "validation": "validation.jsonl", "test": "test.jsonl"},
    });
    write(out, "pipeline.json", &pretty(&pipeline))?;
    Ok(format!(
        "gen-corpus: {} train ({} original), {} validation, {} test examples -> {}",
        train.len(),
        corpus.train_original().len(),
        validation.len(),
        test.len(),
        out.display()
    ))
}

fn counterfactualize(data: &Path, out: &Path, config: Option<&Path>) -> Result<String> {
    require_file(data, "data file")?;
    let lexicon = match config {
        Some(p) => {
            require_file(p, "lexicon")?;
            TermLexicon::from_json_file(p)?
        }
        None => TermLexicon::default(),
    };
    let target = out.join("counterfactualized.jsonl");
    if target.canonicalize().ok().is_some_and(|t| data.canonicalize().ok() == Some(t)) {
        return Err(invalid("output would overwrite the input file"));
    }
    let ds = load_jsonl(data).with_context(|| format!("loading {}", data.display()))?;
    lexicon
        .check_covers(ds.taxonomy())
        .map_err(|e| invalid(e.to_string()))?;
    let balanced = counterfactual_balance(&ds, &RuleRewriter::new(lexicon))?;
    let (kept, drops) = apply_critique(&balanced, &AlwaysKeep)?;
    let added = kept.len() - ds.len();
    let unscored = kept.examples().iter().filter(|e| e.features.is_none()).count();

    create_out(out)?;
    write(out, "counterfactualized.jsonl", &kept.to_jsonl())?;
    if !drops.is_empty() {
        let lines: String = drops
            .iter()
            .map(|d| serde_json::to_string(d).expect("drop records serialize") + "\n")
            .collect();
        write(out, "critic_drops.jsonl", &lines)?;
    }
    Ok(format!(
        "counterfactualize: {} examples, {added} counterfactuals added, {} dropped, {unscored} unscored -> {}",
        ds.len(),
        drops.len(),
        target.display()
    ))
}

fn train_baseline(config: &Path, seed: Option<u64>, out: &Path) -> Result<String> {
    let cfg = load_config(config, seed)?;
    let settings = cfg.settings()?;
    let data = PipelineData::load(&cfg)?;
    let (baseline, sa) = stage_one(&data, &settings)?;
    create_out(out)?;
    write(out, BASELINE_MODEL, &baseline.to_json())?;
    write(out, SA_VALIDATION, &pretty(&sa))?;
    Ok(format!(
        "train-baseline: {} heads on {} original examples ({} parameters) -> {}",
        baseline.heads.len(),
        data.train_original.len(),
        baseline.n_params(),
        out.display()
    ))
}

fn debias(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<String> {
    let mut cfg = load_config(config, seed)?;
    if out.is_some() {
        cfg.out = out;
    }
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| invalid("an output directory is required: pass --out or set \"out\" in the config"))?;
    let run = run_two_stage(&cfg)?;
    let parts: Vec<String> = run
        .report
        .comparison
        .harms
        .iter()
        .map(|(harm, c)| {
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:+.1}%"));
            format!(
                "{harm} ACV {} CF AU-PRC {}",
                fmt(c.pct_delta.acv),
                fmt(c.pct_delta.au_prc_cf)
            )
        })
        .collect();
    Ok(format!("debias: {} -> {}", parts.join("; "), dir.display()))
}

fn eval(model: &Path, data: &Path, out: &Path) -> Result<String> {
    require_file(model, "model")?;
    require_file(data, "data file")?;
    let model = load_model(model)?;
    let ds = load_jsonl(data).with_context(|| format!("loading {}", data.display()))?;
    let evaluation = evaluate_model(&model, &ds.originals(), &ds)?;
    create_out(out)?;
    write(out, REPORT, &pretty(&evaluation))?;
    let parts: Vec<String> = evaluation
        .harms
        .iter()
        .map(|(harm, h)| format!("{harm} ACV {:.5} AU-PRC {:.4}", h.acv, h.au_prc_test))
        .collect();
    Ok(format!("eval: {} -> {}", parts.join("; "), out.join(REPORT).display()))
}

fn parse_values(values: &str) -> Result<Vec<f64>> {
    let parsed = values
        .split(',')
        .map(|v| {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("--values: {v:?} is not a number")))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(invalid(format!("--values: {v} must be finite and >= 0")));
            }
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parsed)
}

fn parse_param(param: &str, gt: Option<Label>) -> Result<SweepParam> {
    match (param, gt) {
        ("lambda", Some(gt)) => Ok(SweepParam::Lambda(gt)),
        ("beta", Some(gt)) => Ok(SweepParam::Beta(gt)),
        ("lambda" | "beta", None) => Err(invalid(format!("--param {param} needs --gt safe|unsafe"))),
        _ => {
            let p: SweepParam = param.parse().map_err(invalid)?;
            let own = match p {
                SweepParam::Lambda(g) | SweepParam::Beta(g) => g,
            };
            match gt {
                Some(g) if g != own => Err(invalid(format!("--gt {g} contradicts --param {param}"))),
                _ => Ok(p),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    param: &str,
    gt: Option<Label>,
    harm: HarmKind,
    values: &str,
    category: Option<&str>,
) -> Result<String> {
    let param = parse_param(param, gt)?;
    let values = parse_values(values)?;
    if matches!(param, SweepParam::Beta(_)) && category.is_none() {
        return Err(invalid("beta sweeps need --category"));
    }
    let cfg = load_config(config, seed)?;
    let settings = cfg.settings()?;
    let data = PipelineData::load(&cfg)?;
    let table = match param {
        SweepParam::Lambda(gt) => sweep_lambda(&data, &settings, harm, gt, &values)?,
        SweepParam::Beta(gt) => {
            let category = category.expect("checked above");
            if data.validation.taxonomy().subgroups(category).is_none() {
                return Err(invalid(format!("unknown category {category:?}")));
            }
            sweep_beta(&data, &settings, harm, gt, category, &values)?
        }
    };
    create_out(out)?;
    write(out, &table.file_name(), &table.to_csv())?;
    let cells: Vec<String> = table
        .rows
        .iter()
        .map(|r| match r.metric {
            Some(m) => format!("{}={m:.4}", r.value),
            None => format!("{}=n/a", r.value),
        })
        .collect();
    Ok(format!(
        "sweep {} ({harm}, {}): {} -> {}",
        table.param,
        table.metric,
        cells.join(" "),
        out.join(table.file_name()).display()
    ))
}

fn compare_sources(model: &Path, data: &Path, harm: Option<HarmKind>, out: &Path) -> Result<String> {
    require_file(model, "model")?;
    require_file(data, "data file")?;
    let model = load_model(model)?;
    let harms: Vec<HarmKind> = match harm {
        Some(h) => {
            if !model.heads.contains_key(&h) {
                return Err(invalid(format!("model has no {h} head")));
            }
            vec![h]
        }
        None => model.heads.keys().copied().collect(),
    };
    let test = load_jsonl(data)
        .with_context(|| format!("loading {}", data.display()))?
        .originals();
    let mut csv = String::from("harm,source,au_prc\n");
    let mut parts = Vec::new();
    for harm in harms {
        let cmp = compare_to_sources(&test, &model, harm)?;
        csv.extend(cmp.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
        parts.push(format!(
            "{harm} ensemble {:.4} vs {} {:.4} ({})",
            cmp.ensemble,
            cmp.best_feature,
            cmp.features[&cmp.best_feature],
            cmp.improvement_pct.map_or("n/a".to_string(), |v| format!("{v:+.2}%"))
        ));
    }
    create_out(out)?;
    write(out, "sources.csv", &csv)?;
    Ok(format!("compare-sources: {} -> {}", parts.join("; "), out.join("sources.csv").display()))
}

fn report(config: &Path, run_dir: &Path, seed: Option<u64>, out: &Path) -> Result<String> {
    let cfg = load_config(config, seed)?;
    let baseline_path = run_dir.join(BASELINE_MODEL);
    let remediated_path = run_dir.join(REMEDIATED_MODEL);
    require_file(&baseline_path, "baseline model")?;
    require_file(&remediated_path, "remediated model")?;
    let settings = cfg.settings()?;
    let baseline = load_model(&baseline_path)?;
    let remediated = load_model(&remediated_path)?;
    let data = PipelineData::load(&cfg)?;
    let report = report_from_models(&data, &settings, &baseline, &remediated)?;
    create_out(out)?;
    write(out, REPORT, &pretty(&report))?;
    Ok(format!(
        "report: {} harms, seed {} -> {}",
        report.comparison.harms.len(),
        report.seed,
        out.join(REPORT).display()
    ))
}
