use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairensemble"))
        .args(args)
        .output()
        .expect("spawn fairensemble")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    bin(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus plus a fast single-harm pipeline config in `root/corpus`.
fn small_setup(root: &Path) -> PathBuf {
    let corpus_cfg = root.join("corpus_config.json");
    std::fs::write(&corpus_cfg, r#"{"size": 800}"#).unwrap();
    let dir = root.join("corpus");
    ok(&["gen-corpus", "--seed", "3", "--config", s(&corpus_cfg), "--out", s(&dir)]);
    let pipeline = dir.join("pipeline.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&pipeline).unwrap()).unwrap();
    cfg["harms"] = json!(["hate"]);
    cfg["forest"] = json!({"n_trees": 10, "max_depth": 5});
    cfg["seed"] = json!(11);
    std::fs::write(&pipeline, cfg.to_string()).unwrap();
    pipeline
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_corpus_writes_splits_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    small_setup(tmp.path());
    let dir = tmp.path().join("corpus");
    for f in ["train.jsonl", "validation.jsonl", "test.jsonl", "corpus.json", "pipeline.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("corpus.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config"]["size"], 800);
}

#[test]
fn debias_is_byte_identical_and_report_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_setup(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["--threads", "1", "debias", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["--threads", "4", "debias", "--config", s(&cfg), "--out", s(&b)]);
    let files = read_dir(&a);
    let names: Vec<&str> = files.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        ["baseline.model.json", "fdw_provenance.jsonl", "remediated.model.json", "report.json", "sa_validation.json"]
    );
    assert_eq!(files, read_dir(&b));

    let rebuilt = tmp.path().join("rebuilt");
    ok(&["report", "--config", s(&cfg), "--model", s(&a), "--out", s(&rebuilt)]);
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(rebuilt.join("report.json")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_setup(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["train-baseline", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["train-baseline", "--config", s(&cfg), "--seed", "12", "--out", s(&b)]);
    assert_ne!(
        std::fs::read(a.join("baseline.model.json")).unwrap(),
        std::fs::read(b.join("baseline.model.json")).unwrap()
    );
}

#[test]
fn eval_and_compare_sources_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_setup(tmp.path());
    let base = tmp.path().join("base");
    ok(&["train-baseline", "--config", s(&cfg), "--out", s(&base)]);
    let model = base.join("baseline.model.json");
    let test = tmp.path().join("corpus/test.jsonl");

    let eval_dir = tmp.path().join("eval");
    ok(&["eval", "--model", s(&model), "--data", s(&test), "--out", s(&eval_dir)]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let hate = &report["harms"]["hate"];
    for key in ["acv", "sa", "au_prc_test", "au_prc_cf"] {
        assert!(!hate[key].is_null(), "missing {key}");
    }
    assert!(hate["acv"].as_f64().unwrap() >= 0.0);

    let cmp = tmp.path().join("cmp");
    ok(&["compare-sources", "--model", s(&model), "--data", s(&test), "--out", s(&cmp)]);
    let csv = std::fs::read_to_string(cmp.join("sources.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "harm,source,au_prc");
    assert!(lines.last().unwrap().starts_with("hate,ensemble,"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_setup(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--config", s(&cfg), "--out", s(&out), "--param", "lambda_safe", "--values", "0.01,0.1,1",
    ]);
    let csv = std::fs::read_to_string(out.join("sweep_lambda_safe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");

    ok(&[
        "sweep", "--config", s(&cfg), "--out", s(&out), "--param", "beta", "--gt", "unsafe", "--category",
        "Religion", "--values", "1,50",
    ]);
    let csv = std::fs::read_to_string(out.join("sweep_beta_unsafe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn counterfactualize_expands_originals() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.jsonl");
    let labels = r#"{"hate":"unsafe","toxicity":"unsafe","sexual":"safe","violence":"safe"}"#;
    std::fs::write(
        &input,
        format!(
            concat!(
                r#"{{"id":"a","text":"I can't stand Christian people.","identity":{{"category":"Religion","subgroup":"Christianity"}},"labels":{labels},"split":"train","origin":"original"}}"#,
                "\n",
                r#"{{"id":"b","text":"nice weather","labels":{labels},"split":"train","origin":"original"}}"#,
                "\n"
            ),
            labels = labels
        ),
    )
    .unwrap();
    let out = tmp.path().join("cf");
    let line = ok(&["counterfactualize", "--data", s(&input), "--out", s(&out)]);
    assert!(line.starts_with("counterfactualize:"), "{line}");
    let text = std::fs::read_to_string(out.join("counterfactualized.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let religion = rows.iter().filter(|r| r["identity"]["category"] == "Religion").count();
    assert!(religion > 2, "expected one row per religion subgroup, got {religion}");
    assert!(rows.iter().filter(|r| r["identity"]["category"] == "Religion").all(|r| r["labels"] == rows[0]["labels"]));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_setup(tmp.path());
    let t = tmp.path();

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["--threads", "0", "debias", "--config", s(&cfg)]), 1);
    assert_eq!(code(&["debias", "--config", s(&t.join("missing.json"))]), 1);
    assert_eq!(
        code(&["sweep", "--config", s(&cfg), "--out", s(&t.join("x")), "--param", "gamma", "--values", "1"]),
        1
    );
    assert_eq!(
        code(&["sweep", "--config", s(&cfg), "--out", s(&t.join("x")), "--param", "beta_safe", "--values", "1"]),
        1
    );

    let no_seed = t.join("no_seed.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("seed");
    for key in ["train", "validation", "test"] {
        let p = t.join("corpus").join(v["data"][key].as_str().unwrap());
        v["data"][key] = json!(p);
    }
    std::fs::write(&no_seed, v.to_string()).unwrap();
    assert_eq!(code(&["train-baseline", "--config", s(&no_seed), "--out", s(&t.join("y"))]), 1);

    let garbage = t.join("garbage.model.json");
    std::fs::write(&garbage, "{not json").unwrap();
    let test = t.join("corpus/test.jsonl");
    assert_eq!(code(&["eval", "--model", s(&garbage), "--data", s(&test), "--out", s(&t.join("z"))]), 2);
}
