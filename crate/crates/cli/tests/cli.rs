use std::path::Path;
use std::process::{Command, Output};

use adcr_cli::{RunConfig, RunManifest};

const SMALL: &str = r#"
seed = 5

[world]
num_users = 60
num_ads = 60
slots = 3
warmup_impressions_per_user = 50

[log]
impressions = 20000
holdout = 5000

[train.jac.cr.bridge]
k = 512

[simulate.experiment]
num_requests = 2000
retrieval_m = 30
baseline = "no-cr"

[correlate]
eval_requests = 2000

[correlate.analysis.experiment]
num_requests = 2000
retrieval_m = 30
"#;

fn adcr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adcr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> RunManifest {
    let out = adcr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is the manifest")
}

fn small_config(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    let base = ["--config", "small.toml", "--out-dir", "run", "--plot"];
    let gen = ok(d, &[&["gen"], &base[..]].concat());
    assert_eq!(gen.seed, 5);
    for f in ["world.jsonl", "world_manifest.json", "log.jsonl", "holdout.jsonl", "manifest-gen.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }

    let train = ok(d, &[&["train"], &base[..]].concat());
    for key in ["jac", "ar_plus", "cr_plus", "historical_ctr", "curve", "curve_plot"] {
        let f = &train.artifacts[key];
        assert!(d.join("run").join(f).exists(), "{key}");
    }

    let eval = ok(d, &[&["eval"], &base[..]].concat());
    assert!(eval.inputs["log"].ends_with("holdout.jsonl"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/eval.json")).unwrap()).unwrap();
    assert_eq!(report["impressions"], 5000);
    let auc = report["auc"].as_f64().unwrap();
    assert!(auc > 0.4 && auc < 1.0, "{auc}");

    let sim = ok(d, &[&["simulate"], &base[..]].concat());
    assert!(sim.artifacts.contains_key("reports_plot"));
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/reports.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);
    let latency = std::fs::read_to_string(d.join("run/latency.json")).unwrap();
    assert!(latency.contains("\"rt_ns\": 107000000"), "{latency}");

    ok(d, &[&["correlate"], &base[..]].concat());
    let csv = std::fs::read_to_string(d.join("run/correlation.csv")).unwrap();
    for name in ["random", "oracle-small", "oracle-large", "sharp-small", "sharp-large", "oracle"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{name},"))), "{name}\n{csv}");
    }
}

#[test]
fn eval_accepts_a_builtin_ranker_and_an_explicit_checkpoint_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(d, &["gen", "-c", "small.toml", "-o", "r"]);
    let m = ok(d, &["eval", "-c", "small.toml", "-o", "r", "--ranker", "shown", "--log", "r/log.jsonl"]);
    assert!(m.inputs["log"].ends_with("log.jsonl"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r/eval.json")).unwrap()).unwrap();
    // Scoring the shown creative highest matches every impression.
    assert_eq!(report["sctr_matched"], report["impressions"]);

    let out = adcr(d, &["eval", "-c", "small.toml", "-o", "r", "--checkpoint", "missing.ckpt"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "seed = 1\n[world]\nnum_userz = 3\n").unwrap();
    let out = adcr(d, &["gen", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_userz"));

    std::fs::write(d.join("slots.toml"), "[world]\nnum_ads = 10\nslots = 4\n").unwrap();
    let out = adcr(d, &["gen", "--config", "slots.toml"]);
    assert_eq!(out.status.code(), Some(2));

    let out = adcr(d, &["gen", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    // No log in an empty output directory.
    let out = adcr(d, &["train", "-o", "empty"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_replays_to_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    ok(d, &["gen", "-c", "small.toml", "-o", "a", "--seed", "9"]);
    let m = ok(d, &["gen", "-c", "a/manifest-gen.json", "-o", "b"]);
    assert_eq!(m.seed, 9);
    for f in ["world.jsonl", "log.jsonl", "holdout.jsonl"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let a: RunConfig = RunManifest::read(&d.join("a/manifest-gen.json")).unwrap().config;
    assert_eq!(a, m.config);
}

#[test]
fn presets_subcommand_lists_and_prints() {
    let dir = tempfile::tempdir().unwrap();
    let out = adcr(dir.path(), &["presets"]);
    let names = String::from_utf8(out.stdout).unwrap();
    assert!(names.lines().any(|l| l == "counterexample"));
    let out = adcr(dir.path(), &["presets", "table1-latency"]);
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.simulate.arms.len(), 4);
}
