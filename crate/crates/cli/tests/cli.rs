//! The `rplan` binary end to end: exit codes, stage gating, determinism and
//! the file hand-offs between subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rplan_core::report::{read_sweep_csv, LayerCurveRow};
use serde_json::{json, Value};

fn rplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rplan")).args(args).output().expect("spawn rplan")
}

fn ok(args: &[&str]) -> String {
    let out = rplan(args);
    assert!(
        out.status.success(),
        "rplan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    rplan(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

#[test]
fn generated_trace_validates_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.rpt");
    ok(&["synth", "generate", "--per-level", "20", "--out", s(&trace)]);
    let summary = ok(&["trace", "validate", s(&trace)]);
    assert!(summary.contains("100"), "summary mentions the record count: {summary}");

    let (train, test) = (dir.path().join("train.rpt"), dir.path().join("test.rpt"));
    ok(&["trace", "split", s(&trace), "--train-out", s(&train), "--test-out", s(&test), "--seed", "3"]);
    ok(&["trace", "validate", s(&train)]);
    ok(&["trace", "validate", s(&test)]);
    let sizes = (fs::metadata(&train).unwrap().len(), fs::metadata(&test).unwrap().len());
    assert!(sizes.0 > 8 * sizes.1, "9:1 split sizes {sizes:?}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    assert_eq!(code(&["pipeline", "run", "--config", s(&dir.path().join("missing.json"))]), 2);

    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&["pipeline", "run", "--config", s(&cfg)]), 2);

    write_json(&cfg, &json!({"output_dir": s(&dir.path().join("o")), "mock": {}, "bogus": 1}));
    assert_eq!(code(&["pipeline", "run", "--config", s(&cfg)]), 2);

    // steering without the directions stage
    write_json(&cfg, &json!({"output_dir": s(&dir.path().join("o")), "mock": {}, "steering": {}}));
    assert_eq!(code(&["pipeline", "run", "--config", s(&cfg)]), 2);

    write_json(&cfg, &json!({"output_dir": s(&dir.path().join("o"))}));
    assert_eq!(code(&["pipeline", "run", "--config", s(&cfg)]), 2);

    assert_eq!(code(&["pipeline", "preset", "--name", "nope", "--output-dir", "x", "--out", s(&cfg)]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
}

#[test]
fn stage_failure_exits_three_with_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.rpt");
    fs::write(&trace, b"RPLTgarbage").unwrap();
    let out_dir = dir.path().join("o");
    let cfg = dir.path().join("cfg.json");
    write_json(&cfg, &json!({"output_dir": s(&out_dir), "trace_path": s(&trace), "probe": {}}));
    assert_eq!(code(&["pipeline", "run", "--config", s(&cfg)]), 3);
    let manifest: Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"][0]["name"], "load");
    assert_eq!(manifest["stages"][0]["status"], "failed");
    assert!(manifest["stages"][0]["error"].as_str().is_some());
}

#[test]
fn only_requested_stages_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let cfg = dir.path().join("cfg.json");
    write_json(
        &cfg,
        &json!({"output_dir": s(&out_dir), "mock": {"per_level": 40}, "probe": {}, "formats": ["csv", "json"]}),
    );
    ok(&["pipeline", "run", "--config", s(&cfg)]);
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["layer_curve.csv", "manifest.json", "probes.json"]);

    let curve: Vec<LayerCurveRow> = rplan_core::report::read_csv(out_dir.join("layer_curve.csv")).unwrap();
    assert_eq!(curve.len(), 6);

    // charts are drawn from written reports, so svg alone is a config error
    write_json(&cfg, &json!({"output_dir": s(&out_dir), "mock": {"per_level": 40}, "probe": {}, "formats": ["svg"]}));
    assert_eq!(code(&["pipeline", "run", "--config", s(&cfg)]), 2);
    write_json(&cfg, &json!({"output_dir": s(&out_dir), "mock": {"per_level": 40}, "probe": {}, "formats": ["csv", "svg"]}));
    fs::remove_dir_all(&out_dir).unwrap();
    ok(&["pipeline", "run", "--config", s(&cfg)]);
    assert!(out_dir.join("layer_curve.svg").is_file());
    assert!(!out_dir.join("probes.json").exists());
}

#[test]
fn pipeline_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let cfg = dir.path().join(format!("{run}.json"));
        let out_dir = dir.path().join(run);
        ok(&["pipeline", "preset", "--name", "efficient-inference", "--output-dir", s(&out_dir), "--out", s(&cfg)]);
        ok(&["pipeline", "run", "--config", s(&cfg)]);
        let m: Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
        manifests.push(m);
    }
    assert!(!manifests[0]["files"].as_array().unwrap().is_empty());
    assert_eq!(manifests[0]["files"], manifests[1]["files"]);
}

#[test]
fn steering_commands_hand_off_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "generate", "--per-level", "30", "--out", s(&p("t.rpt"))]);
    ok(&["directions", "extract", "--trace", s(&p("t.rpt")), "--out", s(&p("dirs.json"))]);
    ok(&["synth", "prompts", "--levels", "1,3", "--per-level", "4", "--out", s(&p("prompts.jsonl"))]);
    ok(&[
        "steer", "sweep", "--prompts", s(&p("prompts.jsonl")), "--dirs", s(&p("dirs.json")), "--lambdas", "-0.1,0,0.1",
        "--scorer", "completion", "--out", s(&p("sweep.csv")),
    ]);
    let rows = read_sweep_csv(p("sweep.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.lambda).collect::<Vec<_>>(), [-0.1, 0.0, 0.1]);
    assert!(rows.windows(2).all(|w| w[0].mean_reasoning_tokens < w[1].mean_reasoning_tokens));
    assert!(rows.iter().all(|r| r.n == 8 && r.score == Some(1.0)));

    ok(&[
        "steer", "logits", "--prompts", s(&p("prompts.jsonl")), "--dirs", s(&p("dirs.json")), "--lambdas", "-0.1,0.1",
        "--out", s(&p("logits.json")),
    ]);
    let logits: Value = serde_json::from_slice(&fs::read(p("logits.json")).unwrap()).unwrap();
    assert!(logits["rows"][0]["end_think_delta"]["mean"].as_f64().unwrap() > 0.0);
    assert!(logits["rows"][1]["end_think_delta"]["mean"].as_f64().unwrap() < 0.0);

    ok(&["steer", "gamma", "--prompts", s(&p("prompts.jsonl")), "--gamma", "4", "--out", s(&p("gamma.csv"))]);
    assert_eq!(fs::read_to_string(p("gamma.csv")).unwrap().lines().count(), 9);

    ok(&["report", "charts", "--reports", s(dir.path()), "--out-dir", s(&p("charts"))]);
    assert!(p("charts").join("sweep.svg").is_file());
}

#[test]
fn probe_and_overthink_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "generate", "--per-level", "60", "--out", s(&p("t.rpt"))]);
    ok(&["probe", "train", "--trace", s(&p("t.rpt")), "--out", s(&p("probes.json")), "--curve", s(&p("curve.csv"))]);
    let probes: Value = serde_json::from_slice(&fs::read(p("probes.json")).unwrap()).unwrap();
    assert_eq!(probes["probes"].as_array().unwrap().len(), 6);
    ok(&["probe", "eval", "--probes", s(&p("probes.json")), "--trace", s(&p("t.rpt"))]);

    ok(&["synth", "pairs", "--pairs", "40", "--out", s(&p("pairs.rpt")), "--manifest", s(&p("pairs.jsonl"))]);
    ok(&[
        "overthink", "detect", "--probes", s(&p("probes.json")), "--trace", s(&p("pairs.rpt")), "--manifest",
        s(&p("pairs.jsonl")), "--out", s(&p("ot.json")),
    ]);
    let report: Value = serde_json::from_slice(&fs::read(p("ot.json")).unwrap()).unwrap();
    assert_eq!(report["per_pair"].as_array().unwrap().len(), 40);
    assert!(report["auc"].as_f64().unwrap() > 0.9);

    assert_eq!(
        code(&[
            "overthink", "detect", "--probes", s(&p("probes.json")), "--layer", "0", "--trace", s(&p("pairs.rpt")),
            "--manifest", s(&p("pairs.jsonl")), "--quantile", "0", "--out", s(&p("x.json")),
        ]),
        2
    );
}

#[test]
fn corrupt_traces_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.rpt");
    ok(&["synth", "generate", "--per-level", "2", "--out", s(&trace)]);
    let bytes = fs::read(&trace).unwrap();

    let bad = dir.path().join("bad.rpt");
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"NOPE");
    fs::write(&bad, &magic).unwrap();
    let out = rplan(&["trace", "validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(code(&["trace", "validate", s(&bad)]), 3);
    assert_eq!(code(&["trace", "validate", s(&dir.path().join("absent.rpt"))]), 3);
}
