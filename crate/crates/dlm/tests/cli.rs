//! End-to-end checks of the command-line surface: artifacts, exit codes,
//! and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dlm")
}

fn fixture() -> String {
    format!(
        "{}/tests/fixtures/task0_transcript.json",
        env!("CARGO_MANIFEST_DIR")
    )
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary launches")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temp paths are UTF-8")
}

fn gen_instance(dir: &Path) -> PathBuf {
    let out = dir.join("instance.json");
    let output = run(&[
        "gen",
        "--seed",
        "7",
        "--arms",
        "24",
        "--budget",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert!(output.status.success());
    out
}

#[test]
fn gen_is_byte_identical_per_seed_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let output = run(&["gen", "--seed", "9", "--out", path_str(out)]);
        assert!(output.status.success());
        let summary = String::from_utf8_lossy(&output.stdout);
        assert!(summary.contains("48 arms"), "summary line: {summary}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.json.manifest.json").exists());

    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(parsed["arms"].as_array().unwrap().len(), 48);
    assert_eq!(parsed["budget"], 5);
}

#[test]
fn gen_rejects_budget_above_arm_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let output = run(&[
        "gen",
        "--seed",
        "1",
        "--arms",
        "4",
        "--budget",
        "9",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn run_emits_trace_report_reward_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let instance = gen_instance(dir.path());
    let out_dir = dir.path().join("run");
    let scripted = format!("scripted:{}", fixture());
    let output = run(&[
        "run",
        "--task",
        "0",
        "--instance",
        path_str(&instance),
        "--llm",
        &scripted,
        "--seed",
        "11",
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert!(output.status.success());

    let reward = std::fs::read_to_string(out_dir.join("selected_reward.txt")).unwrap();
    assert_eq!(reward.trim(), "state * 0.1 + 2 * state * agent_feats[11]");

    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("trace.json")).unwrap())
            .unwrap();
    assert_eq!(trace["task_index"], 0);
    assert_eq!(trace["generation_calls"], 4);
    assert_eq!(trace["reflection_calls"], 2);

    let report = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(report.contains("Selected reward"));
    assert!(report.contains("Category: Ages"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn run_no_reflection_uses_a_single_query() {
    let dir = tempfile::tempdir().unwrap();
    let instance = gen_instance(dir.path());
    let out_dir = dir.path().join("run");
    let scripted = format!("scripted:{}", fixture());
    let output = run(&[
        "run",
        "--task",
        "0",
        "--instance",
        path_str(&instance),
        "--llm",
        &scripted,
        "--no-reflection",
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert!(output.status.success());
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("trace.json")).unwrap())
            .unwrap();
    assert_eq!(trace["generation_calls"], 1);
    assert_eq!(trace["reflection_calls"], 0);
}

#[test]
fn run_rejects_unknown_task_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let instance = gen_instance(dir.path());
    let scripted = format!("scripted:{}", fixture());
    let output = run(&[
        "run",
        "--task",
        "99",
        "--instance",
        path_str(&instance),
        "--llm",
        &scripted,
        "--out-dir",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn exhausted_transcript_is_a_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let instance = gen_instance(dir.path());
    let short = dir.path().join("short.json");
    std::fs::write(
        &short,
        r#"["Python Code: '$$$ state $$$'", "The best reward function is at index: 0"]"#,
    )
    .unwrap();
    let scripted = format!("scripted:{}", path_str(&short));
    let output = run(&[
        "run",
        "--task",
        "0",
        "--instance",
        path_str(&instance),
        "--llm",
        &scripted,
        "--out-dir",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(output.status.code(), Some(3));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("transcript exhausted"), "{err}");
}

#[test]
fn eval_writes_results_with_exact_anchor_columns() {
    let dir = tempfile::tempdir().unwrap();
    let reward_file = dir.path().join("candidate.txt");
    std::fs::write(
        &reward_file,
        "state * 0.1 + if_(state) * 2 * agent_feats[11]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("eval");
    let reward_spec = format!("cand={}", path_str(&reward_file));
    let output = run(&[
        "eval",
        "--tasks",
        "0",
        "--seeds",
        "6",
        "--trials",
        "6",
        "--steps",
        "5",
        "--arms",
        "16",
        "--budget",
        "2",
        "--reward",
        &reward_spec,
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("results.json")).unwrap())
            .unwrap();
    let methods = results["tasks"][0]["methods"].as_array().unwrap();
    let by_name = |name: &str| -> &serde_json::Value {
        methods
            .iter()
            .find(|m| m["name"] == name)
            .unwrap_or_else(|| panic!("method {name} present"))
    };
    assert_eq!(by_name("random")["iqm"], 0.0);
    assert_eq!(by_name("base")["iqm"], 1.0);
    assert!(by_name("cand").get("iqm").is_some());

    let report = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(report.contains("| Task | Label |"));
    assert!(report.contains("base > random"));
}

#[test]
fn config_file_fills_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"seeds": 4, "trials": 3, "steps": 4, "arms": 12, "budget": 2, "epochs": 2, "steps_per_epoch": 20}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("eval");
    let output = run(&[
        "eval",
        "--tasks",
        "0",
        "--config",
        path_str(&config),
        "--seeds",
        "5", // flag beats the file
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let effective = &manifest["config"];
    assert_eq!(effective["protocol"]["n_seeds"], 5);
    assert_eq!(effective["protocol"]["trials_per_seed"], 3);
    assert_eq!(effective["n_arms"], 12);
    assert_eq!(effective["train"]["epochs"], 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"not_a_knob": 1}"#).unwrap();
    let output = run(&[
        "eval",
        "--tasks",
        "0",
        "--config",
        path_str(&bad),
        "--out-dir",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn eval_rejects_missing_reward_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "eval",
        "--tasks",
        "0",
        "--seeds",
        "2",
        "--reward",
        "missing.txt",
        "--out-dir",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("reward artifact"));
}

#[test]
fn oracle_passes_and_rejects_zero_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("oracle");
    let output = run(&[
        "oracle",
        "--cases",
        "40",
        "--seed",
        "5",
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("mismatches vs brute force: 0"), "{stdout}");
    assert!(out_dir.join("verification.json").exists());

    let output = run(&["oracle", "--cases", "0"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn oracle_non_monotone_stress_is_informational() {
    let output = run(&["oracle", "--cases", "30", "--seed", "5", "--non-monotone"]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("non-monotone"));
}

#[test]
fn report_rerenders_from_trace_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let instance = gen_instance(dir.path());
    let run_dir = dir.path().join("run");
    let scripted = format!("scripted:{}", fixture());
    assert!(run(&[
        "run",
        "--task",
        "0",
        "--instance",
        path_str(&instance),
        "--llm",
        &scripted,
        "--out-dir",
        path_str(&run_dir),
    ])
    .status
    .success());

    let trace_path = run_dir.join("trace.json");
    let output = run(&["report", "--trace", path_str(&trace_path)]);
    assert!(output.status.success());
    let rendered = String::from_utf8_lossy(&output.stdout);
    let original = std::fs::read_to_string(run_dir.join("report.md")).unwrap();
    assert_eq!(rendered, original, "re-render must reproduce the report");

    let output = run(&["report"]);
    assert_eq!(output.status.code(), Some(2));
}
