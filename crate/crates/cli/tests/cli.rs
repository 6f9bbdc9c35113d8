use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/ddi_mini")
}

fn rcguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcguide"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn config_arg() -> String {
    fixture().join("config.json").display().to_string()
}

/// Copies the fixture config with `edit` applied, keeping paths pointing at the fixture.
fn edited_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> String {
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(fixture().join("config.json")).unwrap()).unwrap();
    for key in ["corpus", "predictions", "kg_triples", "kg_embeddings"] {
        let p = fixture().join(cfg[key].as_str().unwrap());
        cfg[key] = Value::String(p.display().to_string());
    }
    cfg["lisa"]["importance"] = Value::String(fixture().join("importance.tsv").display().to_string());
    edit(&mut cfg);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn run_all_writes_every_phase_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_arg = out.display().to_string();
    let run = rcguide(&["--config", &config_arg(), "--output-dir", &out_arg, "run-all"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("d_error=16"), "{stdout}");
    for phase in ["select", "analyze", "remediate", "mimic", "annotate", "curriculum"] {
        assert!(out.join(phase).join("manifest.json").is_file(), "{phase}");
    }
    let plan = std::fs::read(out.join("curriculum/training_plan.json")).unwrap();
    assert_eq!(plan, std::fs::read(fixture().join("golden/training_plan.json")).unwrap());

    let report = rcguide(&["--output-dir", &out_arg, "report"]);
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("Difficulty histogram"), "{text}");
    assert!(text.contains("ddi-h08: discarded_ambiguous"), "{text}");
}

#[test]
fn phases_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().join("out").display().to_string();
    for phase in ["select", "analyze", "remediate"] {
        let o = rcguide(&["--config", &config_arg(), "--output-dir", &out_arg, phase]);
        assert!(o.status.success(), "{phase}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let d_rem = std::fs::read(dir.path().join("out/remediate/d_rem.jsonl")).unwrap();
    assert_eq!(d_rem, std::fs::read(fixture().join("golden/d_rem.jsonl")).unwrap());
}

#[test]
fn missing_prior_phase_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().join("out").display().to_string();
    let o = rcguide(&["--config", &config_arg(), "--output-dir", &out_arg, "curriculum"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `annotate` first"));
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), |c| c["unknown_option"] = Value::Bool(true));
    let o = rcguide(&["--config", &cfg, "select"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(rcguide(&["select"]).status.code(), Some(1));
}

#[test]
fn remote_backend_without_key_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_arg = dir.path().join("out").display().to_string();
    let o = rcguide(&["--config", &config_arg(), "--output-dir", &out_arg, "--backend", "remote", "run-all"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn per_instance_backend_failures_exit_2_after_writing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), |c| {
        c["backend"]["mock"]["prose_ids"] = serde_json::json!(["ddi-h01"]);
        c["output_dir"] = Value::String(dir.path().join("out").display().to_string());
    });
    let o = rcguide(&["--config", &cfg, "run-all"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let records = std::fs::read_to_string(dir.path().join("out/remediate/records.jsonl")).unwrap();
    let h01 = records.lines().find(|l| l.contains("\"ddi-h01\"")).unwrap();
    assert!(h01.contains("dropped_backend_failure"), "{h01}");
    assert!(dir.path().join("out/curriculum/training_plan.json").is_file());
}

#[test]
fn ablation_flags_reach_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_arg = out.display().to_string();
    for phase in ["select", "analyze"] {
        assert!(rcguide(&["--config", &config_arg(), "--output-dir", &out_arg, phase]).status.success());
    }
    let o = rcguide(&["--config", &config_arg(), "--output-dir", &out_arg, "--no-guidance", "--no-kg", "remediate"]);
    assert!(o.status.success());
    let d_rem = std::fs::read_to_string(out.join("remediate/d_rem.jsonl")).unwrap();
    assert!(!d_rem.contains("Guidance:"));
    assert!(!d_rem.contains("Facts:"));
    assert!(d_rem.contains("[###NEW_NEG]"));
}

#[test]
fn lisa_plan_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let imp = dir.path().join("imp.tsv");
    std::fs::write(&imp, "0\t0.5\n1\t2.0\n2\t1.0\n3\t3.0\n").unwrap();
    let out = dir.path().join("plan.json");
    let o = rcguide(&[
        "lisa-plan",
        "--importance",
        &imp.display().to_string(),
        "--k",
        "2",
        "--lambda",
        "0.5",
        "--out",
        &out.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(plan["selected"], serde_json::json!([1, 3]));
    assert_eq!(plan["reg_diag"], serde_json::json!([0.0, 0.5, 0.0, 0.5]));
}
