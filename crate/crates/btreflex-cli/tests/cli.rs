use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_btreflex"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../btreflex/fixtures")
}

#[test]
fn run_reference_task_succeeds_and_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", "--task", "2", "--transcript"])
        .arg(fixtures().join("transcripts/t2.yaml"))
        .arg("--output")
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for artifact in ["trajectory.jsonl", "narrative.txt", "verdicts.json", "traces.json", "final_tree.xml"] {
        assert!(out.path().join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn unknown_task_is_a_config_error() {
    let status = bin()
        .args(["run", "--task", "99", "--transcript"])
        .arg(fixtures().join("transcripts/t2.yaml"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn iteration_cap_violation_is_a_config_error() {
    let status = bin()
        .args(["run", "--task", "2", "--max-iters", "9", "--transcript"])
        .arg(fixtures().join("transcripts/t2.yaml"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn mock_provider_without_transcript_is_a_config_error() {
    let status = bin().args(["run", "--task", "2"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn empty_task_selection_is_a_config_error() {
    let status = bin()
        .args(["suite", "--tasks", "", "--transcript-dir"])
        .arg(fixtures().join("transcripts"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn suite_with_fixtures_reports_four_categories() {
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["suite", "--trials", "1", "--transcript-dir"])
        .arg(fixtures().join("transcripts"))
        .arg("--output")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["per_category"].as_array().unwrap().len(), 4);
    assert_eq!(report["sr"], 1.0);
}

#[test]
fn plot_data_emits_csv_and_rejects_empty_logs() {
    let dir = tempfile::tempdir().unwrap();
    let run_out = dir.path().join("run");
    bin()
        .args(["run", "--task", "2", "--transcript"])
        .arg(fixtures().join("transcripts/t2.yaml"))
        .arg("--output")
        .arg(&run_out)
        .status()
        .unwrap();
    let output = bin()
        .arg("plot-data")
        .arg(run_out.join("trajectory.jsonl"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let csv = String::from_utf8(output.stdout).unwrap();
    assert!(csv.starts_with("t,x,y,z\n"));
    assert!(csv.lines().count() > 4);

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let status = bin().arg("plot-data").arg(&empty).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn validate_bt_distinguishes_valid_from_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.xml");
    std::fs::write(
        &good,
        "<BehaviorTree><Sequence><Takeoff height=\"1\"/><Land/></Sequence></BehaviorTree>",
    )
    .unwrap();
    assert_eq!(bin().arg("validate-bt").arg(&good).status().unwrap().code(), Some(0));

    let bad = dir.path().join("bad.xml");
    std::fs::write(&bad, "<BehaviorTree><Sequence><Teleport/></Sequence></BehaviorTree>").unwrap();
    assert_eq!(bin().arg("validate-bt").arg(&bad).status().unwrap().code(), Some(1));
}

#[test]
fn exp_export_then_import_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let base_a = dir.path().join("a");
    let base_b = dir.path().join("b");
    let dump = dir.path().join("dump.jsonl");

    // Seed base A by running the flawed task 4 with an exp dir attached.
    let status = bin()
        .args(["run", "--task", "4", "--transcript"])
        .arg(fixtures().join("transcripts/t4.yaml"))
        .arg("--output")
        .arg(dir.path().join("out"))
        .arg("--exp-dir")
        .arg(&base_a)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    assert_eq!(
        bin().args(["exp", "export", "--dir"]).arg(&base_a).arg(&dump).status().unwrap().code(),
        Some(0)
    );
    let dumped = std::fs::read_to_string(&dump).unwrap();
    assert!(!dumped.trim().is_empty(), "expected at least one exported record");

    assert_eq!(
        bin().args(["exp", "import", "--dir"]).arg(&base_b).arg(&dump).status().unwrap().code(),
        Some(0)
    );
    let re_dump = dir.path().join("redump.jsonl");
    bin().args(["exp", "export", "--dir"]).arg(&base_b).arg(&re_dump).status().unwrap();
    assert_eq!(dumped, std::fs::read_to_string(&re_dump).unwrap());
}
