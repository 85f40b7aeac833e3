//! CLI surface checks through the built binary.

use std::path::Path;
use std::process::Command;

fn tapenet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tapenet"))
}

#[test]
fn oracle_check_prints_summary_and_exits_zero() {
    let out = tapenet()
        .args(["oracle-check", "copy", "--max-len", "30"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("copy: 30/30 lengths OK"), "{stdout}");
}

#[test]
fn oracle_check_all_tasks() {
    let out = tapenet()
        .args(["oracle-check", "all", "--max-len", "10"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    for task in ["copy", "reverse", "increment", "filter-even", "add"] {
        assert!(
            stdout.contains(&format!("{task}: 10/10 lengths OK")),
            "{stdout}"
        );
    }
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let out = tapenet().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = tapenet()
        .args(["oracle-check", "copy", "--warp-speed"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_eval_set_writes_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy10.evalset");
    let out = tapenet()
        .args([
            "gen-eval-set",
            "--task",
            "copy",
            "--length",
            "10",
            "--seed",
            "5",
        ])
        .arg("--out")
        .arg(&path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dataset = tapenet_core::dataset::EvalDataset::load(&path).unwrap();
    assert_eq!(dataset.instances.len(), 100);
    assert_eq!(dataset.length, 10);
}

fn train_tiny(dir: &Path, task: &str) -> std::path::PathBuf {
    let config_path = dir.join("config.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
task = "{task}"
steps = 400
batch_episodes = 4
eval_interval = 400
checkpoint_interval = 400
eval_lengths = [1]

[curriculum]
c_min = 1
c_max = 1
ramp_start = 1
ramp_end = 2
"#
        ),
    )
    .unwrap();
    let run_dir = dir.join("run");
    let out = tapenet()
        .arg("train")
        .arg(&config_path)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    run_dir.join("final.ckpt")
}

#[test]
fn train_eval_trace_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path(), "copy");
    assert!(ckpt.exists());

    let dataset_path = dir.path().join("copy2.evalset");
    let out = tapenet()
        .args([
            "gen-eval-set",
            "--task",
            "copy",
            "--length",
            "2",
            "--seed",
            "3",
        ])
        .arg("--out")
        .arg(&dataset_path)
        .output()
        .unwrap();
    assert!(out.status.success());

    let report_path = dir.path().join("report.jsonl");
    let out = tapenet()
        .arg("eval")
        .arg(&ckpt)
        .arg(&dataset_path)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("copy length 2:"), "{stdout}");
    assert!(report_path.exists());

    let out = tapenet()
        .arg("trace")
        .arg(&ckpt)
        .args(["copy", "-n", "2", "--seed", "1"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("task=copy L=5 t=0"), "{stdout}");
    assert!(stdout.contains("result:"), "{stdout}");
}

#[test]
fn eval_with_mismatched_task_exits_1_with_shape_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_tiny(dir.path(), "copy");

    let dataset_path = dir.path().join("add.evalset");
    let out = tapenet()
        .args([
            "gen-eval-set",
            "--task",
            "add",
            "--length",
            "2",
            "--seed",
            "3",
        ])
        .arg("--out")
        .arg(&dataset_path)
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = tapenet()
        .arg("eval")
        .arg(&ckpt)
        .arg(&dataset_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("shape mismatch"), "{stderr}");
}

#[test]
fn gradcheck_small_rounds_exits_zero() {
    let out = tapenet()
        .args(["gradcheck", "--rounds", "2"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("bilstm"), "{stdout}");
    assert!(stdout.contains("within tolerance"), "{stdout}");
}
