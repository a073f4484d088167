use std::path::Path;
use std::process::{Command, Output};

use aura_core::io::load_dataset;

fn aura(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_aura"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("AURA_VLM_API_KEY")
        .output()
        .unwrap();
    out
}

fn ok(args: &[&str]) -> String {
    let out = aura(args);
    assert!(
        out.status.success(),
        "aura {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let scene_cfg = dir.path().join("scenes.toml");
    std::fs::write(&scene_cfg, "max_objects = 3\nconversations_per_scene = 4\n").unwrap();
    ok(&["synth", "build", "--config", s(&scene_cfg), "--train", "3", "--val", "2", "--seed", "5", "--out", s(&data)]);
    let train = load_dataset(&data.join("train")).unwrap();
    assert_eq!(train.len(), 3);
    assert!(train.iter().all(|t| t.conversations.len() <= 4 && t.objects.len() <= 3));
    assert_eq!(load_dataset(&data.join("val")).unwrap().len(), 2);

    let train_cfg = dir.path().join("train.toml");
    std::fs::write(
        &train_cfg,
        "total_steps = 4\nwarmup_steps = 1\naccumulation_steps = 2\neval_every = 2\ncheckpoint_every = 2\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let stdout = ok(&[
        "train", "--config", s(&train_cfg), "--data", s(&data.join("train")), "--val", s(&data.join("val")), "--out", s(&run),
    ]);
    assert!(stdout.contains("trained 4 steps"));
    let log = std::fs::read_to_string(run.join(aura_cli::METRICS_FILE)).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    assert!(records[1].get("eval").is_some() && records[0].get("eval").is_none());
    assert!(run.join("step-000002.ckpt").exists() && run.join("step-000004.ckpt").exists());

    let resumed = dir.path().join("resumed");
    let longer = dir.path().join("longer.toml");
    std::fs::write(&longer, "total_steps = 6\nwarmup_steps = 1\naccumulation_steps = 2\n").unwrap();
    let stdout = ok(&[
        "train", "--config", s(&longer), "--data", s(&data.join("train")), "--out", s(&resumed),
        "--resume", s(&run.join("step-000002.ckpt")),
    ]);
    assert!(stdout.contains("trained 6 steps"));
    assert_eq!(std::fs::read_to_string(resumed.join(aura_cli::METRICS_FILE)).unwrap().lines().count(), 4);

    let csv = dir.path().join("report.csv");
    let table = ok(&[
        "eval", "--checkpoint", s(&run.join("final.ckpt")), "--checkpoint", s(&resumed.join("final.ckpt")),
        "--data", s(&data.join("val")), "--out", s(&csv),
    ]);
    assert!(table.starts_with("Method"));
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("final,"));
}

#[test]
fn genpipe_mock_run_fills_the_review_store() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "build", "--train", "3", "--val", "0", "--out", s(&data)]);
    let store = dir.path().join("store");
    let report = dir.path().join("report.json");
    let train = data.join("train");
    let args = ["genpipe", "run", "--data", s(&train), "--out", s(&store), "--mock", "--report", s(&report)];
    let stdout = ok(&args);
    assert!(stdout.contains("enqueued 3"), "{stdout}");
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["enqueued"].as_array().unwrap().len(), 3);
    assert!(ok(&args).contains("enqueued 0, already present 3"));

    let export = dir.path().join("export");
    assert!(ok(&["review", "export", "--store", s(&store), "--out", s(&export)]).contains("exported 0"));
    assert_eq!(load_dataset(&export).unwrap().len(), 0);
}

#[test]
fn genpipe_without_mock_needs_endpoint_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "build", "--train", "1", "--val", "0", "--out", s(&data)]);
    let store = s(&dir.path().join("store")).to_string();
    let train = s(&data.join("train")).to_string();
    let out = aura(&["genpipe", "run", "--data", &train, "--out", &store]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--endpoint"));
    let out = aura(&["genpipe", "run", "--data", &train, "--out", &store, "--endpoint", "http://127.0.0.1:9/v1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("AURA_VLM_API_KEY"));
}
