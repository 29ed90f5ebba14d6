use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
dataset.per_class = 12
dataset.speakers = 4
p1.epochs = 2
p2.epochs = 2
p3.epochs = 1
p3.train_pairs = 100
p3.val_pairs = 20
train.outliers = 12
";

fn voxpilot(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_voxpilot"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = voxpilot(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn data_train_compare_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("small.conf"), SMALL).unwrap();
    let cfg = ["--config", "small.conf"];

    let counts = ok(dir, &[&cfg[..], &["gen-data", "--out", "data"]].concat());
    assert!(counts.lines().all(|l| l.ends_with(" 12")), "{counts}");
    let counts = ok(dir, &[&cfg[..], &["augment", "--data", "data", "--out", "aug"]].concat());
    assert!(counts.lines().all(|l| l.ends_with(" 60")), "{counts}");
    let manifest = fs::read_to_string(dir.join("aug/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 360);

    ok(dir, &[&cfg[..], &["train", "p2", "p3", "--data", "aug", "--models", "models"]].concat());
    for f in ["p2.vxp", "p3.vxp", "p3.vxs", "p2.log.jsonl", "p3.log.jsonl"] {
        assert!(dir.join("models").join(f).exists(), "{f}");
    }
    assert!(!dir.join("models/p1.vxp").exists());
    let log = fs::read_to_string(dir.join("models/p2.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let table = ok(dir, &[&cfg[..], &["compare", "--data", "aug", "--models", "models", "--out", "rep"]].concat());
    assert!(table.contains("unavail"), "{table}");
    let jsonl = fs::read_to_string(dir.join("rep/compare.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["available"], false);
    assert!(rows[1]["accuracy"].as_f64().is_some());
    assert!(!jsonl.contains("mean"), "timing must stay out of the metrics file");
    let timing = fs::read_to_string(dir.join("rep/timing.jsonl")).unwrap();
    assert_eq!(timing.lines().count(), 2);

    ok(dir, &[&cfg[..], &["eval", "--data", "aug", "--models", "models", "--out", "ev", "--pipeline", "p2"]].concat());
    let report = fs::read_to_string(dir.join("ev/p2.report.jsonl")).unwrap();
    assert!(report.starts_with("{\"record\":\"summary\",\"pipeline\":\"P2\""));
    assert_eq!(fs::read_to_string(dir.join("ev/p2.decisions.jsonl")).unwrap().lines().count(), 18);

    let out = voxpilot(dir, &["eval", "--data", "aug", "--models", "models", "--out", "ev", "--pipeline", "p1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unavailable"));
}

#[test]
fn rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = voxpilot(dir, &["train", "p9", "--data", "nowhere", "--models", "m"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p9"));

    fs::write(dir.join("bad.conf"), "audio.bands = many\n").unwrap();
    let out = voxpilot(dir, &["--config", "bad.conf", "gen-data", "--out", "d"]);
    assert!(!out.status.success());

    let out = voxpilot(dir, &["eval", "--data", "nowhere", "--models", "m", "--out", "o"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.tsv"));
}

#[test]
fn replays_a_command_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("log.txt"), "command\ntakeoff\nup 20\n\nbogus\nforward 30\nland\n").unwrap();
    let out = ok(dir, &["sim", "--replay", "log.txt"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        &lines[..6],
        ["command -> ok", "takeoff -> ok", "up 20 -> ok", "bogus -> error", "forward 30 -> ok", "land -> ok"]
    );
    let state: serde_json::Value = serde_json::from_str(lines[6]).unwrap();
    assert_eq!((state["x"].as_i64(), state["z"].as_i64()), (Some(30), Some(0)));
    assert_eq!(state["flying"], false);
}
