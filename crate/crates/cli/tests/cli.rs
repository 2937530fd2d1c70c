use std::path::PathBuf;
use std::process::{Command, Output};

fn memlab(args: &[&str], out: &PathBuf) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memlab"))
        .args(args)
        .env("MEMLAB_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("memlab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn exit_codes() {
    let out = scratch("codes");
    assert_eq!(memlab(&["verify-pa", "--n", "5", "--t", "2"], &out).status.code(), Some(0));
    assert_eq!(memlab(&["attack", "bhk"], &out).status.code(), Some(2), "missing seed");
    assert_eq!(memlab(&["attack", "nope", "--seed", "1"], &out).status.code(), Some(2));
    assert_eq!(memlab(&["verify-pa", "--n", "5", "--t", "9"], &out).status.code(), Some(2));
    assert_eq!(memlab(&["sweep", "bhk", "--seed", "1"], &out).status.code(), Some(2), "empty grid");
    assert_eq!(memlab(&["run-protocol", "--seed", "1", "--mu", "2"], &out).status.code(), Some(2));

    let bad = out.join("bad.toml");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(&bad, "[experiment]\nseed = 1\n[protocol]\nrounds = \"many\"\n").unwrap();
    let o = memlab(&["run-protocol", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn report_round_trip_and_tamper_detection() {
    let out = scratch("report");
    let o = memlab(&["attack", "bhk", "--trials", "300", "--seed", "9"], &out);
    assert!(o.status.success());
    let json = out.join("bhk.json");
    assert!(out.join("bhk.csv").exists());
    assert_eq!(memlab(&["report", json.to_str().unwrap()], &out).status.code(), Some(0));

    let text = std::fs::read_to_string(&json).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["metrics"][0]["mean"] = serde_json::json!(0.5);
    std::fs::write(&json, serde_json::to_string(&value).unwrap()).unwrap();
    assert_eq!(memlab(&["report", json.to_str().unwrap()], &out).status.code(), Some(3));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn out_flag_beats_environment() {
    let env_dir = scratch("env");
    let flag_dir = scratch("flag");
    let o = memlab(
        &["verify-pa", "--n", "3", "--out", flag_dir.to_str().unwrap()],
        &env_dir,
    );
    assert!(o.status.success());
    assert!(flag_dir.join("verify-pa.json").exists());
    assert!(!env_dir.exists());
    let _ = std::fs::remove_dir_all(&flag_dir);
}
