use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn nsgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsgame")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn chsh_values() {
    let game = fixture("chsh.json");
    for (model, expected) in [("ns", 1.0), ("hrns", 1.0), ("subns", 1.0)] {
        let out = nsgame(&["value", "--game", path(&game), "--model", model]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let v = json(&out)["value"].as_f64().unwrap();
        assert!((v - expected).abs() < 1e-7, "{model}: {v}");
    }
    let out = nsgame(&["value", "--game", path(&game), "--model", "subns-delta", "--delta", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["value"].as_f64().unwrap() - 1.0).abs() < 1e-7);
}

#[test]
fn check_exit_codes() {
    let game = fixture("chsh.json");
    let pr = nsgame(&["check", "--game", path(&game), "--strategy", path(&fixture("pr_box.json")), "--model", "ns"]);
    assert_eq!(pr.status.code(), Some(0));
    assert_eq!(json(&pr)["pass"], Value::Bool(true));

    let sig = fixture("signaling.json");
    let out = nsgame(&["check", "--game", path(&game), "--strategy", path(&sig), "--model", "ns"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["pass"], Value::Bool(false));

    let out = nsgame(&["check", "--game", path(&game), "--strategy", path(&sig), "--model", "subns-delta"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nsgame(&["check", "--game", path(&sig), "--strategy", path(&sig), "--model", "ns"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let out = nsgame(&["value", "--game", "/nonexistent/game.json", "--model", "ns"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nsgame(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_pipeline_check_round() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let s = dir.path().join("s.json");
    let out = nsgame(&["gen", "--seed", "7", "--k", "2", "--q", "2", "--a", "2", "--out", path(&g), "--strategy", "subns", "--strategy-out", path(&s)]);
    assert_eq!(out.status.code(), Some(0));
    let again = dir.path().join("g2.json");
    nsgame(&["gen", "--seed", "7", "--k", "2", "--q", "2", "--a", "2", "--out", path(&again)]);
    assert_eq!(std::fs::read(&g).unwrap(), std::fs::read(&again).unwrap());

    let out = nsgame(&["check", "--game", path(&g), "--strategy", path(&s), "--model", "subns"]);
    assert_eq!(out.status.code(), Some(0));

    let trace = dir.path().join("trace.json");
    let pss = dir.path().join("pss.json");
    let good = dir.path().join("good.json");
    let out = nsgame(&[
        "pipeline", "--game", path(&g), "--strategy", path(&s), "--delta", "0.4", "--trace", path(&trace), "--out", path(&pss),
        "--good-game-out", path(&good),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert!(report["invariants"].as_array().unwrap().iter().all(|c| c["pass"] == Value::Bool(true)));
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(t["delta"].as_f64(), Some(0.4));

    let out = nsgame(&["check", "--game", path(&good), "--strategy", path(&pss), "--model", "hrns", "--extended"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = nsgame(&["check", "--game", path(&good), "--strategy", path(&pss), "--model", "hrns"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reduce_then_lift() {
    let dir = tempfile::tempdir().unwrap();
    let reduced = dir.path().join("r.json");
    let opt = dir.path().join("opt.json");
    let lifted = dir.path().join("lifted.json");
    let game = fixture("chsh.json");
    let out = nsgame(&["reduce", "--game", path(&game), "--out", path(&reduced), "--optimal-out", path(&opt)]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["queries"], serde_json::json!([4, 9]));
    assert!((r["ns_value"].as_f64().unwrap() - 1.0).abs() < 1e-7);

    let out = nsgame(&["lift", "--game", path(&game), "--strategy", path(&opt), "--out", path(&lifted)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let l = json(&out);
    assert_eq!(l["subns"], Value::Bool(true));
    assert!((l["value"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let out = nsgame(&["check", "--game", path(&game), "--strategy", path(&lifted), "--model", "subns"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn approx_subns_brackets_exact() {
    let game = fixture("chsh.json");
    let out = nsgame(&["approx-subns", "--game", path(&game), "--eps", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out)["value"].as_f64().unwrap();
    assert!((v - 1.0).abs() <= 0.1 + 1e-9, "{v}");
}
