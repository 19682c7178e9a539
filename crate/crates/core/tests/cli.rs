use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;
use tempfile::tempdir;

fn twm(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_twm"));
    cmd.args(args).env_remove("TWM_SEED");
    if let Some(s) = seed {
        cmd.env("TWM_SEED", s);
    }
    cmd.output().unwrap()
}

fn write(path: &Path, v: serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn phantom_spec() -> serde_json::Value {
    json!({"n_samples": 8, "h": 32, "w": 32, "radius_ranges": [[8, 11], [2, 3]], "seed": 4})
}

#[test]
fn gen_train_eval_predict_round_trip() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    write(&d.join("spec.json"), phantom_spec());
    write(
        &d.join("m.json"),
        json!({"stage_dims": [4, 8, 16, 32, 64], "scvss_counts": [1, 1, 1, 1], "input_size": [32, 32], "n_state": 4}),
    );
    write(&d.join("t.json"), json!({"lr": 1e-3, "epochs": 1, "batch_size": 4}));

    let data = d.join("data");
    let o = twm(&["gen-data", "--spec", s(&d.join("spec.json")), "--out", s(&data)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.json").is_file());

    let run = d.join("run");
    let o = twm(
        &["train", "--model-config", s(&d.join("m.json")), "--train-config", s(&d.join("t.json")), "--data", s(&data), "--out", s(&run)],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train_log.jsonl", "best.twmb", "last.twmb"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let report = d.join("report.json");
    let o = twm(&["eval", "--ckpt", s(&run.join("best.twmb")), "--data", s(&data), "--split", "test", "--report", s(&report)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(r["mean"]["dice"].is_number());
    assert!(report.with_extension("csv").is_file());

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(data.join("manifest.json")).unwrap()).unwrap();
    let image = data.join(manifest["samples"][0]["image"].as_str().unwrap());
    let out = d.join("pred");
    let o = twm(&["predict", "--ckpt", s(&run.join("last.twmb")), "--input", s(&image), "--out", s(&out), "--overlay"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);

    let o = twm(&["eval", "--ckpt", s(&d.join("missing.twmb")), "--data", s(&data), "--report", s(&report)], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_variable_overrides_spec_seed() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    write(&d.join("spec.json"), phantom_spec());
    let gen = |out: &str, seed| {
        let o = twm(&["gen-data", "--spec", s(&d.join("spec.json")), "--out", s(&d.join(out))], seed);
        assert!(o.status.success());
        std::fs::read(d.join(out).join("images").join("case0000.f32")).unwrap()
    };
    let plain = gen("a", None);
    assert_eq!(gen("b", Some("4")), plain);
    assert_ne!(gen("c", Some("5")), plain);
    let o = twm(&["gen-data", "--spec", s(&d.join("spec.json")), "--out", s(&d.join("e"))], Some("x"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    assert_eq!(twm(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(twm(&["eval", "--ckpt", "x"], None).status.code(), Some(2));
    assert_eq!(twm(&["gradcheck", "--module", "nope"], None).status.code(), Some(2));

    write(&d.join("bad.json"), json!({"n_samples": 8, "colour": "red"}));
    let o = twm(&["gen-data", "--spec", s(&d.join("bad.json")), "--out", s(&d.join("x"))], None);
    assert_eq!(o.status.code(), Some(2));
    write(&d.join("bad.json"), json!({"n_samples": 0}));
    let o = twm(&["gen-data", "--spec", s(&d.join("bad.json")), "--out", s(&d.join("x"))], None);
    assert_eq!(o.status.code(), Some(2));

    let o = twm(&["gradcheck", "--module", "patch-merge"], None);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("patch-merge"));
    let o = twm(&["gradcheck", "--module", "patch-merge", "--tol", "1e-30"], None);
    assert_eq!(o.status.code(), Some(1));
}
