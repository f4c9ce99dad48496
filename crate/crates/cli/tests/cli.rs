use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn recpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recpipe"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "paths": {
            "sessions": dir.join("train.jsonl"),
            "test_sessions": dir.join("test.jsonl"),
            "products": dir.join("products.jsonl"),
            "workdir": dir.join("work"),
        },
        "K": 20,
        "max_negatives_per_session": 5,
        "item2vec": {"*": {"dims": 16, "epochs": 2, "min_count": 2}},
        "gbdt": {"num_rounds": 10},
        "synth": {
            "locales": [{"locale": "JP", "n_sessions": 500}, {"locale": "ES", "n_sessions": 200}],
            "n_items": 60,
        },
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for cmd in ["synth", "build", "train", "predict"] {
        let out = recpipe(&[cmd, "--config", &cfg, "--seed", "4"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = recpipe(&["eval", "--config", &cfg, "--eval-locales", "ES"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["mrr"].as_f64().unwrap() > 0.0);
    assert!(report["baseline"]["mrr"].is_number());

    let out = recpipe(&["importance", "--config", &cfg]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!((1..=20).contains(&text.lines().count()));
}

#[test]
fn train_without_seed_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = recpipe(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn missing_input_exits_two_and_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = recpipe(&["build", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.jsonl"));
}

#[test]
fn bad_config_and_bad_locale_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"paths": {"sessions": "a", "workdir": "b"}, "K": 0}"#).unwrap();
    assert_eq!(
        recpipe(&["build", "--config", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let cfg = write_config(dir.path());
    let out = recpipe(&["train", "--config", &cfg, "--seed", "1", "--train-locales", "toolong"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(recpipe(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unwritable_workdir_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(recpipe(&["synth", "--config", &cfg, "--seed", "1"]).status.success());
    // A plain file where the work directory should be.
    fs::write(dir.path().join("work"), "").unwrap();
    assert_eq!(recpipe(&["build", "--config", &cfg]).status.code(), Some(1));
}
