use std::path::Path;
use std::process::{Command, Output};

fn bci(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bci"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn simulate_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let output = bci(dir.path(), &["simulate", "--out-dir", "run"]);
    assert!(output.status.success(), "{}", stderr(&output));
    for name in ["evaluation.json", "agreement.json", "command_log.ndjson", "summary.json", "model.json", "spec.json"] {
        assert!(dir.path().join("run").join(name).is_file(), "missing {name}");
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("agreement rate"), "{stdout}");
}

#[test]
fn failures_exit_nonzero_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "tick_hz = \"fast\"\n").unwrap();
    let output = bci(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert!(!output.status.success());
    assert!(stderr(&output).starts_with("error: config stage failed"), "{}", stderr(&output));

    let output = bci(dir.path(), &["simulate", "--dataset", "no/such/dir"]);
    assert!(!output.status.success());
    assert!(stderr(&output).starts_with("error: data stage failed"), "{}", stderr(&output));

    let output = bci(dir.path(), &["simulate", "--tick-hz", "0"]);
    assert!(!output.status.success());
    assert!(stderr(&output).contains("config stage failed"), "{}", stderr(&output));

    let output = bci(dir.path(), &["eval", "--model-dir", "nowhere"]);
    assert!(!output.status.success());
    assert!(stderr(&output).contains("train stage failed"), "{}", stderr(&output));

    assert!(!dir.path().join("out").exists());
}

#[test]
fn staged_commands_match_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let ok = |args: &[&str]| {
        let output = bci(dir.path(), args);
        assert!(output.status.success(), "{args:?}: {}", stderr(&output));
        output
    };
    ok(&["synth", "--seed", "7"]);
    assert!(dir.path().join("out/dataset/manifest.json").is_file());
    ok(&["train", "--seed", "7", "--dataset", "out/dataset"]);
    ok(&["agree", "--seed", "7", "--dataset", "out/dataset"]);
    ok(&["eval", "--seed", "7"]);
    ok(&["simulate", "--seed", "7", "--out-dir", "full"]);

    let read = |path: &str| std::fs::read(dir.path().join(path)).unwrap();
    assert_eq!(read("out/evaluation.json"), read("full/evaluation.json"));
    assert_eq!(read("out/agreement.json"), read("full/agreement.json"));
    assert_eq!(read("out/pre/model.json"), read("full/model.json"));
    assert_eq!(read("out/pre/spec.json"), read("full/spec.json"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "classifier = \"nfl\"\nseed = 3\n[synth.counts]\nRTR = 8\nRTL = 8\nWF = 8\n",
    )
    .unwrap();
    let output = bci(dir.path(), &["--config", "run.toml", "--seed", "4", "simulate"]);
    assert!(output.status.success(), "{}", stderr(&output));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/model.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "nfl");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_train"].as_u64().unwrap() + summary["n_test"].as_u64().unwrap(), 24);

    let again = bci(dir.path(), &["--config", "run.toml", "--seed", "4", "simulate", "--out-dir", "again"]);
    assert!(again.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("out/evaluation.json")).unwrap(),
        std::fs::read(dir.path().join("again/evaluation.json")).unwrap()
    );
}
