use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "profile": "small",
  "dataset": {"synth": {"train_videos": 10, "test_videos": 3, "duration_log_mean": 3.0,
                        "duration_log_sd": 0.2, "max_phase_len": 40}},
  "predictor": {"filters": 4, "layers": 3, "train": {"epochs": 2}},
  "refiner": {"train": {"epochs": 2}},
  "e2e_train": {"epochs": 2}
}"#;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.json"), TINY).unwrap();
        Run { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_stagewise"))
            .current_dir(self.dir.path())
            .env_remove("STAGEWISE_OUT")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.cli(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    fn data_and_predictor(&self) {
        self.ok(&["--config", "cfg.json", "gen-data", "--out", "data"]);
        self.ok(&[
            "--config",
            "cfg.json",
            "train-predictor",
            "--data",
            "data",
            "--out",
            "pred",
        ]);
    }
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON error line ({e}): {stderr}"))
}

fn expect_code(out: &Output, code: i32, kind: &str) -> String {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = error_line(out);
    assert_eq!(v["error"]["code"], code);
    assert_eq!(v["error"]["kind"], kind);
    v["error"]["message"].as_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_2() {
    let r = Run::new();
    expect_code(&r.cli(&["no-such-command"]), 2, "usage");
    expect_code(&r.cli(&["eval", "--data"]), 2, "usage");
    assert!(r.cli(&["--help"]).status.success());
}

#[test]
fn config_errors_exit_3() {
    let r = Run::new();
    fs::write(r.path("bad.json"), r#"{"disturb": {"k": 1}}"#).unwrap();
    let msg = expect_code(&r.cli(&["--config", "bad.json", "gen-data", "--out", "d"]), 3, "config");
    assert!(msg.contains("disturb.k"), "{msg}");

    fs::write(r.path("typo.json"), r#"{"predictr": {}}"#).unwrap();
    expect_code(&r.cli(&["--config", "typo.json", "gen-data"]), 3, "config");
    expect_code(&r.cli(&["--config", "missing.json", "gen-data"]), 3, "config");

    r.data_and_predictor();
    let msg = expect_code(
        &r.cli(&[
            "--config",
            "cfg.json",
            "gen-disturbed",
            "--data",
            "data",
            "--types",
            "cv",
            "--k",
            "11",
            "--out",
            "x",
        ]),
        3,
        "config",
    );
    assert!(msg.contains("K = N"), "{msg}");
    expect_code(
        &r.cli(&["gen-disturbed", "--data", "data", "--types", "cv,bogus"]),
        3,
        "config",
    );
}

#[test]
fn missing_inputs_exit_4() {
    let r = Run::new();
    expect_code(
        &r.cli(&["eval", "--data", "nowhere", "--model", "nothing"]),
        4,
        "dependency",
    );
    r.data_and_predictor();
    let msg = expect_code(
        &r.cli(&[
            "--config",
            "cfg.json",
            "train-refiner",
            "--disturbed",
            "dist",
            "--model",
            "pred",
        ]),
        4,
        "dependency",
    );
    assert!(msg.contains("dist"), "{msg}");
}

#[test]
fn corrupted_header_exits_4() {
    let r = Run::new();
    r.data_and_predictor();
    let feat = r.path("data/videos/test_000.mspf");
    let mut bytes = fs::read(&feat).unwrap();
    bytes[0..4].copy_from_slice(b"XXXX");
    fs::write(&feat, bytes).unwrap();
    let msg = expect_code(
        &r.cli(&["eval", "--data", "data", "--model", "pred", "--out", "ev"]),
        4,
        "dependency",
    );
    assert!(msg.contains("test_000.mspf"), "{msg}");
}

#[test]
fn non_finite_training_exits_5() {
    let r = Run::new();
    r.ok(&["--config", "cfg.json", "gen-data", "--out", "data"]);
    fs::write(
        r.path("huge.json"),
        TINY.replace(
            r#""predictor": {"filters": 4, "layers": 3, "train": {"epochs": 2}}"#,
            r#""predictor": {"filters": 4, "layers": 3, "train": {"epochs": 3, "lr": 1e300}}"#,
        ),
    )
    .unwrap();
    let msg = expect_code(
        &r.cli(&[
            "--config",
            "huge.json",
            "train-predictor",
            "--data",
            "data",
            "--out",
            "p",
        ]),
        5,
        "numeric",
    );
    assert!(msg.contains("epoch"), "{msg}");
}

#[test]
fn disturbed_generation_writes_one_sample_per_video() {
    let r = Run::new();
    r.data_and_predictor();
    r.ok(&[
        "--config",
        "cfg.json",
        "gen-disturbed",
        "--data",
        "data",
        "--types",
        "cv",
        "--k",
        "5",
        "--out",
        "dist",
    ]);
    let index: serde_json::Value = serde_json::from_slice(&fs::read(r.path("dist/index.json")).unwrap()).unwrap();
    assert_eq!(index["entries"].as_array().unwrap().len(), 10);
    assert_eq!(index["folds"].as_array().unwrap().len(), 5);
    let mspp = fs::read_dir(r.path("dist"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mspp"));
    assert_eq!(mspp.count(), 10);
    assert!(r.path("dist/ledger.json").exists());
}

#[test]
fn offline_refiner_cannot_stream() {
    let r = Run::new();
    r.data_and_predictor();
    r.ok(&[
        "--config",
        "cfg.json",
        "gen-disturbed",
        "--data",
        "data",
        "--model",
        "pred",
        "--types",
        "mhf",
        "--out",
        "dist",
    ]);
    r.ok(&[
        "--config",
        "cfg.json",
        "train-refiner",
        "--disturbed",
        "dist",
        "--model",
        "pred",
        "--types",
        "mhf",
        "--variant",
        "tcn",
        "--out",
        "tcn",
    ]);
    let msg = expect_code(
        &r.cli(&["infer", "--data", "data", "--model", "tcn", "--online", "--out", "inf"]),
        3,
        "config",
    );
    assert!(msg.contains("offline model cannot stream"), "{msg}");
    r.ok(&["infer", "--data", "data", "--model", "tcn", "--out", "inf"]);
}

#[test]
fn online_and_offline_inference_agree() {
    let r = Run::new();
    r.data_and_predictor();
    r.ok(&[
        "--config",
        "cfg.json",
        "gen-disturbed",
        "--data",
        "data",
        "--model",
        "pred",
        "--types",
        "mhf",
        "--out",
        "dist",
    ]);
    r.ok(&[
        "--config",
        "cfg.json",
        "train-refiner",
        "--disturbed",
        "dist",
        "--model",
        "pred",
        "--types",
        "mhf",
        "--out",
        "gru",
    ]);
    r.ok(&["infer", "--data", "data", "--model", "gru", "--out", "batch"]);
    r.ok(&[
        "infer", "--data", "data", "--model", "gru", "--online", "--out", "online",
    ]);
    for id in ["test_000", "test_001", "test_002"] {
        let a = fs::read_to_string(r.path(&format!("batch/{id}.pred"))).unwrap();
        let b = fs::read_to_string(r.path(&format!("online/{id}.pred"))).unwrap();
        assert_eq!(a, b, "{id}");
    }
}

#[test]
fn refiner_rejects_foreign_predictor() {
    let r = Run::new();
    r.data_and_predictor();
    r.ok(&[
        "--config",
        "cfg.json",
        "gen-disturbed",
        "--data",
        "data",
        "--model",
        "pred",
        "--types",
        "mhf",
        "--out",
        "dist",
    ]);
    r.ok(&[
        "--config",
        "cfg.json",
        "train-predictor",
        "--data",
        "data",
        "--seed",
        "9",
        "--out",
        "other",
    ]);
    let msg = expect_code(
        &r.cli(&[
            "--config",
            "cfg.json",
            "train-refiner",
            "--disturbed",
            "dist",
            "--model",
            "other",
            "--types",
            "mhf",
        ]),
        4,
        "dependency",
    );
    assert!(msg.contains("predictor"), "{msg}");
}

#[test]
fn eval_and_compare_reports() {
    let r = Run::new();
    r.data_and_predictor();
    r.ok(&["--config", "cfg.json", "train-e2e", "--data", "data", "--out", "e2e"]);
    r.ok(&["eval", "--data", "data", "--model", "pred", "--csv", "--out", "ev_pred"]);
    r.ok(&["eval", "--data", "data", "--model", "e2e", "--out", "ev_e2e"]);
    r.ok(&[
        "compare",
        "--baseline",
        "ev_pred/report.json",
        "--candidate",
        "ev_e2e/report.json",
        "--out",
        "cmp",
    ]);
    let cmp: serde_json::Value = serde_json::from_slice(&fs::read(r.path("cmp/comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["videos"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(r.path("ev_pred/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let ledger: serde_json::Value = serde_json::from_slice(&fs::read(r.path("cmp/ledger.json")).unwrap()).unwrap();
    assert_eq!(ledger["command"], "compare");
}

#[test]
fn output_root_comes_from_environment() {
    let r = Run::new();
    let status = Command::new(env!("CARGO_BIN_EXE_stagewise"))
        .current_dir(r.dir.path())
        .env("STAGEWISE_OUT", r.path("root"))
        .args(["--config", "cfg.json", "gen-data"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(Path::new(&r.path("root/gen-data/manifest.json")).exists());
}
