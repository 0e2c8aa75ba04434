use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mma_core::data::{load_records, SeriesLabel};
use mma_core::model::{Model, ModelConfig, TrainMode};
use mma_core::pipeline::load_checkpoint;
use serde_json::Value;

const INI: &str = "\
[run]
seed = 5
[model]
d_proj = 8
d_hidden = 16
beat_len = 30
slice_len = 300
[schedule]
epochs = 3
batch_size = 8
learning_rate = 0.003
[proportion_mlp]
epochs = 50
[synth]
count = 30
length_range = 600,1500
sampling_rate = 40
beat_len = 30
segment_beats = 5,10
";

const MANIFEST: &str = "--manifest=corpus/manifest.csv";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("desk.ini"), INI).unwrap();
        Self { dir }
    }

    fn with_corpus() -> Self {
        let ws = Self::new();
        ws.ok(&["--out", "corpus", "synth"]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs the binary with `desk.ini` unless `args` names another config.
    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmarnn"));
        cmd.current_dir(self.dir.path()).env("MMA_LOG", "error");
        if !args.contains(&"--config") {
            cmd.args(["--config", "desk.ini"]);
        }
        cmd.args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn fails_with(&self, args: &[&str], code: i32) -> Value {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let line = String::from_utf8(out.stderr).unwrap();
        let err: Value = serde_json::from_str(line.trim().lines().last().unwrap()).unwrap();
        assert_eq!(err["exit_code"], code);
        err
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let mut args = vec!["--out", out, "train", MANIFEST];
        args.extend_from_slice(extra);
        self.ok(&args);
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_slice(&std::fs::read(self.path(rel)).unwrap()).unwrap()
    }
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn unknown_config_key_exits_2() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.ini"), "[model]\nd_projection = 3\n").unwrap();
    let err = ws.fails_with(&["--config", "bad.ini", "--out", "c", "synth"], 2);
    assert_eq!(err["error"], "config");
}

#[test]
fn malformed_manifest_exits_3() {
    let ws = Workspace::with_corpus();
    let m = ws.path("corpus/manifest.csv");
    let text = std::fs::read_to_string(&m).unwrap();
    std::fs::write(&m, text.replacen(",N,", ",Q,", 1)).unwrap();
    ws.fails_with(&["--out", "t", "train", MANIFEST], 3);
}

#[test]
fn corrupt_checkpoint_exits_5() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--epochs", "0"]);
    let ckpt = ws.path("t/checkpoint.bin");
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    ws.fails_with(
        &["--out", "p", "predict", MANIFEST, "--checkpoint", "t/checkpoint.bin"],
        5,
    );
}

#[test]
fn missing_prediction_exits_6_and_bad_matrix_exits_7() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--epochs", "1"]);
    ws.ok(&["--out", "p", "predict", MANIFEST, "--checkpoint", "t/checkpoint.bin"]);
    std::fs::write(ws.path("bad.csv"), ",N,AFF,AFP\nN,1,x,0\n").unwrap();
    ws.fails_with(
        &["--out", "s", "score", MANIFEST, "--pred", "p", "--matrix", "bad.csv"],
        7,
    );

    let first = std::fs::read_dir(ws.path("p/predictions"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    std::fs::remove_file(first).unwrap();
    let err = ws.fails_with(&["--out", "s", "score", MANIFEST, "--pred", "p"], 6);
    assert_eq!(err["error"], "missing_prediction");
}

#[test]
fn every_output_directory_records_its_config() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--epochs", "1"]);
    ws.ok(&[
        "--out",
        "p",
        "predict",
        MANIFEST,
        "--checkpoint",
        "t/checkpoint.bin",
        "--split",
        "test",
    ]);
    ws.ok(&[
        "--out",
        "s",
        "score",
        MANIFEST,
        "--pred",
        "p",
        "--split",
        "test",
        "--split-file",
        "t/split.json",
    ]);
    ws.ok(&["--out", "a", "ablate", MANIFEST, "--grid", "d_proj=0", "--epochs", "1"]);
    for dir in ["corpus", "t", "p", "s", "a"] {
        let text = std::fs::read_to_string(ws.path(&format!("{dir}/config.ini"))).unwrap();
        assert!(text.contains("[run]") && text.contains("seed=5"), "{dir}");
    }
    let saved = std::fs::read_to_string(ws.path("t/config.ini")).unwrap();
    assert!(saved.contains("epochs=1"));
    assert!(saved.contains("manifest=corpus/manifest.csv"));
}

#[test]
fn saved_config_reproduces_the_run() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--epochs", "1"]);
    ws.ok(&["--config", "t/config.ini", "--out", "t2", "train"]);
    for file in ["checkpoint.bin", "history.csv", "split.json"] {
        let a = std::fs::read(ws.path(&format!("t/{file}"))).unwrap();
        let b = std::fs::read(ws.path(&format!("t2/{file}"))).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn zero_epochs_saves_the_initial_network() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--epochs", "0"]);
    let (model, mode, _) = load_checkpoint(&ws.path("t/checkpoint.bin"), Some(&ModelConfig::desk())).unwrap();
    assert_eq!(mode, TrainMode::Joint);
    assert_eq!(model, Model::init(&ModelConfig::desk(), TrainMode::Joint, 5).unwrap());
    assert!(csv_rows(&ws.path("t/history.csv")).is_empty());
}

#[test]
fn finetune_from_a_head1_checkpoint() {
    let ws = Workspace::with_corpus();
    ws.train("h1", &["--mode", "head1_only", "--epochs", "2"]);
    let phases: Vec<String> = csv_rows(&ws.path("h1/history.csv"))
        .iter()
        .map(|r| r[0].to_string())
        .collect();
    assert_eq!(phases, ["head1", "head1"]);

    ws.train(
        "ft",
        &[
            "--mode",
            "pretrain1_finetune2",
            "--epochs",
            "2",
            "--init-from",
            "h1/checkpoint.bin",
        ],
    );
    let phases: Vec<String> = csv_rows(&ws.path("ft/history.csv"))
        .iter()
        .map(|r| r[0].to_string())
        .collect();
    assert_eq!(phases, ["finetune", "finetune"]);
    let (start, _, _) = load_checkpoint(&ws.path("h1/checkpoint.bin"), None).unwrap();
    let (end, mode, _) = load_checkpoint(&ws.path("ft/checkpoint.bin"), None).unwrap();
    assert_eq!(mode, TrainMode::Pretrain1Finetune2);
    assert_ne!(start, end);

    ws.fails_with(&["--out", "x", "train", MANIFEST, "--init-from", "missing.bin"], 5);
}

#[test]
fn best_validation_loss_never_increases() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--mode", "independent", "--epochs", "4"]);
    let rows = csv_rows(&ws.path("t/history.csv"));
    assert_eq!(rows.len(), 8);
    for phase in ["disc", "loc"] {
        let best: Vec<f64> = rows
            .iter()
            .filter(|r| &r[0] == phase)
            .map(|r| r[6].parse().unwrap())
            .collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]), "{phase}: {best:?}");
        let val: Vec<f64> = rows
            .iter()
            .filter(|r| &r[0] == phase)
            .map(|r| r[3].parse().unwrap())
            .collect();
        let running_min = val.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert_eq!(*best.last().unwrap(), running_min);
    }
}

#[test]
fn dump_has_one_row_per_weight() {
    let ws = Workspace::with_corpus();
    ws.train("t", &["--epochs", "1"]);
    ws.ok(&[
        "--out",
        "p",
        "predict",
        MANIFEST,
        "--checkpoint",
        "t/checkpoint.bin",
        "--split",
        "val",
        "--dump",
    ]);
    let records = load_records(&ws.path("corpus/manifest.csv"), 30).unwrap();
    let split = ws.json("t/split.json");
    let val = split["val"].as_array().unwrap();
    assert!(!val.is_empty());
    for id in val {
        let id = id.as_str().unwrap();
        let rec = records.iter().find(|r| r.record_id == id).unwrap();
        let slices = rec.len().div_ceil(300);
        let rows = csv_rows(&ws.path(&format!("p/dump/{id}_attention.csv")));
        assert_eq!(rows.len(), slices * (10 + 10 * 30 + 300), "{id}");
        let count = |kind: &str| rows.iter().filter(|r| &r[1] == kind).count();
        assert_eq!(count("slice_attn"), slices * 10);
        assert_eq!(count("beat_attn"), slices * 300);
        assert_eq!(count("point"), slices * 300);

        let bounds = csv_rows(&ws.path(&format!("p/dump/{id}_boundaries.csv")));
        assert_eq!(bounds.iter().filter(|r| &r[0] == "true").count(), rec.episodes.len());
    }
    assert_eq!(std::fs::read_dir(ws.path("p/predictions")).unwrap().count(), val.len());
}

#[test]
fn perfect_predictions_reach_the_ceiling() {
    let ws = Workspace::with_corpus();
    let records = load_records(&ws.path("corpus/manifest.csv"), 30).unwrap();
    std::fs::create_dir_all(ws.path("truth")).unwrap();
    let mut ceiling = 0.0;
    for r in &records {
        let pred = serde_json::json!({
            "record_id": r.record_id,
            "predicted_label": r.series_label,
            "episodes": r.episodes,
        });
        std::fs::write(ws.path(&format!("truth/{}.json", r.record_id)), pred.to_string()).unwrap();
        ceiling += 1.0 + 2.0 * r.episodes.len() as f64;
    }
    ceiling /= records.len() as f64;
    ws.ok(&["--out", "s", "score", MANIFEST, "--pred", "truth"]);
    let report = ws.json("s/report.json");
    assert_eq!(report["U_r_mean"].as_f64().unwrap(), 1.0);
    assert!((report["U"].as_f64().unwrap() - ceiling).abs() <= 1e-12);
}

#[test]
fn synth_follows_the_class_mix() {
    let ws = Workspace::new();
    let stdout = ws.ok(&["--out", "corpus", "synth", "--count", "41"]);
    assert!(stdout.contains("all"));
    let records = load_records(&ws.path("corpus/manifest.csv"), 30).unwrap();
    assert_eq!(records.len(), 41);
    for (label, share) in [
        (SeriesLabel::Normal, 0.50),
        (SeriesLabel::Persistent, 0.33),
        (SeriesLabel::Paroxysmal, 0.17),
    ] {
        let n = records.iter().filter(|r| r.series_label == label).count() as f64;
        assert!((n - share * 41.0).abs() <= 1.0, "{label:?}: {n}");
    }
    assert!(std::fs::read_to_string(ws.path("corpus/stats.txt"))
        .unwrap()
        .contains("all"));
}

#[test]
fn one_cell_grid_matches_manual_commands() {
    let ws = Workspace::with_corpus();
    ws.ok(&["--out", "a", "ablate", MANIFEST, "--grid", "d_proj=8"]);
    let rows = csv_rows(&ws.path("a/ablation.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][5], "ok");

    ws.train("t", &[]);
    ws.ok(&[
        "--out",
        "p",
        "predict",
        MANIFEST,
        "--checkpoint",
        "t/checkpoint.bin",
        "--split",
        "test",
    ]);
    ws.ok(&[
        "--out",
        "s",
        "score",
        MANIFEST,
        "--pred",
        "p",
        "--split",
        "test",
        "--split-file",
        "t/split.json",
    ]);
    let report = ws.json("s/report.json");
    for (col, key) in [(2, "U_r_mean"), (3, "U_e_mean"), (4, "U")] {
        let cell: f64 = rows[0][col].parse().unwrap();
        assert_eq!(cell, report[key].as_f64().unwrap(), "{key}");
    }
}

#[test]
fn unknown_grid_cell_is_rejected() {
    let ws = Workspace::with_corpus();
    ws.fails_with(&["--out", "a", "ablate", MANIFEST, "--grid", "d_proj=7"], 2);
}
