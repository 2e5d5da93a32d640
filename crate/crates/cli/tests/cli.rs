use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fino_core::train::read_cached;
use serde_json::Value;

const TINY: &[&str] = &[
    "synth.n_episodes=16",
    "synth.image_hw=32x32",
    "synth.n_frames=12",
    "model.block_channels=4,8,8",
    "model.audio_filters=16",
    "model.fc1_width=32",
    "model.dropout_p=0.1",
    "model.input_hw=16x16",
    "model.t_a=64",
    "train.batch_size=4",
    "train.learning_rate=0.001",
];

fn fino(args: &[&str], root: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fino"));
    cmd.current_dir(root).env("FINO_THREADS", "1").args(args);
    for kv in TINY {
        cmd.args(["--set", kv]);
    }
    cmd.output().expect("spawn fino")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    stdout
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn datagen_train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&fino(&["datagen", "--data", "d"], root));
    let stdout = ok(&fino(&["train", "--data", "d", "--out", "o", "--epochs", "2"], root));
    assert!(stdout.contains("epoch=1 train_loss="), "{stdout}");
    for f in ["model.ckpt", "train.log", "report.json", "config.txt"] {
        assert!(root.join("o").join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(root.join("o/train.log")).unwrap().lines().count(), 2);

    ok(&fino(&["eval", "--data", "d", "--out", "o"], root));
    ok(&fino(&["infer", "--data", "d", "--out", "o", "--fraction", "1.0"], root));
    let eval = json(&root.join("o/eval.json"));
    let infer = json(&root.join("o/infer.json"));
    let eval_rows = eval["predictions"].as_array().unwrap();
    let infer_rows = infer["predictions"].as_array().unwrap();
    assert_eq!(eval_rows.len(), 5);
    assert_eq!(eval_rows.len(), infer_rows.len());
    for (e, i) in eval_rows.iter().zip(infer_rows) {
        assert_eq!(e["id"], i["id"]);
        assert_eq!(e["logits"], i["logits"]);
    }
    // The report's test predictions come from the same path as well.
    let report = json(&root.join("o/report.json"));
    assert_eq!(report["test_predictions"].as_array().unwrap().len(), 5);

    let stdout = ok(&fino(&["infer", "--data", "d", "--out", "o", "--sweep"], root));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("fraction=")).count(), 10);
    assert_eq!(json(&root.join("o/sweep.json"))["fractions"].as_array().unwrap().len(), 10);
}

#[test]
fn preprocess_writes_readable_cache() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&fino(&["datagen", "--data", "d"], root));
    ok(&fino(&["preprocess", "--data", "d", "--out", "o"], root));
    let report = json(&root.join("o/preprocess.json"));
    assert_eq!(report["episodes"].as_array().unwrap().len(), 16);
    let s = read_cached(&root.join("o/cache/ep00000.sample")).unwrap();
    assert_eq!(s.id, "ep00000");
    assert_eq!(s.frames.unwrap().shape(), &[8, 4, 16, 16]);
    assert_eq!(s.mfcc.unwrap().shape(), &[20, 64]);
    assert_eq!(s.source_indices.len(), 8);
}

#[test]
fn bench_times_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&fino(&["datagen", "--data", "d"], root));
    let stdout = ok(&fino(&["bench", "--data", "d", "--out", "o", "--set", "bench.variants=a,rgbda", "--set", "bench.repetitions=10"], root));
    assert!(stdout.lines().any(|l| l.starts_with("a ")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("rgbda ")), "{stdout}");
    let bench = json(&root.join("o/bench.json"));
    assert_eq!(bench["results"].as_array().unwrap().len(), 2);
    let out = fino(&["bench", "--data", "d", "--set", "bench.repetitions=3"], root);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn small_gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fino(&["gradcheck", "--set", "gradcheck.seeds=1", "--set", "gradcheck.max_per_tensor=6"], dir.path());
    let stdout = ok(&out);
    let last = stdout.lines().last().unwrap();
    assert!(last.starts_with("max rel err"), "{last}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn missing_data_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = fino(&["train", "--data", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere"), "{stderr}");
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
}

#[test]
fn missing_checkpoint_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fino(&["eval", "--checkpoint", "none.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.ckpt"));
}

#[test]
fn unknown_keys_and_bad_values_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = fino(&["datagen", "--set", "model.widht=3", "--set", "bogus=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.widht") && stderr.contains("bogus"), "{stderr}");

    let out = fino(&["datagen", "--lr", "fast"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = fino(&["datagen", "--set", "novalue"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = fino(&["datagen", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = fino(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn flags_beat_set_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("run.conf"), "# test\nseed = 1\ntrain.patience = 9\ndata = from_file\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fino"))
        .current_dir(root)
        .args(["eval", "--config", "run.conf", "--set", "seed=2", "--set", "data=from_set", "--seed", "3"])
        .output()
        .unwrap();
    // No dataset: the header is still printed before the failure.
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\nseed = 3\n"), "{stdout}");
    assert!(stdout.contains("\ndata = from_set\n"), "{stdout}");
    assert!(stdout.contains("\ntrain.patience = 9\n"), "{stdout}");

    let out = Command::new(env!("CARGO_BIN_EXE_fino"))
        .current_dir(root)
        .args(["eval", "--config", "absent.conf"])
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.conf"));
}
