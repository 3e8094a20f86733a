use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn clothswap(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clothswap"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const TINY: [&str; 16] = [
    "--set", "steps=3",
    "--set", "pk.identities=2",
    "--set", "pk.instances=2",
    "--set", "geo.height=16",
    "--set", "geo.width=8",
    "--set", "geo.padding=1",
    "--set", "model.widths=4,8",
    "--set", "model.embed_dim=8",
];

fn gen(dir: &Path, name: &str) {
    let out = clothswap(
        dir,
        &[
            "gen-synth", "--out", name, "--ids", "6", "--outfits", "2", "--per-outfit", "2", "--height", "16",
            "--width", "8", "--seed", "7",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&clothswap(tmp.path(), &[])), 1);
    assert_eq!(code(&clothswap(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&clothswap(tmp.path(), &["--help"])), 0);
    gen(tmp.path(), "d");
    let out = clothswap(tmp.path(), &["train", "--data", "d", "--set", "no.such.key=1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));
}

#[test]
fn missing_data_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = clothswap(tmp.path(), &["eval", "--data", "absent", "--checkpoint", "absent.bin"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn diverging_training_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    let mut args = vec!["train", "--data", "d", "--out", "r"];
    args.extend(TINY);
    args.extend(["--set", "steps=50", "--set", "sgd.lr=1e200"]);
    let out = clothswap(tmp.path(), &args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    let mut args = vec!["train", "--data", "d", "--out", "r"];
    args.extend(TINY);
    args.extend(["--set", "pk.identities=50"]);
    assert_eq!(code(&clothswap(tmp.path(), &args)), 1);
}

#[test]
fn gen_synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a");
    gen(tmp.path(), "b");
    let a = fs::read(tmp.path().join("a/manifest.csv")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/manifest.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 6 * 2 * 2);
}

#[test]
fn preview_writes_triptychs() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");
    let mut args = vec!["preview-aug", "--data", "d", "--n", "4", "--seed", "1", "--out", "p"];
    args.extend(TINY);
    let out = clothswap(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pngs = fs::read_dir(tmp.path().join("p")).unwrap().count();
    assert_eq!(pngs, 4);
}

#[test]
fn train_then_eval_and_ablate() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "d");

    let mut args = vec!["train", "--data", "d", "--out", "r", "--seed", "3"];
    args.extend(TINY);
    let out = clothswap(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("r");
    assert!(run.join("result.json").is_file());
    assert_eq!(fs::read_to_string(run.join("train_log.csv")).unwrap().lines().count(), 4);

    let out = clothswap(
        tmp.path(),
        &["eval", "--data", "d", "--checkpoint", "r/checkpoint_final.bin", "--out", "e"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(tmp.path().join("e")).unwrap().count(), 2);

    let mut args = vec!["ablate", "--data", "d", "--out", "a", "--seed", "7"];
    args.extend(TINY);
    let out = clothswap(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for row in ["baseline", "baseline+ps", "baseline+ps+mse", "baseline+ps+mse+re"] {
        assert!(tmp.path().join(format!("a/{row}.json")).is_file(), "{row}");
    }
}

#[test]
fn check_grad_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = clothswap(tmp.path(), &["check-grad", "--configs", "2", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}
