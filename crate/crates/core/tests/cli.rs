use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn awm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_awm"))
        .args(args)
        .current_dir(dir)
        .env_remove("AWM_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const TINY: &str = r#"
[train]
policy_epochs = 2
head_epochs = 2
batch_size = 2
collect_rollouts = 2

[train.net]
feature_len = 35
encoder_hidden = 6
hidden = 5
head_hidden = 4
mixture = 3
"#;

#[test]
fn gen_with_zero_count_writes_valid_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    ok(awm(&["gen", "--count", "0", "--out", "empty.jsonl"], tmp.path()));
    let data = awm::scenario::load_dataset(tmp.path().join("empty.jsonl")).unwrap();
    assert!(data.is_empty());
}

#[test]
fn expert_replay_has_zero_ade() {
    let tmp = tempfile::tempdir().unwrap();
    ok(awm(&["gen", "--count", "3", "--out", "d.jsonl"], tmp.path()));
    let out = ok(awm(
        &["eval", "--data", "d.jsonl", "--driver", "expert", "--out", "run"],
        tmp.path(),
    ));
    assert!(out.contains("ade 0.0000"), "{out}");
    let csv = fs::read_to_string(tmp.path().join("run/reports/eval.csv")).unwrap();
    assert!(csv.starts_with("scenario_id,kind,rollouts,ade,overlap,offroad\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&awm(&["eval", "--data", "missing.jsonl", "--driver", "expert"], tmp.path())),
        2
    );
    assert_eq!(code(&awm(&["gen", "--kinds", "roundabout", "--out", "x"], tmp.path())), 2);
    assert_eq!(code(&awm(&["train", "--bogus"], tmp.path())), 2);
    assert_eq!(code(&awm(&["--workers", "0", "gen", "--out", "x"], tmp.path())), 2);
    fs::write(tmp.path().join("bad.toml"), "[train]\nlearning_rate = -1.0\n").unwrap();
    ok(awm(&["gen", "--count", "1", "--out", "d.jsonl"], tmp.path()));
    let o = awm(
        &["--config", "bad.toml", "train", "--data", "d.jsonl", "--out", "run"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    fs::write(tmp.path().join("typo.toml"), "[trian]\n").unwrap();
    assert_eq!(code(&awm(&["--config", "typo.toml", "gen", "--out", "x"], tmp.path())), 2);
}

#[test]
fn corrupt_checkpoint_is_an_internal_failure() {
    let tmp = tempfile::tempdir().unwrap();
    ok(awm(&["gen", "--count", "1", "--out", "d.jsonl"], tmp.path()));
    fs::write(tmp.path().join("bad.awmc"), b"NOPE").unwrap();
    let o = awm(&["eval", "--data", "d.jsonl", "--ckpt", "bad.awmc"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn gradcheck_passes_on_fresh_build() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(awm(&["gradcheck", "--points", "2", "--seed", "4"], tmp.path()));
    assert!(out.contains(" 0 failed"), "{out}");
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env = Command::new(env!("CARGO_BIN_EXE_awm"))
        .args(["gen", "--count", "2", "--out", "env.jsonl"])
        .current_dir(tmp.path())
        .env("AWM_SEED", "31")
        .output()
        .unwrap();
    assert!(env.status.success());
    ok(awm(
        &["gen", "--count", "2", "--seed", "31", "--out", "flag.jsonl"],
        tmp.path(),
    ));
    ok(awm(&["gen", "--count", "2", "--out", "default.jsonl"], tmp.path()));
    let read = |n: &str| fs::read(tmp.path().join(n)).unwrap();
    assert_eq!(read("env.jsonl"), read("flag.jsonl"));
    assert_ne!(read("env.jsonl"), read("default.jsonl"));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    fs::write(p.join("tiny.toml"), TINY).unwrap();
    ok(awm(&["gen", "--count", "4", "--seed", "3", "--out", "d.jsonl"], p));
    for run in ["a", "b"] {
        ok(awm(
            &[
                "--config",
                "tiny.toml",
                "--seed",
                "5",
                "train",
                "--data",
                "d.jsonl",
                "--out",
                run,
            ],
            p,
        ));
        let ckpt = format!("{run}/checkpoints/final.awmc");
        ok(awm(
            &[
                "--seed",
                "5",
                "eval",
                "--data",
                "d.jsonl",
                "--ckpt",
                &ckpt,
                "--rollouts",
                "2",
                "--out",
                run,
            ],
            p,
        ));
        ok(awm(
            &[
                "--seed",
                "5",
                "mpc",
                "--data",
                "d.jsonl",
                "--ckpt",
                &ckpt,
                "--grid",
                "1,1,1;3,2,2",
                "--reward",
                "neg-dist-to-log,neg-inverse-norm",
                "--out",
                run,
            ],
            p,
        ));
        ok(awm(
            &[
                "--seed",
                "5",
                "render",
                "--data",
                "d.jsonl",
                "--ckpt",
                &ckpt,
                "--scenario-id",
                "1",
                "--out",
                run,
            ],
            p,
        ));
    }
    for file in [
        "logs/train.csv",
        "reports/eval.csv",
        "reports/mpc.csv",
        "reports/scenario_1.csv",
        "reports/scenario_1.svg",
        "checkpoints/final.awmc",
    ] {
        let a = fs::read(p.join("a").join(file)).unwrap();
        let b = fs::read(p.join("b").join(file)).unwrap();
        assert!(!a.is_empty(), "{file} empty");
        assert!(a == b, "{file} differs between runs");
    }
    // The echoed config resolves to the same run when fed back.
    let echoed = fs::read_to_string(p.join("a/config.toml")).unwrap();
    assert!(echoed.contains("seed = 5"));
    ok(awm(
        &["--config", "a/config.toml", "train", "--data", "d.jsonl", "--out", "c"],
        p,
    ));
    assert!(fs::read(p.join("a/checkpoints/final.awmc")).unwrap() == fs::read(p.join("c/checkpoints/final.awmc")).unwrap());
    let svg = fs::read_to_string(p.join("a/reports/scenario_1.svg")).unwrap();
    assert!(svg.starts_with("<svg") && !svg.contains("href"));
}

#[test]
fn worker_count_does_not_change_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    fs::write(p.join("tiny.toml"), TINY).unwrap();
    ok(awm(&["gen", "--count", "4", "--out", "d.jsonl"], p));
    ok(awm(
        &["--config", "tiny.toml", "train", "--data", "d.jsonl", "--out", "one"],
        p,
    ));
    ok(awm(
        &[
            "--config",
            "tiny.toml",
            "--workers",
            "3",
            "train",
            "--data",
            "d.jsonl",
            "--out",
            "three",
        ],
        p,
    ));
    for run in ["one", "three"] {
        ok(awm(
            &[
                "eval",
                "--data",
                "d.jsonl",
                "--ckpt",
                &format!("{run}/checkpoints/final.awmc"),
                "--rollouts",
                "3",
                "--out",
                run,
            ],
            p,
        ));
    }
    for file in ["logs/train.csv", "reports/eval.csv"] {
        assert!(
            fs::read(p.join("one").join(file)).unwrap() == fs::read(p.join("three").join(file)).unwrap(),
            "{file}"
        );
    }
}
