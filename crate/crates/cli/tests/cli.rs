use std::fs;
use std::path::Path;

use udainv_cli::{run, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("udainv").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "\
n_src=40
n_trg=40
n_eval=24
iterations=6
batch_size=8
log_every=2
audit_steps=3
audit_pairs=24
";

#[test]
fn parse_errors_and_help() {
    assert_eq!(cli(&["frobnicate"]), EXIT_INVALID);
    assert_eq!(cli(&["train", "--no-such-flag"]), EXIT_INVALID);
    assert_eq!(cli(&["train", "--seed", "minus-one"]), EXIT_INVALID);
    assert_eq!(cli(&[]), EXIT_INVALID);
    assert_eq!(cli(&["--help"]), EXIT_OK);
    assert_eq!(cli(&["--version"]), EXIT_OK);
}

#[test]
fn bad_inputs_exit_with_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "lambda_uda=-1\n").unwrap();
    assert_eq!(
        cli(&["synth", "--config", p(&bad), "--out", p(dir.path())]),
        EXIT_INVALID
    );
    fs::write(&bad, "no_such_key=3\n").unwrap();
    assert_eq!(
        cli(&["synth", "--config", p(&bad), "--out", p(dir.path())]),
        EXIT_INVALID
    );
    let missing = dir.path().join("missing.txt");
    assert_eq!(cli(&["synth", "--config", p(&missing)]), EXIT_INVALID);
    // evaluation commands need a checkpoint
    for cmd in ["invert", "edit", "eval", "audit-bound"] {
        assert_eq!(cli(&[cmd, "--out", p(dir.path())]), EXIT_INVALID, "{cmd}");
    }
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(cli(&["eval", "--checkpoint", p(&garbage)]), EXIT_INVALID);
}

#[test]
fn missing_files_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let none = dir.path().join("none.bin");
    assert_eq!(cli(&["eval", "--checkpoint", p(&none)]), EXIT_RUNTIME);
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let config = dir.path().join("small.txt");
    fs::write(&config, SMALL).unwrap();
    assert_eq!(
        cli(&[
            "train",
            "--config",
            p(&config),
            "--data",
            p(&empty),
            "--out",
            p(dir.path())
        ]),
        EXIT_RUNTIME
    );
}

#[test]
fn pipeline_writes_every_artifact_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("small.txt");
    fs::write(&config, SMALL).unwrap();
    let data = root.join("data");
    let out = root.join("run");
    let c = p(&config);

    assert_eq!(
        cli(&["synth", "--config", c, "--seed", "3", "--out", p(&data)]),
        EXIT_OK
    );
    assert!(data.join("train").join("manifest.csv").exists());
    assert!(data.join("eval").join("manifest.csv").exists());
    assert!(data.join("config.txt").exists());

    let train = [
        "train",
        "--config",
        c,
        "--seed",
        "3",
        "--data",
        p(&data),
        "--out",
        p(&out),
    ];
    assert_eq!(cli(&train), EXIT_OK);
    let ck_bytes = fs::read(out.join("checkpoint.bin")).unwrap();
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("iteration,L_s,d_st,total\n"));
    assert_eq!(log.lines().count(), 1 + 4);
    assert_eq!(cli(&train), EXIT_OK);
    assert_eq!(fs::read(out.join("checkpoint.bin")).unwrap(), ck_bytes);

    let ck = out.join("checkpoint.bin");
    let with_ck = |cmd: &'static str| {
        cli(&[
            cmd,
            "--checkpoint",
            p(&ck),
            "--data",
            p(&data),
            "--out",
            p(&out),
        ])
    };
    assert_eq!(with_ck("eval"), EXIT_OK);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("split,PSNR,SSIM,MSE,FFD,IDs\nsrc,"));
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(with_ck("eval"), EXIT_OK);
    assert_eq!(
        fs::read_to_string(out.join("metrics.csv")).unwrap(),
        metrics
    );

    assert_eq!(with_ck("invert"), EXIT_OK);
    assert_eq!(out.join("invert").read_dir().unwrap().count(), 48);

    assert_eq!(with_ck("edit"), EXIT_OK);
    let dirs = fs::read_to_string(out.join("directions.csv")).unwrap();
    assert_eq!(dirs.lines().count(), 1 + 1 + udainv_cli::PCA_DIRECTIONS);
    assert_eq!(
        out.join("edit").read_dir().unwrap().count(),
        udainv_cli::EDIT_STRIPS * (1 + udainv_cli::PCA_DIRECTIONS)
    );

    assert_eq!(with_ck("audit-bound"), EXIT_OK);
    let audit = fs::read_to_string(out.join("audit.txt")).unwrap();
    for key in [
        "R_t=",
        "R_s=",
        "D_hat=",
        "lambda_star_hat=",
        "sigma=",
        "holds=",
    ] {
        assert!(audit.lines().any(|l| l.starts_with(key)), "{key}");
    }

    // resuming a finished run leaves the networks unchanged
    let resumed = root.join("resumed");
    assert_eq!(
        cli(&[
            "train",
            "--resume",
            p(&ck),
            "--data",
            p(&data),
            "--out",
            p(&resumed)
        ]),
        EXIT_OK
    );
    let again = fs::read_to_string(resumed.join("train_log.csv")).unwrap();
    assert_eq!(again, "iteration,L_s,d_st,total\n");
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let full = root.join("full.txt");
    fs::write(&full, SMALL).unwrap();
    let half = root.join("half.txt");
    fs::write(&half, SMALL.replace("iterations=6", "iterations=3")).unwrap();
    let out = root.join("out");

    assert_eq!(
        cli(&["train", "--config", p(&full), "--out", p(&out)]),
        EXIT_OK
    );
    let straight = fs::read(out.join("checkpoint.bin")).unwrap();
    assert_eq!(
        cli(&["train", "--config", p(&half), "--out", p(&out)]),
        EXIT_OK
    );
    let mid = root.join("mid.bin");
    fs::rename(out.join("checkpoint.bin"), &mid).unwrap();
    assert_eq!(
        cli(&[
            "train",
            "--config",
            p(&full),
            "--resume",
            p(&mid),
            "--out",
            p(&out)
        ]),
        EXIT_OK
    );
    assert_eq!(fs::read(out.join("checkpoint.bin")).unwrap(), straight);
}
