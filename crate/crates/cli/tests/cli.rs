//! End-to-end tests of the binary: exit-code classes, determinism, file
//! outputs, and option precedence, all through real subprocess invocations.

use camb_core::data::checkpoint::read_checkpoint_names;
use camb_core::data::pfm::read_pfm;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_camb"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join(format!("camb-cli-{}", std::process::id()))
        .join(tag);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .env_remove("CAMB_SEED")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn version_and_help_document_defaults() {
    let dir = scratch("help");
    let out = run_in(&dir, &["--version"]);
    assert!(out.status.success());

    let help = stdout(&run_in(&dir, &["train", "--help"]));
    assert!(help.contains("--steps"), "train help lists --steps:\n{help}");
    assert!(help.contains("[default: 300]"), "steps default documented:\n{help}");
    assert!(help.contains("[default: 0.0001]"), "lr default documented:\n{help}");

    let help = stdout(&run_in(&dir, &["synth", "--help"]));
    assert!(help.contains("[default: 32]"), "scene size default documented:\n{help}");
    assert!(help.contains("--depth-max"), "synth help lists --depth-max:\n{help}");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = scratch("errors2");
    let out = run_in(&dir, &["--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_in(&dir, &["train", "--zeta", "1.5"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));

    let out = run_in(&dir, &["eval"]);
    assert_eq!(out.status.code(), Some(2), "eval without checkpoint: {}", stderr(&out));

    let bad_env = bin()
        .args(["synth", "--count", "1"])
        .current_dir(&dir)
        .env("CAMB_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2), "stderr: {}", stderr(&bad_env));

    std::fs::write(dir.join("bad.toml"), "no_such_option = 1\n").unwrap();
    let out = run_in(&dir, &["synth", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn io_errors_exit_3_and_name_the_path() {
    let dir = scratch("errors3");
    let out = run_in(&dir, &["eval", "--checkpoint", "nope.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nope.ckpt"), "stderr: {}", stderr(&out));

    let out = run_in(&dir, &["synth", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));

    std::fs::write(dir.join("garbage.ckpt"), "not a checkpoint").unwrap();
    let out = run_in(&dir, &["eval", "--checkpoint", "garbage.ckpt"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = scratch("synth");
    for sub in ["a", "b", "c"] {
        let seed = if sub == "c" { "43" } else { "42" };
        let out = run_in(
            &dir,
            &["synth", "--count", "2", "--seed", seed, "--out", sub],
        );
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    for name in ["scene0000.ppm", "scene0000.pfm", "scene0001.ppm", "manifest.txt"] {
        let a = std::fs::read(dir.join("a").join(name)).unwrap();
        let b = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across same-seed runs");
    }
    let a = std::fs::read(dir.join("a/scene0000.ppm")).unwrap();
    let c = std::fs::read(dir.join("c/scene0000.ppm")).unwrap();
    assert_ne!(a, c, "different seeds produced identical scenes");
}

#[test]
fn seed_resolution_prefers_flag_then_config_then_env() {
    let dir = scratch("precedence");
    std::fs::write(dir.join("seed42.toml"), "seed = 42\n").unwrap();
    std::fs::write(dir.join("seed7.toml"), "seed = 7\n").unwrap();

    let synth = |tag: &str, extra: &[&str], env: Option<&str>| {
        let mut cmd = bin();
        cmd.args(["synth", "--count", "1", "--out", tag])
            .args(extra)
            .current_dir(&dir)
            .env_remove("CAMB_SEED");
        if let Some(v) = env {
            cmd.env("CAMB_SEED", v);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        std::fs::read(dir.join(tag).join("scene0000.pfm")).unwrap()
    };

    let flag = synth("flag", &["--seed", "42"], None);
    let config = synth("config", &["--config", "seed42.toml"], None);
    let env = synth("env", &[], Some("42"));
    let flag_beats_config = synth("fbc", &["--seed", "42", "--config", "seed7.toml"], None);
    let config_beats_env = synth("cbe", &["--config", "seed42.toml"], Some("7"));
    let control = synth("control", &["--seed", "7"], None);

    assert_eq!(flag, config);
    assert_eq!(flag, env);
    assert_eq!(flag, flag_beats_config);
    assert_eq!(flag, config_beats_env);
    assert_ne!(flag, control);
}

#[test]
fn train_writes_log_and_checkpoint() {
    let dir = scratch("train");
    let out = run_in(
        &dir,
        &["train", "--steps", "3", "--seed", "5", "--checkpoint", "m.ckpt", "--out", "log.csv"],
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("trained 3 steps"), "stdout: {}", stdout(&out));

    let log = std::fs::read_to_string(dir.join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,total_loss,lambda,depth_loss,grad_loss");
    assert_eq!(lines.len(), 4, "expected header + 3 rows:\n{log}");
    assert!(lines[1].starts_with("1,"), "first row is step 1:\n{log}");

    assert!(dir.join("m.ckpt").exists());
}

#[test]
fn zero_step_train_saves_initialization_and_ablation_shrinks_registry() {
    let dir = scratch("train0");
    let out = run_in(&dir, &["train", "--steps", "0", "--checkpoint", "full.ckpt"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("initialization checkpoint"), "stdout: {}", stdout(&out));
    let log = std::fs::read_to_string(dir.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1, "zero-step log is header-only");

    let out = run_in(
        &dir,
        &["train", "--steps", "0", "--no-camb", "--checkpoint", "plain.ckpt"],
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let full = read_checkpoint_names(&dir.join("full.ckpt")).unwrap();
    let plain = read_checkpoint_names(&dir.join("plain.ckpt")).unwrap();
    assert!(full.len() > plain.len());
    assert!(full.iter().any(|n| n.contains("camb")));
    assert!(plain.iter().all(|n| !n.contains("camb")));
}

#[test]
fn eval_bypass_reports_perfect_identity_metrics() {
    let dir = scratch("bypass");
    let out = run_in(&dir, &["eval", "--bypass-model", "--seed", "3"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("aggregate"), "table has an aggregate row:\n{text}");
    let agg = text.lines().find(|l| l.starts_with("aggregate")).unwrap();
    assert!(agg.contains("1.0000"), "identity d1 is 1:\n{agg}");
    assert!(agg.contains("0.0000"), "identity rmse is 0:\n{agg}");
}

#[test]
fn eval_after_train_writes_a_full_table() {
    let dir = scratch("evaltable");
    let out = run_in(&dir, &["train", "--steps", "2", "--seed", "11", "--checkpoint", "m.ckpt"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let out = run_in(
        &dir,
        &["eval", "--checkpoint", "m.ckpt", "--seed", "11", "--out", "table.txt"],
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.join("table.txt")).unwrap();
    // Header, sixteen held-out scenes, aggregate.
    assert_eq!(table.lines().count(), 18, "table:\n{table}");
    assert!(stdout(&out).starts_with(&table), "stdout repeats the table");
}

#[test]
fn infer_round_trips_through_prediction_files() {
    let dir = scratch("infer");
    let out = run_in(&dir, &["synth", "--count", "2", "--seed", "8", "--out", "data"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let out = run_in(&dir, &["train", "--steps", "0", "--checkpoint", "m.ckpt"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let out = run_in(
        &dir,
        &["infer", "--checkpoint", "m.ckpt", "--data-root", "data", "--out", "preds"],
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    for id in ["scene0000", "scene0001"] {
        let pred = read_pfm(&dir.join("preds").join(format!("{id}.pfm"))).unwrap();
        assert_eq!(pred.shape(), &[32, 32]);
        assert!(pred.data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn eval_with_no_valid_pixels_is_a_numerical_error() {
    let dir = scratch("numerical");
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    // One black pixel with zero depth: the ground truth never reaches the
    // validity threshold.
    std::fs::write(data.join("z.ppm"), b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
    let mut pfm = b"Pf\n1 1\n-1.0\n".to_vec();
    pfm.extend_from_slice(&0.0f32.to_le_bytes());
    std::fs::write(data.join("z.pfm"), pfm).unwrap();

    let out = run_in(&dir, &["eval", "--bypass-model", "--data-root", "data"]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));
}

#[test]
fn gradcheck_passes_at_the_default_seed() {
    let dir = scratch("gradcheck");
    let out = run_in(&dir, &["gradcheck"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("all 27 gradient checks passed"),
        "stdout:\n{text}"
    );
    assert_eq!(text.lines().filter(|l| l.contains(" ok")).count(), 27);
}
