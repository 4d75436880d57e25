use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anytsr::imaging::{load_image, save_image, ImageGray};
use anytsr_cli::Cli;
use clap::CommandFactory;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anytsr"));
    c.env_remove("ANYTSR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn anytsr")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, train: usize, test: usize, size: usize) -> PathBuf {
    let root = dir.join("synth");
    let o = run(&[
        "synth-data",
        "--out",
        p(&root),
        "--train",
        &train.to_string(),
        "--test",
        &test.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    root
}

const SMALL: &str = "preset = tiny\nchannels = 8\nlayers = 1\nblocks = 1\nsam_hidden = 8\nneo_width = 8\n\
lr_size = 8\nbatch = 2\nscale_max = 3\nmax_steps = 3\nattention_window = 64\n";

fn write_cfg(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    fs::write(&path, SMALL).unwrap();
    path
}

/// Trains the small config for a few steps; returns the output directory.
fn train(dir: &Path, data: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let cfg = write_cfg(dir);
    let o = run(&["train", "--config", p(&cfg), "--data", p(data), "--out", p(&out), "--seed", seed]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn help_documents_every_flag() {
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let name = sub.get_name();
        let o = run(&[name, "--help"]);
        assert!(o.status.success());
        let help = stdout(&o);
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(arg.get_help().is_some(), "{name} --{long} has no help text");
            assert!(help.contains(&format!("--{long}")), "{name} --help misses --{long}");
        }
    }
    let top = stdout(&run(&["--help"]));
    for sub in ["train", "infer", "eval", "multistep", "synth-data", "gradcheck"] {
        assert!(top.contains(sub), "top-level help misses {sub}");
    }
}

#[test]
fn train_completes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 1, 32);
    let a = train(dir.path(), &data, "a", "7");
    let b = train(dir.path(), &data, "b", "7");
    for f in ["loss.log", "model.atsr", "checkpoint.atsr", "run.cfg"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let log_a = fs::read_to_string(a.join("loss.log")).unwrap();
    assert_eq!(log_a.lines().count(), 4);
    assert_eq!(log_a, fs::read_to_string(b.join("loss.log")).unwrap());
    let c = train(dir.path(), &data, "c", "8");
    assert_ne!(log_a, fs::read_to_string(c.join("loss.log")).unwrap());
}

#[test]
fn worker_count_does_not_change_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 0, 32);
    let cfg = write_cfg(dir.path());
    let mut logs = Vec::new();
    for (name, extra) in [("w1", vec!["--deterministic"]), ("w3", vec!["--workers", "3"])] {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)];
        args.extend(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(fs::read_to_string(out.join("loss.log")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 0, 32);
    let cfg = write_cfg(dir.path());
    let full = dir.path().join("full");
    let o = run(&[
        "train", "--config", p(&cfg), "--data", p(&data), "--out", p(&full), "--max-steps", "4",
        "--set", "checkpoint_every=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mid = full.join("step_000002.atsr");
    assert!(mid.is_file());

    let resumed = dir.path().join("resumed");
    let o = run(&["train", "--resume", p(&mid), "--data", p(&data), "--out", p(&resumed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let full_log = fs::read_to_string(full.join("loss.log")).unwrap();
    let tail: Vec<&str> = full_log.lines().skip(3).collect();
    let res_log = fs::read_to_string(resumed.join("loss.log")).unwrap();
    let res: Vec<&str> = res_log.lines().skip(1).collect();
    assert_eq!(res, tail);
    assert_eq!(
        fs::read(full.join("model.atsr")).unwrap(),
        fs::read(resumed.join("model.atsr")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let missing = dir.path().join("nowhere");
    let o = run(&["train", "--config", p(&cfg), "--data", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains(p(&missing)), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
    assert!(err.starts_with("error: code=3 kind=data:"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "colour = red\n").unwrap();
    let o = run(&["train", "--config", p(&bad), "--data", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("colour"));

    fs::write(&bad, "channels = 0\n").unwrap();
    assert_eq!(run(&["train", "--config", p(&bad), "--data", "x", "--out", "y"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--set", "batch"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn infer_writes_rounded_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 0, 32);
    let out = train(dir.path(), &data, "run", "1");
    let ckpt = out.join("model.atsr");
    let input = dir.path().join("in.png");
    save_image(&input, &ImageGray::from_fn(64, 64, |i, j| ((i + 2 * j) % 17) as f64 / 16.0).unwrap()).unwrap();
    for (scale, side) in [("2.45", 157), ("1", 64)] {
        let output = dir.path().join(format!("sr_{scale}.png"));
        let o = run(&["infer", "--checkpoint", p(&ckpt), "--input", p(&input), "--scale", scale, "--output", p(&output)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(load_image(&output).unwrap().dims(), (side, side));
    }
    let o = run(&["infer", "--checkpoint", p(&ckpt), "--input", p(&input), "--scale", "0.5", "--output", "x.png"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_checkpoints_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    save_image(&input, &ImageGray::constant(8, 8, 0.5).unwrap()).unwrap();
    let ckpt = dir.path().join("bad.atsr");
    fs::write(&ckpt, b"NOPE\x01\x00\x00\x00rest").unwrap();
    let args = |c: &Path| {
        run(&["infer", "--checkpoint", p(c), "--input", p(&input), "--scale", "2", "--output", p(&dir.path().join("o.png"))])
    };
    let o = args(&ckpt);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("magic"));
    assert_eq!(args(&dir.path().join("absent.atsr")).status.code(), Some(5));
}

#[test]
fn eval_and_multistep_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 2, 36);
    let out = train(dir.path(), &data, "run", "1");
    let ckpt = out.join("model.atsr");
    let csv = dir.path().join("eval.csv");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--scales", "2,6", "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scale,ood,image,psnr_model,psnr_bicubic"));
    assert_eq!(lines.count(), 4);

    let o = run(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--scales", "2", "--crop-border", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = dir.path().join("ms.csv");
    let o = run(&["multistep", "--checkpoint", p(&ckpt), "--data", p(&data), "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("chain,psnr_mean\n"));
    assert_eq!(text.lines().count(), 4);
    let report = stdout(&o);
    assert!(report.contains("one step") && report.contains("steps"), "{report}");
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_backward() {
    let o = run(&["gradcheck", "--suite", "sam", "--suite", "neo"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("sam: ok") && text.contains("neo: ok"), "{text}");
    assert!(text.contains("encoder.layer0.sam.bank"), "{text}");

    let o = run(&["gradcheck", "--suite", "sam", "--corrupt-backward", "softmax"]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("sam"), "{}", stderr(&o));

    assert_eq!(run(&["gradcheck", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["gradcheck", "--corrupt-backward", "nope"]).status.code(), Some(2));
}

#[test]
fn thread_env_is_accepted_and_flag_overrides_it() {
    let o = bin()
        .env("ANYTSR_THREADS", "0")
        .args(["gradcheck", "--suite", "sam"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .env("ANYTSR_THREADS", "0")
        .args(["gradcheck", "--suite", "sam", "--threads", "1"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
