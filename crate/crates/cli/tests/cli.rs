use std::path::Path;
use std::process::{Command, Output};

fn streamgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamgcn"))
        .args(args)
        .env_remove("STREAMGCN_CONFIG")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = streamgcn(args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

/// Fails cleanly: nonzero exit, an error message, and no panic.
fn fails(args: &[&str]) -> i32 {
    let out = streamgcn(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success(), "{args:?} succeeded");
    assert!(!stderr.contains("panicked"), "{args:?} panicked: {stderr}");
    assert!(!stderr.is_empty(), "{args:?} printed no error");
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn accuracy_line(stdout: &str, prefix: &str) -> f64 {
    let line = stdout
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix} in {stdout}"));
    line[prefix.len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let synth_args = [
        "synth",
        "--out",
        p(&data),
        "--seed",
        "4",
        "--set",
        "per_class=4",
        "--set",
        "test_per_class=3",
        "--set",
        "frames=16",
    ];
    ok(&synth_args);
    let train_dir = data.join("train");
    let test_dir = data.join("test");
    assert_eq!(std::fs::read_dir(&train_dir).unwrap().count(), 12);
    assert_eq!(std::fs::read_dir(&test_dir).unwrap().count(), 9);

    let streams = tmp.path().join("streams");
    let out = ok(&["extract", "--input", p(&train_dir), "--out", p(&streams)]);
    assert!(out.contains("extracted 12 files"), "{out}");
    let single = tmp.path().join("one.streams");
    let first = train_dir.join("synth-00000.skel");
    ok(&["extract", "--input", p(&first), "--out", p(&single)]);
    assert!(single.is_file());

    let mut score_files = Vec::new();
    for stream in ["joint_velocity", "bone"] {
        let run = tmp.path().join(stream);
        let out = ok(&[
            "train",
            "--data",
            p(&streams),
            "--test",
            p(&test_dir),
            "--out",
            p(&run),
            "--stream",
            stream,
            "--epochs",
            "2",
            "--set",
            "network=tiny",
            "--verbose",
        ]);
        assert!(out.contains("epoch   1"), "{out}");
        for f in ["model.ckpt", "metrics.csv", "scores.csv"] {
            assert!(run.join(f).is_file(), "{f}");
        }
        let test_acc = accuracy_line(&out, "accuracy ");

        let scores = tmp.path().join(format!("{stream}.csv"));
        let ckpt = run.join("model.ckpt");
        let out = ok(&[
            "eval",
            "--model",
            p(&ckpt),
            "--data",
            p(&test_dir),
            "--scores",
            p(&scores),
        ]);
        assert_eq!(accuracy_line(&out, "accuracy "), test_acc);
        assert_eq!(
            std::fs::read(&scores).unwrap(),
            std::fs::read(run.join("scores.csv")).unwrap()
        );
        score_files.push(scores);
    }

    // One input fuses to itself.
    let out = ok(&["ensemble", p(&score_files[0])]);
    let own = accuracy_line(&out, &format!("{}: accuracy ", p(&score_files[0])));
    assert_eq!(accuracy_line(&out, "ensemble accuracy "), own);

    let fused = tmp.path().join("fused.csv");
    ok(&[
        "ensemble",
        p(&score_files[0]),
        p(&score_files[1]),
        "--weights",
        "1,0.5",
        "--out",
        p(&fused),
    ]);
    assert_eq!(std::fs::read_to_string(&fused).unwrap().lines().count(), 10);
    assert!(fails(&["ensemble", p(&score_files[0]), "--weights", "1,2"]) != 0);

    let ckpt = tmp.path().join("bone").join("model.ckpt");
    let attn = tmp.path().join("attn.csv");
    ok(&[
        "attn-dump",
        "--model",
        p(&ckpt),
        "--input",
        p(&single),
        "--out",
        p(&attn),
    ]);
    let csv = std::fs::read_to_string(&attn).unwrap();
    assert!(csv.starts_with("block,channel,weight\n"));
    for line in csv.lines().skip(1) {
        let w: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(w > 0.0 && w < 1.0, "{line}");
    }
    // Raw input goes through f64 streams instead of stored f32 ones.
    let stdout = ok(&["attn-dump", "--model", p(&ckpt), "--input", p(&first)]);
    assert_eq!(stdout.lines().count(), csv.lines().count());
    for (a, b) in stdout.lines().zip(csv.lines()).skip(1) {
        let (x, y): (f64, f64) = (
            a.rsplit(',').next().unwrap().parse().unwrap(),
            b.rsplit(',').next().unwrap().parse().unwrap(),
        );
        assert!((x - y).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn gradcheck_passes() {
    let out = ok(&[
        "gradcheck",
        "--seed",
        "1",
        "--set",
        "network=tiny",
        "--set",
        "joints=3",
        "--set",
        "frames=8",
    ]);
    assert!(out.contains("gradient check passed"), "{out}");
}

#[test]
fn config_file_and_environment_are_read() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "seed = 2\nsynth.per_class = 2\nsynth.classes = 4\ntrain.epochs = 3\n",
    )
    .unwrap();
    let data = tmp.path().join("d");
    ok(&["synth", "--out", p(&data), "--config", p(&cfg)]);
    assert_eq!(std::fs::read_dir(&data).unwrap().count(), 8);

    let out = Command::new(env!("CARGO_BIN_EXE_streamgcn"))
        .args(["synth", "--out", p(&tmp.path().join("e"))])
        .env("STREAMGCN_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(tmp.path().join("e")).unwrap().count(), 8);
    assert_eq!(
        std::fs::read(data.join("synth-00003.skel")).unwrap(),
        std::fs::read(tmp.path().join("e").join("synth-00003.skel")).unwrap()
    );
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(fails(&["frobnicate"]), 2);
    assert_eq!(fails(&["train", "--no-such-flag"]), 2);
    assert_eq!(fails(&[]), 2);
}

#[test]
fn bad_inputs_fail_without_panicking() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let junk = dir.join("junk.skel");
    std::fs::write(&junk, "not a skeleton\n").unwrap();
    let ckpt = dir.join("junk.ckpt");
    std::fs::write(&ckpt, b"\x00\x01garbage").unwrap();
    let scores = dir.join("junk.csv");
    std::fs::write(&scores, "sample_id,label\nx,y\n").unwrap();
    let missing = dir.join("missing");
    let out = dir.join("out");

    assert_eq!(
        fails(&["extract", "--input", p(&junk), "--out", p(&out)]),
        1
    );
    assert_eq!(
        fails(&["extract", "--input", p(&missing), "--out", p(&out)]),
        1
    );
    assert_eq!(
        fails(&[
            "train",
            "--data",
            p(dir),
            "--out",
            p(&out),
            "--stream",
            "bone"
        ]),
        1
    );
    assert_eq!(fails(&["train", "--data", p(dir), "--out", p(&out)]), 1);
    assert_eq!(fails(&["eval", "--model", p(&ckpt), "--data", p(dir)]), 1);
    assert_eq!(fails(&["ensemble", p(&scores)]), 1);
    assert_eq!(
        fails(&["attn-dump", "--model", p(&ckpt), "--input", p(&junk)]),
        1
    );
    assert_eq!(fails(&["synth", "--out", p(&out), "--set", "classes=9"]), 1);
    assert_eq!(fails(&["synth", "--out", p(&out), "--set", "bogus=1"]), 1);
    assert_eq!(fails(&["synth", "--out", p(&out), "--set", "noequals"]), 1);
    assert_eq!(
        fails(&["synth", "--out", p(&out), "--config", p(&missing)]),
        1
    );
    assert_eq!(
        fails(&["gradcheck", "--set", "objective=ce", "--set", "beta=0.1"]),
        1
    );
}
