use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sceneparse::data::SplitRole;
use sceneparse::data::{generate_synthetic_scenes, load_split, ClassCatalog, SynthConfig};

const CONFIG: &str = "\
# small and fast
synth.preset = toy
synth.images = 6
synth.test_images = 3
sampler.strategies = gs,cs
sampler.epoch_size = 600
local.epochs = 4
metric.epochs = 2
metric.per_class = 30
metric.batch = 30
retrieval.k = 20
retrieval.exemplars = 2
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sceneparse"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.cfg"), CONFIG).unwrap();
    dir
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files(a);
    assert_eq!(fa, files(b));
    for f in fa {
        assert!(
            fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(),
            "{} differs",
            f.display()
        );
    }
}

#[test]
fn synth_is_reproducible_and_loads_back() {
    let w = workdir();
    let d = w.path();
    ok(d, &["--config", "exp.cfg", "--seed", "5", "--out", "a", "synth"]);
    ok(d, &["--config", "exp.cfg", "--seed", "5", "--out", "b", "synth"]);
    assert_same_tree(&d.join("a"), &d.join("b"));
    let catalog = ClassCatalog::load(&d.join("a/classes.txt")).unwrap();
    let loaded = load_split(&d.join("a/train.tsv"), &catalog, SplitRole::Train).unwrap();
    let mut cfg = SynthConfig::toy();
    cfg.images = 6;
    assert_eq!(loaded.records, generate_synthetic_scenes(&cfg, 5).unwrap().records);
}

#[test]
fn exit_codes() {
    let w = workdir();
    let d = w.path();
    assert_eq!(run(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(d, &["parse", "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(run(d, &["synth", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(run(d, &["--out", "missing/deeper", "synth"]).status.code(), Some(2));
    assert!(!d.join("missing").exists());
    assert_eq!(run(d, &["--out", "empty", "train-local"]).status.code(), Some(2));
    fs::write(d.join("bad.cfg"), "seed = many\n").unwrap();
    assert_eq!(run(d, &["--config", "bad.cfg", "synth"]).status.code(), Some(2));
    assert!(run(d, &["--help"]).status.success());
}

#[test]
fn pipeline_is_exact_on_toy_data_and_reproducible() {
    let w = workdir();
    let d = w.path();
    let stages: [&[&str]; 5] = [
        &["synth"],
        &["train-local"],
        &["train-metric"],
        &["build-index"],
        &["parse", "--mode", "local"],
    ];
    for out in ["a", "b"] {
        for s in stages {
            let mut args = vec!["--config", "exp.cfg", "--seed", "3", "--out", out];
            args.extend(s);
            ok(d, &args);
        }
    }
    let report = ok(d, &["--config", "exp.cfg", "--out", "a", "eval"]);
    assert!(report.starts_with("gpa\t1.000000\naca\t1.000000\n"), "{report}");
    assert!(d.join("a/confusion.csv").exists());
    fs::remove_file(d.join("a/eval.txt")).unwrap();
    fs::remove_file(d.join("a/confusion.csv")).unwrap();
    assert_same_tree(&d.join("a"), &d.join("b"));

    // a uniform global prior leaves the local labeling untouched
    ok(
        d,
        &[
            "--config",
            "exp.cfg",
            "--seed",
            "3",
            "--out",
            "u",
            "build-index",
            "--uniform-prior",
            "--train",
            "a/train.tsv",
            "--classes",
            "a/classes.txt",
            "--model",
            "a/local.pens",
        ],
    );
    ok(
        d,
        &[
            "--config",
            "exp.cfg",
            "--out",
            "a",
            "parse",
            "--mode",
            "integrated",
            "--index",
            "u/index.pidx",
        ],
    );
    for i in 0..3 {
        let name = format!("pred/{i:05}.pgm");
        assert_eq!(
            fs::read(d.join("a").join(&name)).unwrap(),
            fs::read(d.join("b").join(&name)).unwrap()
        );
    }

    for mode in [
        &["parse", "--mode", "global"][..],
        &["parse", "--metric", "a/metric.pmtr"],
    ] {
        let mut args = vec!["--config", "exp.cfg", "--out", "a"];
        args.extend(mode);
        ok(d, &args);
        ok(d, &["--config", "exp.cfg", "--out", "a", "eval"]);
    }

    ok(
        d,
        &[
            "--config",
            "exp.cfg",
            "--out",
            "a",
            "train-metric",
            "--fine-tune",
            "--loss-norm",
            "features",
        ],
    );
    assert!(d.join("a/metric.pnet").exists());
    ok(
        d,
        &[
            "--config",
            "exp.cfg",
            "--out",
            "a",
            "build-index",
            "--pixel-net",
            "a/metric.pnet",
        ],
    );
    ok(
        d,
        &[
            "--config",
            "exp.cfg",
            "--out",
            "a",
            "parse",
            "--metric",
            "a/metric.pmtr",
        ],
    );

    let mut idx = fs::read(d.join("a/index.pidx")).unwrap();
    idx[4] = 9;
    fs::write(d.join("a/index.pidx"), idx).unwrap();
    let out = run(d, &["--config", "exp.cfg", "--out", "a", "parse", "--mode", "global"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
    fs::write(d.join("a/local.pens"), b"PIDX").unwrap();
    let out = run(d, &["--config", "exp.cfg", "--out", "a", "parse", "--mode", "local"]);
    assert_eq!(out.status.code(), Some(2));
}
