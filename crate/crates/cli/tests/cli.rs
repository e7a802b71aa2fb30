use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn treetag(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treetag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = treetag(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn encode_decode_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth", "in.trees", "--kind", "random", "--count", "50", "--seed", "4",
        ],
        d,
    );
    for scheme in ["relative", "absolute", "dynamic"] {
        ok(
            &[
                "encode", "--scheme", scheme, "--aux", "n+1,dist", "in.trees", "out.seq",
            ],
            d,
        );
        ok(&["decode", "out.seq", "back.trees"], d);
        assert_eq!(
            fs::read_to_string(d.join("in.trees")).unwrap(),
            fs::read_to_string(d.join("back.trees")).unwrap()
        );
    }
    let header = fs::read_to_string(d.join("out.seq")).unwrap();
    assert!(header.starts_with("# scheme=dynamic aux=n+1,dist\n"));
}

#[test]
fn canonical_serialization() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("in.trees"),
        "( (S\n  (NP (D the) (N dog))\n  (VP (V barks))))\n",
    )
    .unwrap();
    ok(&["encode", "in.trees", "out.seq"], d);
    ok(&["decode", "out.seq", "back.trees"], d);
    assert_eq!(
        fs::read_to_string(d.join("back.trees")).unwrap(),
        "(S (NP (D the) (N dog)) (VP (V barks)))\n"
    );
}

#[test]
fn eval_of_gold_against_itself() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "gold.trees", "--count", "20"], d);
    let out = ok(
        &["eval", "gold.trees", "gold.trees", "--per-n", "per_n.tsv"],
        d,
    );
    assert_eq!(out, "P 100.00 R 100.00 F1 100.00\n");
    let tsv = fs::read_to_string(d.join("per_n.tsv")).unwrap();
    assert!(tsv.starts_with("n\tgold\tpredicted\tcorrect\tprecision\trecall\tf1\n"));
    assert!(tsv.lines().skip(1).all(|l| l.ends_with("\t1.0000")));
}

#[test]
fn stats_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("in.trees"),
        "(S (NP (D a) (N b)) (V c))\n(S (NP (D a) (N b)) (V c))\n",
    )
    .unwrap();
    ok(&["encode", "in.trees", "out.seq"], d);
    let out = ok(&["stats", "out.seq"], d);
    assert!(out.contains("sentences\t2\n"));
    assert!(out.contains("full_labels\t3\n"));
    assert!(out.contains("rare_fraction_5\t1.0000\n"));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["synth", "train.trees", "--count", "40", "--seed", "2"], d);
    ok(
        &[
            "encode",
            "--scheme",
            "dynamic",
            "--aux",
            "dist",
            "train.trees",
            "train.seq",
        ],
        d,
    );
    let small = [
        "--epochs",
        "3",
        "--word-dim",
        "16",
        "--pos-dim",
        "8",
        "--hidden-dim",
        "24",
        "--seed",
        "7",
    ];
    let train = |out: &str| {
        let mut args = vec!["train", "train.seq", "--out", out, "--log", "train.tsv"];
        args.extend(small);
        ok(&args, d);
    };
    train("a.model");
    train("b.model");
    assert_eq!(
        fs::read(d.join("a.model")).unwrap(),
        fs::read(d.join("b.model")).unwrap(),
        "training is deterministic given a seed"
    );
    assert_eq!(
        fs::read_to_string(d.join("train.tsv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    ok(
        &[
            "predict",
            "--model",
            "a.model",
            "--batch-size",
            "7",
            "train.seq",
            "pred.trees",
        ],
        d,
    );
    ok(
        &[
            "predict",
            "--model",
            "a.model",
            "--sequential",
            "train.seq",
            "pred2.trees",
        ],
        d,
    );
    let pred = fs::read_to_string(d.join("pred.trees")).unwrap();
    assert_eq!(pred.lines().count(), 40);
    assert_eq!(pred, fs::read_to_string(d.join("pred2.trees")).unwrap());
    let report = ok(&["eval", "train.trees", "pred.trees"], d);
    assert!(report.starts_with("P ") && report.contains(" F1 "));

    ok(
        &[
            "finetune",
            "--model",
            "a.model",
            "train.trees",
            "--out",
            "tuned.model",
            "--log",
            "pg.tsv",
            "--epochs",
            "2",
            "--samples",
            "2",
            "--seed",
            "3",
        ],
        d,
    );
    let log = fs::read_to_string(d.join("pg.tsv")).unwrap();
    assert!(log.starts_with("epoch\tmean_reward\tmean_baseline\t"));
    assert_eq!(log.lines().count(), 3);
    ok(
        &[
            "predict",
            "--model",
            "tuned.model",
            "train.seq",
            "tuned.trees",
        ],
        d,
    );
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(treetag(&[], dir.path()).status.code(), Some(1));
    assert_eq!(treetag(&["encode"], dir.path()).status.code(), Some(1));
    assert_eq!(
        treetag(&["encode", "--scheme", "bogus", "a", "b"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(treetag(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two_and_location() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("bad.trees"),
        "(S (NP (D a) (N b)) (V c))\n(S (NP (D a)\n",
    )
    .unwrap();
    let out = treetag(&["encode", "bad.trees", "out.seq"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.trees:3:"), "{}", stderr(&out));

    fs::write(
        d.join("bad.seq"),
        "# scheme=relative aux=\na\tD\tr+1~S~NONE\nb\tN\tbogus\n\n",
    )
    .unwrap();
    let out = treetag(&["decode", "bad.seq", "out.trees"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.seq:3:"), "{}", stderr(&out));

    let out = treetag(&["eval", "missing.trees", "bad.trees"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.trees"));

    fs::write(d.join("model.json"), "{\"format\": \"other\"}").unwrap();
    let out = treetag(
        &["predict", "--model", "model.json", "bad.seq", "out.trees"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
}
