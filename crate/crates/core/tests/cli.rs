use std::path::Path;
use std::process::{Command, Output};

use sentvae::synthetic::default_grammar;

const SUBCOMMANDS: [&str; 8] = ["build-vocab", "train", "eval", "sample", "homotopy", "impute", "adv-eval", "gen-synthetic"];

fn sentvae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentvae"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn sentvae")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sentvae(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_on_every_subcommand_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(dir.path(), &["--help"]);
    for sub in SUBCOMMANDS {
        assert!(top.contains(sub), "{sub} missing from top-level help");
        let help = ok(dir.path(), &[sub, "--help"]);
        assert!(help.contains("--seed") && help.contains("[default: 0]"), "{sub}: {help}");
        assert!(help.contains("--config"), "{sub}");
    }
    let train = ok(dir.path(), &["train", "--help"]);
    for flag in ["--model", "--keep-rate", "--anneal", "--direction", "--out-dir"] {
        assert!(train.contains(flag), "{flag}");
    }
    assert!(train.contains("[default: vae]") && train.contains("[default: l2r]"));
    let impute = ok(dir.path(), &["impute", "--help"]);
    assert!(impute.contains("[default: 15]") && impute.contains("[default: 3]") && impute.contains("[default: 5]"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sentvae(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = sentvae(dir.path(), &["sample", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
    let out = sentvae(dir.path(), &["eval", "--ckpt", "missing.ckpt", "--vocab", "missing.txt", "--data", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn synthetic_corpus_is_reproducible_and_in_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synthetic", "--count", "500", "--seed", "9", "--output", "a.txt"]);
    ok(dir.path(), &["gen-synthetic", "--count", "500", "--seed", "9", "--output", "b.txt"]);
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.txt")).unwrap());
    let vocab = default_grammar().vocabulary();
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 500);
    assert!(text.split_whitespace().all(|w| vocab.contains(w)));
}

#[test]
fn train_homotopy_and_impute_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synthetic", "--count", "200", "--seed", "1", "--output", "train.txt"]);
    ok(d, &["gen-synthetic", "--count", "30", "--seed", "2", "--output", "dev.txt"]);
    ok(d, &["build-vocab", "--input", "train.txt", "--output", "vocab.txt"]);
    std::fs::write(d.join("small.cfg"), "steps=20\nbatch-size=8\neval-interval=10\nembedding-dim=8\nhidden-dim=8\nz-dim=4\n").unwrap();
    let summary = ok(
        d,
        &["train", "--config", "small.cfg", "--model", "vae", "--keep-rate", "0.75", "--anneal", "sigmoid", "--train", "train.txt", "--dev", "dev.txt", "--vocab", "vocab.txt", "--out-dir", "run"],
    );
    assert!(summary.contains("best_step"));
    assert!(d.join("run/model.ckpt").exists());
    let log = std::fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");

    let hom = ok(d, &["homotopy", "--ckpt", "run/model.ckpt", "--vocab", "vocab.txt", "--random-pair", "--steps", "8"]);
    let n = hom.lines().count();
    assert!((1..=8).contains(&n));
    assert!(hom.lines().all(|l| l.split('\t').count() == 2));
    let all = ok(d, &["homotopy", "--ckpt", "run/model.ckpt", "--vocab", "vocab.txt", "--random-pair", "--steps", "8", "--no-dedupe"]);
    assert_eq!(all.lines().count(), 8);

    let tsv = ok(d, &["impute", "--ckpt", "run/model.ckpt", "--vocab", "vocab.txt", "--data", "dev.txt", "--model", "vae", "--icm-rounds", "3", "--icm-beam", "5"]);
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows[0], "sentence_id\tknown_prefix\ttrue_completion\tmodel_completion\tmodel");
    assert_eq!(rows.len(), 31);
    let out = sentvae(d, &["impute", "--ckpt", "run/model.ckpt", "--vocab", "vocab.txt", "--data", "dev.txt", "--model", "rnnlm"]);
    assert_eq!(out.status.code(), Some(1), "model family mismatch is a usage error");

    let samples = ok(d, &["sample", "--ckpt", "run/model.ckpt", "--vocab", "vocab.txt", "--count", "4", "--stretch-c", "0.3"]);
    assert_eq!(samples.lines().count(), 4);
}
