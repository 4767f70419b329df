use std::path::Path;
use std::process::{Command, Output};

use tagfuzz_core::coverage::{BasicBlockId, CoverageSet};

fn tagfuzz(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagfuzz"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn tagfuzz")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tagfuzz(dir, args);
    assert!(
        out.status.success(),
        "tagfuzz {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn blocks(n: u64) -> CoverageSet {
    (0..n).map(|i| BasicBlockId::new(0, i)).collect()
}

#[test]
fn report_prints_improvement_over_best_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    blocks(57_993).save(&d.join("ddqn.cov")).unwrap();
    std::fs::create_dir(d.join("base")).unwrap();
    blocks(53_580).save(&d.join("base/g0.cov")).unwrap();
    blocks(53_822).save(&d.join("base/g1.cov")).unwrap();
    let out = ok(d, &["report", "--candidate", "ddqn.cov", "--baseline", "base", "--out", "rep"]);
    assert!(out.contains("+7.7%"), "{out}");
    let csv = std::fs::read_to_string(d.join("rep/report.csv")).unwrap();
    assert!(csv.contains("g0") && csv.contains("g1") && csv.contains("ddqn"));
}

#[test]
fn kl_of_identical_histograms_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.tsv"), "br\t3\na\t1\nCONTINUE\t6\n").unwrap();
    std::fs::write(d.join("b.tsv"), "br\t3\na\t1\nCONTINUE\t6\n").unwrap();
    let out = ok(d, &["policy", "kl", "--hist", "a.tsv", "--hist", "b.tsv", "--out", "kl"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "model,a,b");
    assert_eq!(lines[1], "a,0,0");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tagfuzz(d, &["corpus", "gen", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(tagfuzz(d, &["corpus", "gen", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(tagfuzz(d, &["ddqn", "collect", "--config", "C9"]).status.code(), Some(2));
    std::fs::write(d.join("bad.kv"), "kernel_size=3\nwhatever=1\n").unwrap();
    assert_eq!(
        tagfuzz(d, &["tcn", "train", "--corpus", "x", "--config", "bad.kv"]).status.code(),
        Some(2)
    );
    // A missing input is a runtime failure, not a usage error.
    assert_eq!(tagfuzz(d, &["tcn", "train", "--corpus", "missing.txt"]).status.code(), Some(1));
}

#[test]
fn dump_config_shows_preset_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["ddqn", "collect", "--config", "C3", "--dump-config"]);
    assert!(out.contains("name=C3"), "{out}");
    assert!(out.contains("experiences=1000"));
    assert!(!dir.path().join("out").exists(), "dump-config writes nothing");
}

#[test]
fn tcn_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus", "gen", "--seed", "3", "--set", "n_tags=60", "--out", "corpus"]);
    std::fs::write(
        d.join("tiny.kv"),
        "embed_dim=8\nkernel_size=3\ndilations=1,2,4,8,16,32,64\ndense1=16\ndense2=8\nmax_epochs=2\nwindow_len=100\nstride=100\nmax_seq_len=100\n",
    )
    .unwrap();
    for run in ["a", "b"] {
        ok(d, &["tcn", "train", "--corpus", "corpus", "--config", "tiny.kv", "--seed", "5", "--out", run]);
    }
    let a = std::fs::read(d.join("a/model.ckpt")).unwrap();
    let b = std::fs::read(d.join("b/model.ckpt")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read_to_string(d.join("a/history.csv")).unwrap(),
        std::fs::read_to_string(d.join("b/history.csv")).unwrap()
    );

    let sample = ok(d, &["tcn", "sample", "--model", "a", "--set", "n_chars=50", "--out", "s"]);
    assert!(sample.starts_with('<'));
    let eval = ok(d, &["tcn", "eval", "--model", "a", "--corpus", "corpus", "--set", "window_len=100", "--out", "e"]);
    assert!(eval.starts_with("loss "), "{eval}");
}

#[test]
fn grammar_fuzz_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["fuzz", "run", "--set", "policy=random", "--set", "cases=2", "--set", "target_len=2000", "--out", "f"],
    );
    assert_eq!(std::fs::read_dir(d.join("f/cases")).unwrap().count(), 2);
    assert_eq!(std::fs::read_dir(d.join("f/coverage")).unwrap().count(), 2);
    let union = CoverageSet::load(&d.join("f/union.cov")).unwrap();
    assert!(!union.is_empty());
    let hist = std::fs::read_to_string(d.join("f/policy.tsv")).unwrap();
    assert!(hist.contains("CONTINUE"));
}
