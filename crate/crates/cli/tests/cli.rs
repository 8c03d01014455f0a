use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lipread::tokenizer::Vocabulary;

fn lipread(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipread"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = lipread(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn body(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// A preprocessed five-utterance corpus with a two-epoch model and an LM.
fn pipeline(dir: &Path) -> PathBuf {
    ok(dir, &["synth-data", "--out", "corpus", "--set", "utterances=5"]);
    ok(dir, &["preprocess", "--manifest", "corpus/manifest.tsv", "--out", "proc"]);
    ok(dir, &["train", "--data", "proc", "--out", "m.lpck", "--set", "epochs=2"]);
    ok(dir, &["lm-train", "--transcripts", "corpus/transcripts.txt", "--out", "lm.txt"]);
    dir.to_path_buf()
}

#[test]
fn preprocess_writes_clips_and_stats_idempotently() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-data", "--out", "corpus", "--set", "utterances=5"]);
    ok(dir, &["preprocess", "--manifest", "corpus/manifest.tsv", "--out", "proc"]);
    let clips = std::fs::read_dir(dir.join("proc"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "lrv"))
        .count();
    assert_eq!(clips, 5);
    assert!(dir.join("proc/stats.txt").exists());
    let snapshot = |d: &str| {
        let mut files: Vec<_> = std::fs::read_dir(dir.join(d)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    let first = snapshot("proc");
    ok(dir, &["preprocess", "--manifest", "corpus/manifest.tsv", "--out", "proc"]);
    assert_eq!(snapshot("proc"), first);
}

#[test]
fn corrupt_and_missing_inputs_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-data", "--out", "corpus", "--set", "utterances=3"]);
    let clip = dir.join("corpus/utt00001.lrv");
    let mut bytes = std::fs::read(&clip).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&clip, bytes).unwrap();
    std::fs::remove_file(dir.join("corpus/utt00002.csv")).unwrap();
    let out = lipread(dir, &["preprocess", "--manifest", "corpus/manifest.tsv", "--out", "proc"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("utt00001.lrv"), "{err}");
    assert!(err.contains("utt00002.csv"), "{err}");
    assert!(!dir.join("proc/stats.txt").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&lipread(dir, &["train", "--bogus"])), 1);
    assert_eq!(code(&lipread(dir, &["synth-data", "--out", "x", "--set", "colour=blue"])), 1);
    assert_eq!(code(&lipread(dir, &["synth-data", "--out", "x", "--ctc_only", "--attn_only"])), 1);
    std::fs::write(dir.join("run.conf"), "beam = 0\n").unwrap();
    assert_eq!(code(&lipread(dir, &["--config", "run.conf", "synth-data", "--out", "x"])), 1);
    assert_eq!(code(&lipread(dir, &["--help"])), 0);
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.conf"), "# tiny corpus\nutterances = 2\nseed = 5\n").unwrap();
    ok(dir, &["--config", "run.conf", "--seed", "9", "synth-data", "--out", "c"]);
    let manifest = std::fs::read_to_string(dir.join("c/manifest.tsv")).unwrap();
    assert!(manifest.contains("# seed = 9\n"));
    assert!(manifest.contains("# utterances = 2\n"));
    assert_eq!(body(&dir.join("c/transcripts.txt")).lines().count(), 2);
}

#[test]
fn numerical_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-data", "--out", "corpus", "--set", "utterances=2"]);
    ok(dir, &["preprocess", "--manifest", "corpus/manifest.tsv", "--out", "proc"]);
    let out = lipread(
        dir,
        &["train", "--data", "proc", "--out", "m.lpck", "--set", "epochs=2", "--set", "lr=1e300", "--set", "clip_norm=1e300"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn decode_ablation_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pipeline(tmp.path());
    let dir = dir.as_path();
    ok(dir, &["decode", "--data", "proc", "--model", "m.lpck", "--lm", "lm.txt", "--out", "ctc", "--ctc_only"]);
    ok(dir, &["decode", "--data", "proc", "--model", "m.lpck", "--lm", "lm.txt", "--out", "lam", "--set", "lambda=1"]);
    assert_eq!(body(&dir.join("ctc/nbest.tsv")), body(&dir.join("lam/nbest.tsv")));

    std::fs::write(dir.join("other.txt"), "x\tuna frase distinta sin relacion\n").unwrap();
    ok(dir, &["lm-train", "--transcripts", "other.txt", "--out", "lm2.txt", "--set", "lm_order=2"]);
    ok(dir, &["decode", "--data", "proc", "--model", "m.lpck", "--lm", "lm.txt", "--out", "a", "--no_lm"]);
    ok(dir, &["decode", "--data", "proc", "--model", "m.lpck", "--lm", "lm2.txt", "--out", "b", "--no_lm"]);
    ok(dir, &["decode", "--data", "proc", "--model", "m.lpck", "--out", "c", "--no_lm"]);
    let a = std::fs::read(dir.join("a/nbest.tsv")).unwrap();
    assert_eq!(a, std::fs::read(dir.join("b/nbest.tsv")).unwrap());
    assert_eq!(a, std::fs::read(dir.join("c/nbest.tsv")).unwrap());
    assert_eq!(code(&lipread(dir, &["decode", "--data", "proc", "--model", "m.lpck", "--out", "d"])), 1);
}

#[test]
fn incompatible_vocabularies_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = pipeline(tmp.path());
    let dir = dir.as_path();
    let mut symbols = Vocabulary::spanish().to_text();
    symbols = symbols.replacen("ñ\n", "ç\n", 1);
    std::fs::write(dir.join("vocab.txt"), &symbols).unwrap();
    std::fs::write(dir.join("other.txt"), "x\tuna frase\n").unwrap();
    ok(dir, &["--vocab", "vocab.txt", "lm-train", "--transcripts", "other.txt", "--out", "lm_other.txt"]);
    for args in [
        vec!["decode", "--data", "proc", "--model", "m.lpck", "--lm", "lm_other.txt", "--out", "x"],
        vec!["--vocab", "vocab.txt", "decode", "--data", "proc", "--model", "m.lpck", "--no_lm", "--out", "x"],
        vec!["--vocab", "vocab.txt", "train", "--data", "proc", "--out", "m2.lpck"],
    ] {
        let out = lipread(dir, &args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary mismatch"));
    }
}

#[test]
fn evaluate_and_analyze_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("ref.txt"), "a\ty hasta mañana muy buenas noches\nb\tel perro come\n").unwrap();
    std::fs::write(dir.join("hyp.txt"), "a\testa mañana muy buenas noches\nb\tel perro come\n").unwrap();
    let out = ok(dir, &["evaluate", "--refs", "ref.txt", "--hyps", "hyp.txt", "--out", "report.tsv", "--set", "replicates=200"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("WER 22.22%"));
    let report = std::fs::read_to_string(dir.join("report.tsv")).unwrap();
    assert!(report.contains("# replicates = 200\n"));
    ok(dir, &["analyze", "--train", "ref.txt", "--test", "hyp.txt", "--hyps", "hyp.txt", "--out", "an", "--set", "top_n=3"]);
    for f in ["zipf.tsv", "coverage.tsv", "histogram.tsv"] {
        assert!(std::fs::read_to_string(dir.join("an").join(f)).unwrap().contains("# vocab_hash = "));
    }
    let hist = body(&dir.join("an/histogram.tsv"));
    assert!(hist.contains("0\t10\t2\n"), "{hist}");
}
