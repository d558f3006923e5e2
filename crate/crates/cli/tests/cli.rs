use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/news")
}

fn docembed(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docembed"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn corpus_args() -> Vec<String> {
    let f = fixtures();
    vec![
        "--corpus".into(),
        f.join("train.tsv").display().to_string(),
        "--test-corpus".into(),
        f.join("test.tsv").display().to_string(),
        "--min-count".into(),
        "1".into(),
    ]
}

fn run(args: &[&str], extra: &[String], cwd: &Path) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(extra.iter().map(String::as_str));
    docembed(&all, cwd)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 8] = [
    "--dim",
    "12",
    "--batch",
    "16",
    "--epochs",
    "2",
    "--deterministic",
    "--quiet",
];

#[test]
fn train_embed_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let lex = fixtures().join("lexicon");
    let lex = lex.to_str().unwrap();
    let mut args = vec![
        "train",
        "--aug",
        "wordnet",
        "--lambda",
        "0.5",
        "--lexicon-dir",
        lex,
        "--checkpoint-out",
        "m.ckpt",
    ];
    args.extend(SMALL);
    let o = run(&args, &corpus_args(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("m.vocab").is_file());

    let o = run(
        &[
            "embed",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "e.bin",
            "--format",
            "binary",
            "--labels-out",
            "l.tsv",
            "--split-out",
            "s.tsv",
            "-q",
        ],
        &corpus_args(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let o = docembed(
        &[
            "eval-classify",
            "--embeddings",
            "e.bin",
            "--labels",
            "l.tsv",
            "--split",
            "s.tsv",
            "-q",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["task"], "classify");
    assert_eq!(report["n_test"], 24);
    let err = report["error_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&err));

    let o = docembed(
        &[
            "eval-cluster",
            "--embeddings",
            "e.bin",
            "--labels",
            "l.tsv",
            "--k",
            "3",
            "-q",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["task"], "cluster");
    assert_eq!(report["n"], 120);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = docembed(&["train", "-q"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = docembed(&["train", "--bogus", "-q"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = docembed(&["train", "--corpus", "absent.tsv", "-q"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("absent.tsv"));
    let o = run(
        &["train", "--lambda", "1", "--aug", "none", "-q"],
        &corpus_args(),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4));
    let o = run(
        &["train", "--lambda", "1", "--aug", "antonym", "--epochs", "1", "-q"],
        &corpus_args(),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing-lexicon"));
}

#[test]
fn flags_override_config_file_and_echo_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.conf"),
        "dim = 7\nwindow = 3\nepochs = 2\nbatch = 32\ndeterministic = true\n",
    )
    .unwrap();
    let o = run(
        &[
            "train",
            "--config",
            "run.conf",
            "--dim",
            "5",
            "--checkpoint-out",
            "a.ckpt",
        ],
        &corpus_args(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = stderr(&o);
    assert!(echoed.contains("dim = 5\n"));
    assert!(echoed.contains("window = 3\n"));
    assert!(echoed.contains("seed = 1\n"));

    let resolved: String = echoed
        .lines()
        .filter(|l| l.contains(" = ") && !l.starts_with('['))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("echo.conf"), resolved).unwrap();
    let o = run(
        &["train", "--config", "echo.conf", "--checkpoint-out", "b.ckpt", "-q"],
        &corpus_args(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(dir.path().join("a.ckpt")).unwrap();
    let b = fs::read(dir.path().join("b.ckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn preset_sets_table_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["train", "--preset", "r8", "--epochs", "1", "--dim", "4"],
        &corpus_args(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let e = stderr(&o);
    for line in ["window = 6", "negatives = 5", "aug = antonym", "doc_sample = 5"] {
        assert!(e.contains(line), "{line} missing from\n{e}");
    }
}

#[test]
fn augment_preview_prints_views() {
    let dir = tempfile::tempdir().unwrap();
    let lex = fixtures().join("lexicon");
    let o = run(
        &[
            "augment-preview",
            "--doc-id",
            "0",
            "--aug",
            "wordnet",
            "-n",
            "3",
            "--lexicon-dir",
            lex.to_str().unwrap(),
            "-q",
        ],
        &corpus_args(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("original\t"));
    let words = |l: &str| l.split('\t').nth(1).unwrap().split(' ').count();
    assert!(lines[1..].iter().all(|l| words(l) == words(lines[0])));
}

#[test]
fn help_lists_every_train_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = docembed(&["train", "--help"], dir.path());
    let help = String::from_utf8(o.stdout).unwrap();
    for flag in [
        "--corpus",
        "--preset",
        "--dim",
        "--window",
        "--negatives",
        "--doc-sample",
        "--batch",
        "--lr",
        "--epochs",
        "--lambda",
        "--tau",
        "--framework",
        "--aug",
        "--lexicon-dir",
        "--seed",
        "--threads",
        "--deterministic",
        "--checkpoint-out",
        "--simsiam-as-printed",
        "--config",
        "--quiet",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}
