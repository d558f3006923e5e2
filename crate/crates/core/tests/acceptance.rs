//! One PASS/FAIL line per acceptance criterion. The R8 criteria run only when
//! `DOCEMBED_R8_DIR` points at a directory with `train.txt`, `test.txt`
//! (`label<TAB>text` lines) and a `lexicon/` directory; otherwise they are
//! reported as not run and do not affect the exit status.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use docembed::augment::{augment, AugmentKind, AugmentStrategy, AugmentationLexicon};
use docembed::contrastive::{nt_xent_loss, simsiam_loss};
use docembed::corpus::{Corpus, CorpusOptions, SparseBow, Split};
use docembed::encoder::{embed_document, softmax_distribution};
use docembed::eval::{corpus_embeddings, evaluate_classification, evaluate_clustering, EvalReport, LogRegOptions};
use docembed::par::Execution;
use docembed::rng::{derive, Purpose};
use docembed::synthetic::two_topic_corpus;
use docembed::trainer::{save_checkpoint, train, train_backbone, Preset, TrainConfig};
use ndarray::Array2;
use rand::Rng;

/// Whether a criterion holds, and the measured numbers behind it.
type Verdict = (bool, String);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/news")
}

fn fixture_corpus() -> Corpus {
    let dir = fixtures();
    let opts = CorpusOptions {
        min_count: 1,
        ..Default::default()
    };
    Corpus::from_files(
        &[
            (&dir.join("train.tsv"), Split::Train),
            (&dir.join("test.tsv"), Split::Test),
        ],
        None,
        &opts,
    )
    .unwrap()
}

fn classify(corpus: &Corpus, input: &Array2<f64>) -> f64 {
    let set = corpus_embeddings(corpus, input, Execution::Parallel).unwrap();
    match evaluate_classification(&set, &LogRegOptions::default()).unwrap() {
        EvalReport::Classify { error_rate, .. } => error_rate,
        other => panic!("{other:?}"),
    }
}

fn cluster_nmi(corpus: &Corpus, input: &Array2<f64>, k: usize) -> f64 {
    let set = corpus_embeddings(corpus, input, Execution::Parallel).unwrap();
    match evaluate_clustering(&set, k, 1, 10, Execution::Parallel).unwrap() {
        EvalReport::Cluster { nmi, .. } => nmi,
        other => panic!("{other:?}"),
    }
}

struct R8Runs {
    corpus: Corpus,
    backbone: Array2<f64>,
    deca: Array2<f64>,
    seconds: f64,
}

fn r8_runs(dir: &Path) -> R8Runs {
    let opts = CorpusOptions {
        skip_empty: true,
        ..Default::default()
    };
    let corpus = Corpus::from_files(
        &[
            (&dir.join("train.txt"), Split::Train),
            (&dir.join("test.txt"), Split::Test),
        ],
        None,
        &opts,
    )
    .unwrap();
    let lexicon = AugmentationLexicon::load_dir(&dir.join("lexicon"), &corpus.vocab).unwrap();
    let mut config = TrainConfig {
        dim: 100,
        batch_size: 4096,
        learning_rate: 1e-3,
        deterministic: true,
        ..Default::default()
    };
    Preset::R8.apply(&mut config);
    if let Some(e) = std::env::var("DOCEMBED_R8_EPOCHS").ok().and_then(|s| s.parse().ok()) {
        config.epochs = e;
    }
    let start = Instant::now();
    let backbone = train_backbone(&corpus.documents, &corpus.vocab, &config).unwrap();
    let deca_config = TrainConfig { lambda: 1.0, ..config };
    let deca = train(&corpus.documents, &corpus.vocab, Some(&lexicon), &deca_config).unwrap();
    R8Runs {
        backbone: backbone.params().input.clone(),
        deca: deca.params().input.clone(),
        corpus,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn r8_end_to_end_reproduction(runs: &R8Runs) -> Verdict {
    let base = classify(&runs.corpus, &runs.backbone);
    let deca = classify(&runs.corpus, &runs.deca);
    let ok = base <= 0.045 && base - deca >= 0.003 && runs.seconds <= 1800.0;
    (
        ok,
        format!(
            "backbone error {:.2}%, DECA error {:.2}%, {:.0}s",
            100.0 * base,
            100.0 * deca,
            runs.seconds
        ),
    )
}

fn r8_clustering(runs: &R8Runs) -> Verdict {
    let k = runs.corpus.num_classes();
    let base = cluster_nmi(&runs.corpus, &runs.backbone, k);
    let deca = cluster_nmi(&runs.corpus, &runs.deca, k);
    (
        deca >= base && deca >= 0.5,
        format!("backbone NMI {base:.3}, DECA NMI {deca:.3}"),
    )
}

fn lambda_zero_matches_backbone_only_build() -> Verdict {
    let corpus = fixture_corpus();
    let lexicon = AugmentationLexicon::load_dir(&fixtures().join("lexicon"), &corpus.vocab).unwrap();
    let config = TrainConfig {
        dim: 16,
        batch_size: 16,
        epochs: 3,
        lambda: 0.0,
        augment: Some(AugmentKind::Antonym),
        deterministic: true,
        seed: 11,
        ..Default::default()
    };
    let with_module = train(&corpus.documents, &corpus.vocab, Some(&lexicon), &config).unwrap();
    let without = train_backbone(&corpus.documents, &corpus.vocab, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a, &with_module.checkpoint).unwrap();
    save_checkpoint(&b, &without.checkpoint).unwrap();
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());

    let active = TrainConfig { lambda: 0.5, ..config };
    let moved = train(&corpus.documents, &corpus.vocab, Some(&lexicon), &active).unwrap();
    let control = moved.checkpoint.params != without.checkpoint.params;
    (
        a == b && control,
        format!(
            "{} checkpoint bytes identical: {}; lambda 0.5 differs: {control}",
            a.len(),
            a == b
        ),
    )
}

fn loss_oracles() -> Verdict {
    let mut loss_err: f64 = 0.0;
    for seed in 0..50u64 {
        let n = 2 + (seed as usize % 7);
        let d = 1 + (seed as usize % 5);
        let h = random_rows(seed, n, d);
        let t = random_rows(seed + 1000, n, d);
        let tau = 0.1 + 0.3 * (seed % 4) as f64;
        let got = nt_xent_loss(&to_array(&h), &to_array(&t), tau).unwrap();
        loss_err = loss_err.max((got.loss - brute_nt_xent(&h, &t, tau)).abs());
        let w = predictor(seed, d, 4);
        for as_printed in [false, true] {
            let got = simsiam_loss(&to_array(&h), &to_array(&t), &w, as_printed).unwrap();
            let want = brute_simsiam(&h, &t, &w, as_printed);
            for (a, b) in got.pair.per_sample.iter().zip(&want) {
                loss_err = loss_err.max((a - b).abs());
            }
        }
    }

    let mut softmax_err: f64 = 0.0;
    for seed in 0..50 {
        let p = random_params(seed, 40, 5);
        let dist = softmax_distribution(&[1, 2, 3, 7], &[4, 5, 9], &p).unwrap();
        softmax_err = softmax_err.max((dist.iter().sum::<f64>() - 1.0).abs());
    }

    let mut grad: [f64; 5] = [0.0; 5];
    for seed in 0..8u64 {
        grad[0] = grad[0].max(backbone_grad_err(seed));
        grad[1] = grad[1].max(nt_xent_grad_err(
            seed,
            2 + seed as usize % 7,
            1 + seed as usize % 5,
            0.5,
        ));
        grad[2] = grad[2].max(simsiam_grad_err(
            seed,
            2 + seed as usize % 7,
            1 + seed as usize % 5,
            false,
        ));
        grad[3] = grad[3].max(simsiam_grad_err(
            seed,
            2 + seed as usize % 7,
            1 + seed as usize % 5,
            true,
        ));
        grad[4] = grad[4].max(logreg_grad_err(seed));
    }
    let grad_max = grad.iter().copied().fold(0.0, f64::max);
    (loss_err <= 1e-10 && softmax_err <= 1e-12 && grad_max <= 1e-4,
        format!(
            "loss {loss_err:.1e}, softmax sum {softmax_err:.1e}, gradients backbone {:.1e} nt-xent {:.1e} simsiam {:.1e}/{:.1e} logreg {:.1e}",
            grad[0], grad[1], grad[2], grad[3], grad[4]
        ),
    )
}

fn encoder_identity() -> Verdict {
    let (v, d) = (60, 7);
    let mut g = derive(3, 0, 0, Purpose::Init);
    let input = Array2::from_shape_fn((v, d), |_| g.random_range(-1.0..1.0));
    let mut mismatches = 0;
    for i in 0..1000u64 {
        let mut r = derive(3, 1, i, Purpose::Init);
        let len = r.random_range(1..50);
        let tokens: Vec<u32> = (0..len).map(|_| r.random_range(0..v as u32)).collect();
        let got = embed_document(&SparseBow::from_tokens(&tokens).unwrap(), &input).unwrap();

        let mut bag = tokens.clone();
        bag.sort_unstable();
        let mut naive = vec![0.0; d];
        for &t in &bag {
            for (j, x) in naive.iter_mut().enumerate() {
                *x += input[[t as usize, j]];
            }
        }
        for x in &mut naive {
            *x /= bag.len() as f64;
        }
        if got.as_slice().unwrap() != naive.as_slice() {
            mismatches += 1;
        }
    }
    (
        mismatches == 0,
        format!("{mismatches} of 1000 documents differ from the per-token loop"),
    )
}

fn augmentation_invariants() -> Verdict {
    let corpus = fixture_corpus();
    let v = corpus.vocab.len() as u32;
    let lexicon = AugmentationLexicon::load_dir(&fixtures().join("lexicon"), &corpus.vocab).unwrap();
    let identity = AugmentationLexicon::identity(&corpus.vocab);
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in AugmentKind::ALL {
        let mut strategy = AugmentStrategy::new(kind);
        strategy.uninformative_threshold = 30;
        let (mut oov, mut length_changed, mut changed, mut not_identity) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..10_000usize {
            let doc = &corpus.documents[i % corpus.documents.len()];
            let mut r = derive(5, i as u64, doc.doc_id as u64, Purpose::Augment);
            let out = augment(doc, &strategy, &lexicon, &mut r).unwrap();
            oov += out.tokens.iter().filter(|&&t| t >= v).count();
            length_changed += usize::from(out.len() != doc.len());
            changed += usize::from(out.tokens != doc.tokens);
            let same = augment(doc, &strategy, &identity, &mut r).unwrap();
            not_identity += usize::from(same != *doc);
        }
        let preserves = matches!(
            kind,
            AugmentKind::WordNet | AugmentKind::Ppdb | AugmentKind::Uninformative
        );
        ok &= oov == 0 && not_identity == 0 && (!preserves || length_changed == 0) && changed > 0;
        detail.push(format!(
            "{kind}: oov {oov}, length changes {length_changed}, altered {changed}, identity violations {not_identity}"
        ));
    }
    (ok, detail.join("; "))
}

fn mean_cosines(x: &Array2<f64>, labels: &[u32]) -> (f64, f64) {
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = cos(&rows[i], &rows[j]);
            if labels[i] == labels[j] {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    (within / nw as f64, cross / nc as f64)
}

fn synthetic_separation() -> Verdict {
    let corpus = two_topic_corpus(50, 200, 30, 1);
    let config = TrainConfig {
        dim: 50,
        batch_size: 32,
        learning_rate: 1e-2,
        epochs: 20,
        patience: 0,
        deterministic: true,
        ..Default::default()
    };
    let out = train_backbone(&corpus.documents, &corpus.vocab, &config).unwrap();
    let set = corpus_embeddings(&corpus, &out.params().input, Execution::Parallel).unwrap();
    let labels: Vec<u32> = corpus.documents.iter().map(|d| d.label.unwrap()).collect();
    let (within, cross) = mean_cosines(&set.matrix, &labels);
    let error = classify(&corpus, &out.params().input);
    (
        within - cross >= 0.1 && error <= 0.05,
        format!(
            "within {within:.3}, cross {cross:.3}, gap {:.3}, test error {:.2}%",
            within - cross,
            100.0 * error
        ),
    )
}

/// `None` when the criterion could not run.
type Outcome = Option<Verdict>;

type Criterion = fn() -> Verdict;

const R8_CRITERIA: [&str; 2] = ["r8_end_to_end_reproduction", "r8_clustering"];

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    match std::env::var_os("DOCEMBED_R8_DIR").map(PathBuf::from) {
        Some(dir) => {
            let runs = r8_runs(&dir);
            results.push((R8_CRITERIA[0], Some(r8_end_to_end_reproduction(&runs))));
            results.push((R8_CRITERIA[1], Some(r8_clustering(&runs))));
        }
        None => results.extend(R8_CRITERIA.map(|name| (name, None))),
    }
    let local: [(&str, Criterion); 5] = [
        ("lambda_zero_degeneracy", lambda_zero_matches_backbone_only_build),
        ("loss_oracles", loss_oracles),
        ("encoder_identity", encoder_identity),
        ("augmentation_invariants", augmentation_invariants),
        ("synthetic_separation", synthetic_separation),
    ];
    for (name, check) in local {
        results.push((name, Some(check())));
    }

    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Some((true, detail)) => println!("PASS {name}: {detail}"),
            Some((false, detail)) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
            None => println!("FAIL {name}: not run, R8 corpus unavailable (set DOCEMBED_R8_DIR)"),
        }
    }
    let passed = results.iter().filter(|(_, v)| matches!(v, Some((true, _)))).count();
    println!("{passed} of {} criteria passed", results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
