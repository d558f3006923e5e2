use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docembed::augment::{augment, AugmentKind, AugmentationLexicon};
use docembed::corpus::{Corpus, CorpusOptions, Split, Vocabulary, DEFAULT_MIN_COUNT};
use docembed::eval::{
    evaluate_classification, evaluate_clustering, export_embeddings, import_embeddings, read_labels, read_splits,
    write_annotations, EmbeddingSet, EvalReport, ExportFormat, LogRegOptions, DEFAULT_RESTARTS,
};
use docembed::par::{self, Execution};
use docembed::rng::{derive, Purpose};
use docembed::trainer::config::parse_kv;
use docembed::trainer::{load_checkpoint_for, resume, save_checkpoint, train, TrainConfig};
use docembed::{encoder::embed_documents, Error, Result};
use log::info;

/// Unsupervised document embeddings trained with a contrastive objective
/// over augmented documents.
#[derive(Debug, Parser)]
#[command(name = "docembed", version)]
struct Cli {
    /// Flat `key = value` settings file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print only results and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count words in a corpus and write the vocabulary file.
    BuildVocab {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Output `word<TAB>frequency` file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Print sampled augmentations of one document.
    AugmentPreview {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "DIR")]
        lexicon_dir: PathBuf,
        #[arg(long)]
        doc_id: usize,
        #[arg(long, value_parser = AUG_VALUES)]
        aug: String,
        /// Number of augmentations to print.
        #[arg(short = 'n', long = "count", default_value_t = 3)]
        n: usize,
        /// Per-token replacement probability of the antonym strategy.
        #[arg(long)]
        antonym_p: Option<f64>,
        /// Frequency below which the uninformative strategy replaces a word.
        #[arg(long)]
        uninformative_threshold: Option<u64>,
    },
    /// Train embeddings and write a checkpoint plus its vocabulary.
    Train(Box<TrainArgs>),
    /// Embed documents with a trained checkpoint.
    Embed {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Embedding file to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value = "text", value_parser = ["text", "binary"])]
        format: String,
        /// Also write `doc_id<TAB>label` lines for the labeled documents.
        #[arg(long, value_name = "FILE")]
        labels_out: Option<PathBuf>,
        /// Also write `doc_id<TAB>train|test` lines.
        #[arg(long, value_name = "FILE")]
        split_out: Option<PathBuf>,
    },
    /// Logistic-regression test error on frozen embeddings.
    EvalClassify {
        #[arg(long, value_name = "FILE")]
        embeddings: PathBuf,
        /// `doc_id<TAB>label` lines.
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        /// `doc_id<TAB>train|test` lines.
        #[arg(long, value_name = "FILE")]
        split: PathBuf,
        /// Inverse L2 regularization strength (larger means weaker).
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Skip standardizing features with the training mean and deviation.
        #[arg(long)]
        no_standardize: bool,
    },
    /// k-means NMI of frozen embeddings against labels.
    EvalCluster {
        #[arg(long, value_name = "FILE")]
        embeddings: PathBuf,
        /// `doc_id<TAB>label` lines.
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        #[arg(long)]
        k: usize,
        /// Seeded k-means++ restarts; the lowest inertia wins.
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
    },
}

const AUG_VALUES: [&str; 6] = ["wordnet", "ppdb", "antonym", "uninformative", "backtranslation", "none"];

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Training documents, one `label<TAB>text` line each.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Test documents in the same format; their ids follow the training ids.
    #[arg(long, value_name = "FILE")]
    test_corpus: Option<PathBuf>,
    /// Existing vocabulary file instead of counting the corpus.
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Minimum frequency for a word to enter the vocabulary.
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
    /// Drop documents left empty by vocabulary filtering instead of failing.
    #[arg(long)]
    skip_empty: bool,
}

impl CorpusArgs {
    fn load(&self, vocab: Option<Vocabulary>) -> Result<Corpus> {
        let vocab = match (vocab, &self.vocab) {
            (Some(v), _) => Some(v),
            (None, Some(p)) => Some(Vocabulary::load(p)?),
            (None, None) => None,
        };
        let opts = CorpusOptions {
            min_count: self.min_count,
            skip_empty: self.skip_empty,
            ..Default::default()
        };
        let mut files: Vec<(&Path, Split)> = vec![(&self.corpus, Split::Train)];
        if let Some(t) = &self.test_corpus {
            files.push((t, Split::Test));
        }
        Corpus::from_files(&files, vocab, &opts)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Per-dataset window, negatives, strategy and document sample size.
    #[arg(long, value_parser = ["r8", "r52", "mr", "ohsumed", "20news", "imdb"])]
    preset: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Context words on each side of the target.
    #[arg(long)]
    window: Option<usize>,
    /// Negative samples per target word.
    #[arg(long)]
    negatives: Option<usize>,
    /// Words sampled from the document for its global context.
    #[arg(long)]
    doc_sample: Option<usize>,
    /// Documents per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without improvement before stopping (0 never stops early).
    #[arg(long)]
    patience: Option<usize>,
    /// Dropout rate on the backbone's hidden vectors.
    #[arg(long)]
    dropout: Option<f64>,
    /// Weight of the contrastive loss (0 trains the backbone alone).
    #[arg(long)]
    lambda: Option<f64>,
    /// NT-Xent temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = ["simclr", "simsiam"])]
    framework: Option<String>,
    /// Hidden width of the SimSiam predictor.
    #[arg(long)]
    predictor_hidden: Option<usize>,
    /// SimSiam with the stop-gradient on both predictor outputs.
    #[arg(long)]
    simsiam_as_printed: bool,
    /// Augmentation strategy for the contrastive view.
    #[arg(long, value_parser = AUG_VALUES)]
    aug: Option<String>,
    /// Per-token replacement probability of the antonym strategy.
    #[arg(long)]
    antonym_p: Option<f64>,
    /// Frequency below which the uninformative strategy replaces a word.
    #[arg(long)]
    uninformative_threshold: Option<u64>,
    /// Directory holding wordnet.tsv, ppdb.tsv, antonym.tsv, paraphrase.tsv.
    #[arg(long, value_name = "DIR")]
    lexicon_dir: Option<PathBuf>,
    /// Results independent of the thread count.
    #[arg(long)]
    deterministic: bool,
    /// Continue from this checkpoint.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    #[arg(long, value_name = "FILE", default_value = "docembed.ckpt")]
    checkpoint_out: PathBuf,
    /// Vocabulary file to write; defaults to the checkpoint path with a
    /// `.vocab` extension.
    #[arg(long, value_name = "FILE")]
    vocab_out: Option<PathBuf>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("dim", self.dim.map(|v| v.to_string()));
        put("window", self.window.map(|v| v.to_string()));
        put("negatives", self.negatives.map(|v| v.to_string()));
        put("doc_sample", self.doc_sample.map(|v| v.to_string()));
        put("batch", self.batch.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("patience", self.patience.map(|v| v.to_string()));
        put("dropout", self.dropout.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("tau", self.tau.map(|v| v.to_string()));
        put("framework", self.framework.clone());
        put("predictor_hidden", self.predictor_hidden.map(|v| v.to_string()));
        put("simsiam_as_printed", self.simsiam_as_printed.then(|| "true".into()));
        put("aug", self.aug.clone());
        put("antonym_p", self.antonym_p.map(|v| v.to_string()));
        put(
            "uninformative_threshold",
            self.uninformative_threshold.map(|v| v.to_string()),
        );
        put("deterministic", self.deterministic.then(|| "true".into()));
        out
    }
}

/// Defaults, then the preset (flag over file), then file keys, then flags.
fn resolve_config(cli: &Cli, preset: Option<&str>, flags: &[(&'static str, String)]) -> Result<TrainConfig> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            parse_kv(&text)?
        }
        None => Vec::new(),
    };
    let mut config = TrainConfig::default();
    let file_preset = file.iter().find(|(k, _, _)| k == "preset").map(|(_, v, _)| v.as_str());
    if let Some(p) = preset.or(file_preset) {
        config.set("preset", p)?;
    }
    for (k, v, _) in file.iter().filter(|(k, _, _)| k != "preset") {
        config.set(k, v)?;
    }
    for (k, v) in flags {
        config.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    Ok(config)
}

fn echo_config(cli: &Cli, config: &TrainConfig) {
    if !cli.quiet {
        eprintln!("# resolved configuration");
        eprint!("{}", config.to_kv_string());
    }
}

fn exec_for(config: &TrainConfig) -> Execution {
    if config.threads == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn emit(report: &EvalReport) -> Result<()> {
    let line = serde_json::to_string(report).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{line}").map_err(stdout_error)
}

fn stdout_error(e: io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn annotated_set(embeddings: &Path, labels: &Path, split: Option<&Path>) -> Result<EmbeddingSet> {
    let (ids, matrix) = import_embeddings(embeddings)?;
    let (labels, _) = read_labels(labels)?;
    let splits = split.map(read_splits).transpose()?;
    EmbeddingSet::new(ids, matrix)?.with_annotations(&labels, splits.as_ref())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildVocab { corpus, out } => {
            let config = resolve_config(cli, None, &[])?;
            echo_config(cli, &config);
            let c = corpus.load(None)?;
            c.vocab.save(out)?;
            info!(
                "{} words from {} documents written to {}",
                c.vocab.len(),
                c.documents.len(),
                out.display()
            );
            Ok(())
        }
        Command::AugmentPreview {
            corpus,
            lexicon_dir,
            doc_id,
            aug,
            n,
            antonym_p,
            uninformative_threshold,
        } => {
            let mut flags = vec![("aug", aug.clone())];
            if let Some(p) = antonym_p {
                flags.push(("antonym_p", p.to_string()));
            }
            if let Some(t) = uninformative_threshold {
                flags.push(("uninformative_threshold", t.to_string()));
            }
            let config = resolve_config(cli, None, &flags)?;
            echo_config(cli, &config);
            let c = corpus.load(None)?;
            let doc = c
                .documents
                .iter()
                .find(|d| d.doc_id == *doc_id)
                .ok_or_else(|| Error::InvalidInput(format!("no document with id {doc_id}")))?;
            let lexicon = AugmentationLexicon::load_dir(lexicon_dir, &c.vocab)?;
            let mut out = io::stdout().lock();
            let print = |out: &mut io::StdoutLock, tag: &str, tokens: &[u32]| {
                writeln!(out, "{tag}\t{}", c.vocab.decode(tokens).join(" ")).map_err(stdout_error)
            };
            print(&mut out, "original", &doc.tokens)?;
            for i in 0..*n {
                let view = match config.augment_strategy() {
                    Some(strategy) => {
                        let mut r = derive(config.seed, i as u64, *doc_id as u64, Purpose::Preview);
                        augment(doc, &strategy, &lexicon, &mut r)?
                    }
                    None => doc.clone(),
                };
                print(&mut out, &(i + 1).to_string(), &view.tokens)?;
            }
            Ok(())
        }
        Command::Train(args) => {
            let config = resolve_config(cli, args.preset.as_deref(), &args.overrides())?;
            config.validate()?;
            echo_config(cli, &config);
            let c = args.corpus.load(None)?;
            let lexicon = args
                .lexicon_dir
                .as_deref()
                .map(|d| AugmentationLexicon::load_dir(d, &c.vocab))
                .transpose()?;
            if config.lambda > 0.0 && lexicon.is_none() {
                return Err(Error::MissingLexicon {
                    strategy: config.augment.map_or("none", AugmentKind::as_str),
                });
            }
            info!(
                "{} documents ({} train, {} test), {} words",
                c.documents.len(),
                c.count_split(Split::Train),
                c.count_split(Split::Test),
                c.vocab.len()
            );
            let outcome = match &args.resume {
                Some(p) => resume(
                    load_checkpoint_for(p, &c.vocab)?,
                    &c.documents,
                    &c.vocab,
                    lexicon.as_ref(),
                    &config,
                )?,
                None => train(&c.documents, &c.vocab, lexicon.as_ref(), &config)?,
            };
            save_checkpoint(&args.checkpoint_out, &outcome.checkpoint)?;
            let vocab_out = args
                .vocab_out
                .clone()
                .unwrap_or_else(|| args.checkpoint_out.with_extension("vocab"));
            c.vocab.save(&vocab_out)?;
            if outcome.stopped_early {
                info!("stopped early after epoch {}", outcome.checkpoint.epoch);
            }
            info!(
                "checkpoint {} and vocabulary {} written",
                args.checkpoint_out.display(),
                vocab_out.display()
            );
            Ok(())
        }
        Command::Embed {
            corpus,
            checkpoint,
            out,
            format,
            labels_out,
            split_out,
        } => {
            let config = resolve_config(cli, None, &[])?;
            echo_config(cli, &config);
            let vocab_path = corpus
                .vocab
                .clone()
                .unwrap_or_else(|| checkpoint.with_extension("vocab"));
            let c = corpus.load(Some(Vocabulary::load(&vocab_path)?))?;
            let ckpt = load_checkpoint_for(checkpoint, &c.vocab)?;
            let matrix = par::with_threads(config.threads, || {
                embed_documents(&c.documents, &ckpt.params.input, exec_for(&config))
            })?;
            let ids: Vec<usize> = c.documents.iter().map(|d| d.doc_id).collect();
            export_embeddings(&ids, &matrix, out, format.parse::<ExportFormat>()?)?;
            write_annotations(&c, labels_out.as_deref(), split_out.as_deref())?;
            info!(
                "{} embeddings of dimension {} written to {}",
                ids.len(),
                matrix.ncols(),
                out.display()
            );
            Ok(())
        }
        Command::EvalClassify {
            embeddings,
            labels,
            split,
            c,
            no_standardize,
        } => {
            let config = resolve_config(cli, None, &[])?;
            echo_config(cli, &config);
            let set = annotated_set(embeddings, labels, Some(split))?;
            let opts = LogRegOptions {
                c: *c,
                standardize: !no_standardize,
                ..Default::default()
            };
            emit(&evaluate_classification(&set, &opts)?)
        }
        Command::EvalCluster {
            embeddings,
            labels,
            k,
            restarts,
        } => {
            let config = resolve_config(cli, None, &[])?;
            echo_config(cli, &config);
            let set = annotated_set(embeddings, labels, None)?;
            let report = par::with_threads(config.threads, || {
                evaluate_clustering(&set, *k, config.seed, *restarts, exec_for(&config))
            })?;
            emit(&report)
        }
    }
}

/// Usage errors 2, missing files 3, conflicting settings 4, anything else 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 3,
        Error::ConfigConflict(_) => 4,
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => "missing-file",
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        Error::ConfigConflict(_) => "config-conflict",
        Error::Config(_) => "config",
        Error::MissingLexicon { .. } => "missing-lexicon",
        Error::Checkpoint(_) => "checkpoint",
        _ => "input",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", kind(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
