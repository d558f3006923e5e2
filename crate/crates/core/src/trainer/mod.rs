//! Mini-batch training of the backbone and contrastive objectives.
//!
//! Each epoch shuffles the documents and takes one Adam step per batch of
//! `batch_size` documents. A step sums the backbone loss over every window
//! of every document in the batch and, when `lambda > 0`, adds `lambda`
//! times the contrastive loss between each document and one augmented view
//! of it.

pub mod checkpoint;
pub mod config;
pub mod optim;

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::augment::{augment, AugmentStrategy, AugmentationLexicon};
use crate::contrastive::{nt_xent_loss_with, simsiam_loss, ContrastiveConfig, Framework, PairLoss, PredictorGrads};
use crate::corpus::{SparseBow, TokenizedDocument, Vocabulary};
use crate::encoder::{batch_backbone_loss, embed_document, BackboneGrads, ModelParams, Reduction, UnigramNoise};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{self, Purpose};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CheckpointError, Plateau};
pub use config::{Preset, TrainConfig};
pub use optim::{optimizer_step, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub backbone: f64,
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    /// Backbone loss per document, averaged over the epoch.
    pub backbone_loss: f64,
    /// Contrastive loss per document, averaged over the epoch.
    pub contrastive_loss: f64,
    pub steps: Vec<StepLoss>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn params(&self) -> &ModelParams {
        &self.checkpoint.params
    }
}

/// Number of optimizer steps in one epoch over `n` documents.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

struct ContrastiveBranch<'a> {
    lexicon: &'a AugmentationLexicon,
    strategy: AugmentStrategy,
    config: ContrastiveConfig,
}

/// Trains from scratch. `lexicon` is only read when `config.lambda > 0`;
/// with `lambda == 0` no augmentation is generated and the run is the
/// backbone-only run.
pub fn train(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    lexicon: Option<&AugmentationLexicon>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let start = initial_checkpoint(vocab, config);
    resume(start, docs, vocab, lexicon, config)
}

/// Backbone-only training. Never builds a contrastive branch, whatever
/// `config.lambda` and `config.augment` say.
pub fn train_backbone(docs: &[TokenizedDocument], vocab: &Vocabulary, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_documents(docs, vocab)?;
    let start = initial_checkpoint(vocab, config);
    par::with_threads(config.threads, || run(docs, vocab, None, config, start))
}

/// Continues a run from `start` until `config.epochs` epochs are complete.
pub fn resume(
    start: Checkpoint,
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    lexicon: Option<&AugmentationLexicon>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_documents(docs, vocab)?;
    start.check_vocabulary(vocab)?;
    start.check_config(config.hash())?;
    let branch = if config.lambda > 0.0 {
        let lexicon = lexicon.ok_or(Error::MissingLexicon {
            strategy: config.augment.map_or("none", |k| k.as_str()),
        })?;
        let strategy = config
            .augment_strategy()
            .expect("validated: lambda > 0 implies a strategy");
        lexicon.check_available(strategy.kind)?;
        Some(ContrastiveBranch {
            lexicon,
            strategy,
            config: config.contrastive(),
        })
    } else {
        None
    };
    par::with_threads(config.threads, || run(docs, vocab, branch.as_ref(), config, start))
}

pub fn initial_checkpoint(vocab: &Vocabulary, config: &TrainConfig) -> Checkpoint {
    let params = ModelParams::init(vocab.len(), config.dim, config.predictor_hidden, config.seed);
    Checkpoint {
        optimizer: AdamState::for_params(&params),
        params,
        vocab_hash: vocab.content_hash(),
        config_hash: config.hash(),
        epoch: 0,
        seed: config.seed,
        plateau: Plateau::default(),
    }
}

fn check_documents(docs: &[TokenizedDocument], vocab: &Vocabulary) -> Result<()> {
    if docs.is_empty() {
        return Err(Error::InvalidInput("no training documents".into()));
    }
    for d in docs {
        if d.is_empty() {
            return Err(Error::EmptyDocument { doc_id: d.doc_id });
        }
        if let Some(&t) = d.tokens.iter().find(|&&t| t as usize >= vocab.len()) {
            return Err(Error::InvalidInput(format!(
                "document {} has token id {t} outside vocabulary of size {}",
                d.doc_id,
                vocab.len()
            )));
        }
    }
    Ok(())
}

fn run(
    docs: &[TokenizedDocument],
    vocab: &Vocabulary,
    branch: Option<&ContrastiveBranch<'_>>,
    config: &TrainConfig,
    mut state: Checkpoint,
) -> Result<TrainOutcome> {
    let exec = Execution::Parallel;
    let reduction = if config.deterministic {
        Reduction::Ordered
    } else {
        Reduction::Unordered
    };
    let noise = UnigramNoise::new(vocab.freqs())?;
    let backbone = config.backbone();
    let mut history = Vec::new();
    let mut stopped_early = false;

    while (state.epoch as usize) < config.epochs {
        if config.patience > 0 && state.plateau.stale >= config.patience as u64 {
            stopped_early = true;
            break;
        }
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut rng::derive(config.seed, epoch, 0, Purpose::Shuffle));

        let mut steps = Vec::with_capacity(steps_per_epoch(docs.len(), config.batch_size));
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TokenizedDocument> = chunk.iter().map(|&i| &docs[i]).collect();
            let (ld, mut grads) = batch_backbone_loss(
                &batch,
                &state.params,
                &backbone,
                &noise,
                config.seed,
                epoch,
                exec,
                reduction,
            )?;
            let mut lc = 0.0;
            let mut predictor_grads = None;
            if let Some(b) = branch {
                if batch.len() >= 2 {
                    let c = contrastive_step(&batch, b, &mut state.params, config.seed, epoch, exec, &mut grads)?;
                    lc = c.0;
                    predictor_grads = c.1;
                } else {
                    debug!("epoch {epoch} step {step}: single-document batch, contrastive term skipped");
                }
            }
            let total = ld + config.lambda * lc;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch as usize,
                    step,
                    backbone: ld,
                    contrastive: lc,
                });
            }
            optimizer_step(
                &mut state.params,
                &grads,
                predictor_grads.as_ref(),
                &mut state.optimizer,
                config.learning_rate,
            );
            if !state.params.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch as usize,
                    step,
                    backbone: ld,
                    contrastive: lc,
                });
            }
            steps.push(StepLoss {
                backbone: ld,
                contrastive: lc,
                total,
            });
        }

        let n = docs.len() as f64;
        let stats = EpochStats {
            epoch,
            backbone_loss: steps.iter().map(|s| s.backbone).sum::<f64>() / n,
            contrastive_loss: steps.iter().map(|s| s.contrastive).sum::<f64>() / n,
            steps,
        };
        state.plateau.observe(stats.backbone_loss);
        info!(
            "epoch {} backbone {:.6} contrastive {:.6} steps {}",
            epoch + 1,
            stats.backbone_loss,
            stats.contrastive_loss,
            stats.steps.len()
        );
        history.push(stats);
        state.epoch += 1;
    }
    Ok(TrainOutcome {
        checkpoint: state,
        history,
        stopped_early,
    })
}

/// Adds `lambda` times the contrastive gradient into `grads` and returns the
/// unscaled loss with the scaled predictor gradient. Updates batch-norm
/// running statistics for SimSiam.
fn contrastive_step(
    batch: &[&TokenizedDocument],
    branch: &ContrastiveBranch<'_>,
    params: &mut ModelParams,
    seed: u64,
    epoch: u64,
    exec: Execution,
    grads: &mut BackboneGrads,
) -> Result<(f64, Option<PredictorGrads>)> {
    let lambda = branch.config.lambda;
    let views = par::map(exec, batch, |d| {
        let mut r = rng::derive(seed, epoch, d.doc_id as u64, Purpose::Augment);
        augment(d, &branch.strategy, branch.lexicon, &mut r)
    });
    let views: Vec<TokenizedDocument> = views.into_iter().collect::<Result<_>>()?;
    let (orig_bows, h) = embed_batch(batch, &params.input, exec)?;
    let view_refs: Vec<&TokenizedDocument> = views.iter().collect();
    let (view_bows, ht) = embed_batch(&view_refs, &params.input, exec)?;

    let (pair, predictor): (PairLoss, Option<PredictorGrads>) = match branch.config.framework {
        Framework::SimClr => (nt_xent_loss_with(&h, &ht, branch.config.temperature, exec)?, None),
        Framework::SimSiam => {
            let out = simsiam_loss(&h, &ht, &params.predictor, branch.config.simsiam_as_printed)?;
            params.predictor.update_running_stats(&out.caches.0);
            params.predictor.update_running_stats(&out.caches.1);
            let mut pg = out.predictor;
            pg.scale(lambda);
            (out.pair, Some(pg))
        }
    };
    scatter_mean_grad(&orig_bows, &pair.grad_original, lambda, grads);
    scatter_mean_grad(&view_bows, &pair.grad_augmented, lambda, grads);
    Ok((pair.loss, predictor))
}

fn embed_batch(
    batch: &[&TokenizedDocument],
    input: &Array2<f64>,
    exec: Execution,
) -> Result<(Vec<SparseBow>, Array2<f64>)> {
    let rows = par::map(exec, batch, |d| -> Result<(SparseBow, ndarray::Array1<f64>)> {
        let bow = SparseBow::from_tokens(&d.tokens).ok_or(Error::EmptyDocument { doc_id: d.doc_id })?;
        let h = embed_document(&bow, input)?;
        Ok((bow, h))
    });
    let mut bows = Vec::with_capacity(batch.len());
    let mut out = Array2::zeros((batch.len(), input.ncols()));
    for (i, r) in rows.into_iter().enumerate() {
        let (bow, h) = r?;
        out.row_mut(i).assign(&h);
        bows.push(bow);
    }
    Ok((bows, out))
}

/// `∂h/∂U[w] = count(w)/T`: spreads each embedding gradient over the
/// document's words.
fn scatter_mean_grad(bows: &[SparseBow], grad: &Array2<f64>, scale: f64, grads: &mut BackboneGrads) {
    for (bow, g) in bows.iter().zip(grad.rows()) {
        let g = g.as_slice().expect("standard layout");
        let inv = scale / bow.total as f64;
        for (w, c) in bow.iter() {
            grads.input.add_scaled(w, inv * c as f64, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentKind;
    use crate::synthetic::two_topic_corpus;

    fn small_config() -> TrainConfig {
        TrainConfig {
            dim: 8,
            window: 2,
            negatives: 3,
            doc_sample_size: 3,
            batch_size: 16,
            epochs: 2,
            deterministic: true,
            ..Default::default()
        }
    }

    #[test]
    fn step_count_is_ceiling() {
        assert_eq!(steps_per_epoch(10, 4), 3);
        assert_eq!(steps_per_epoch(8, 4), 2);
        assert_eq!(steps_per_epoch(1, 4096), 1);
        let corpus = two_topic_corpus(10, 20, 12, 3);
        let mut c = small_config();
        c.batch_size = 7;
        let out = train(&corpus.documents, &corpus.vocab, None, &c).unwrap();
        assert_eq!(out.history[0].steps.len(), steps_per_epoch(corpus.documents.len(), 7));
        assert_eq!(
            out.checkpoint.optimizer.step as usize,
            2 * steps_per_epoch(corpus.documents.len(), 7)
        );
    }

    #[test]
    fn lambda_needs_lexicon() {
        let corpus = two_topic_corpus(10, 8, 12, 3);
        let mut c = small_config();
        c.lambda = 1.0;
        c.augment = Some(AugmentKind::WordNet);
        assert!(matches!(
            train(&corpus.documents, &corpus.vocab, None, &c),
            Err(Error::MissingLexicon { .. })
        ));
        let lex = AugmentationLexicon::identity(&corpus.vocab);
        let out = train(&corpus.documents, &corpus.vocab, Some(&lex), &c).unwrap();
        assert!(out.history.iter().all(|e| e.contrastive_loss > 0.0));
    }

    #[test]
    fn simsiam_trains_predictor() {
        let corpus = two_topic_corpus(10, 8, 12, 3);
        let mut c = small_config();
        c.lambda = 0.5;
        c.framework = Framework::SimSiam;
        c.augment = Some(AugmentKind::WordNet);
        let lex = AugmentationLexicon::identity(&corpus.vocab);
        let init = initial_checkpoint(&corpus.vocab, &c);
        let out = train(&corpus.documents, &corpus.vocab, Some(&lex), &c).unwrap();
        assert_ne!(out.params().predictor.w1, init.params.predictor.w1);
        assert_ne!(out.params().predictor.running_mean, init.params.predictor.running_mean);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = two_topic_corpus(10, 12, 12, 3);
        let mut c = small_config();
        c.epochs = 4;
        let full = train(&corpus.documents, &corpus.vocab, None, &c).unwrap();
        let mut half = c.clone();
        half.epochs = 2;
        let first = train(&corpus.documents, &corpus.vocab, None, &half).unwrap();
        let bytes = first.checkpoint.to_bytes();
        let restored = Checkpoint::from_bytes(&bytes).unwrap();
        let second = resume(restored, &corpus.documents, &corpus.vocab, None, &c).unwrap();
        assert_eq!(second.checkpoint.to_bytes(), full.checkpoint.to_bytes());
    }

    #[test]
    fn early_stop_on_plateau() {
        let corpus = two_topic_corpus(10, 8, 12, 3);
        let mut c = small_config();
        c.epochs = 50;
        c.patience = 1;
        c.learning_rate = 1e-9;
        let out = train(&corpus.documents, &corpus.vocab, None, &c).unwrap();
        assert!(out.stopped_early);
        assert!(out.history.len() < 50);
    }

    #[test]
    fn rejects_bad_inputs() {
        let corpus = two_topic_corpus(10, 8, 12, 3);
        let c = small_config();
        assert!(train(&[], &corpus.vocab, None, &c).is_err());
        let bad = vec![TokenizedDocument::new(0, vec![9999])];
        assert!(train(&bad, &corpus.vocab, None, &c).is_err());
        let mut c2 = c.clone();
        c2.dim = 0;
        assert!(matches!(
            train(&corpus.documents, &corpus.vocab, None, &c2),
            Err(Error::Config(_))
        ));
    }
}
