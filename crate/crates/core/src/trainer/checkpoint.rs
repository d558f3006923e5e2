//! Versioned binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "DOCEMBCK" | version u32 | d u64 | v u64 | hidden u64 | vocab hash u64
//! U: v×d f64 | V: v×d f64
//! predictor: activation u32 | w1 d×h | b1 h | gamma h | beta h
//!            | running mean h | running var h | w2 h×d | b2 d
//! config hash u64 | completed epochs u64 | seed u64
//! best epoch loss f64 | stale epochs u64
//! adam step u64 | U m,v | V m,v | predictor m,v (w1 b1 gamma beta w2 b2)
//! checksum u64 (first 8 bytes of SHA-256 over everything before it)
//! ```
//!
//! Every random draw of a run derives from `(seed, epoch, doc_id, purpose)`,
//! so the seed and the epoch counter are the complete generator state.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::binio::{checksum, Reader, Writer};
use crate::contrastive::{Activation, PredictorGrads, PredictorWeights};
use crate::corpus::Vocabulary;
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::trainer::config::PLATEAU_TOLERANCE;
use crate::trainer::optim::AdamState;

pub const MAGIC: &[u8; 8] = b"DOCEMBCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint: {len} bytes, needed at least {needed}")]
    Truncated { needed: usize, len: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("vocabulary hash mismatch: checkpoint {checkpoint:#018x}, corpus {corpus:#018x}")]
    VocabularyMismatch { checkpoint: u64, corpus: u64 },
    #[error("config hash mismatch: checkpoint {checkpoint:#018x}, run {run:#018x}")]
    ConfigMismatch { checkpoint: u64, run: u64 },
}

/// Early-stopping bookkeeping carried across epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub best: f64,
    pub stale: u64,
}

impl Plateau {
    /// Records an epoch loss; it counts as progress when it beats the best
    /// so far by the relative plateau tolerance.
    pub fn observe(&mut self, loss: f64) {
        let improved = !self.best.is_finite() || loss < self.best - PLATEAU_TOLERANCE * self.best.abs();
        if improved {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
    }
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub vocab_hash: u64,
    pub config_hash: u64,
    pub epoch: u64,
    pub seed: u64,
    pub plateau: Plateau,
}

impl Checkpoint {
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let corpus = vocab.content_hash();
        if corpus != self.vocab_hash {
            return Err(CheckpointError::VocabularyMismatch {
                checkpoint: self.vocab_hash,
                corpus,
            }
            .into());
        }
        Ok(())
    }

    pub fn check_config(&self, config_hash: u64) -> Result<()> {
        if config_hash != self.config_hash {
            return Err(CheckpointError::ConfigMismatch {
                checkpoint: self.config_hash,
                run: config_hash,
            }
            .into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let (v, d, h) = (p.vocab_size(), p.dim(), p.predictor.hidden());
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(d as u64);
        w.u64(v as u64);
        w.u64(h as u64);
        w.u64(self.vocab_hash);
        w.f64s(p.input.iter());
        w.f64s(p.output.iter());
        let pr = &p.predictor;
        w.u32(match pr.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        w.f64s(pr.w1.iter());
        w.f64s(pr.b1.iter());
        w.f64s(pr.gamma.iter());
        w.f64s(pr.beta.iter());
        w.f64s(pr.running_mean.iter());
        w.f64s(pr.running_var.iter());
        w.f64s(pr.w2.iter());
        w.f64s(pr.b2.iter());
        w.u64(self.config_hash);
        w.u64(self.epoch);
        w.u64(self.seed);
        w.f64(self.plateau.best);
        w.u64(self.plateau.stale);
        let o = &self.optimizer;
        w.u64(o.step);
        for m in [&o.input_m, &o.input_v, &o.output_m, &o.output_v] {
            w.f64s(m.iter());
        }
        for g in [&o.predictor_m, &o.predictor_v] {
            write_grads(&mut w, g);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let len = bytes.len();
        let trunc = |needed: usize| CheckpointError::Truncated { needed, len };
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len()).map_err(trunc)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32().map_err(trunc)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let d = r.u64().map_err(trunc)? as usize;
        let v = r.u64().map_err(trunc)? as usize;
        let h = r.u64().map_err(trunc)? as usize;
        let vocab_hash = r.u64().map_err(trunc)?;
        let input = r.array2(v, d).map_err(trunc)?;
        let output = r.array2(v, d).map_err(trunc)?;
        let activation = match r.u32().map_err(trunc)? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => return Err(CheckpointError::Corrupt(format!("unknown activation code {other}"))),
        };
        let predictor = PredictorWeights {
            w1: r.array2(d, h).map_err(trunc)?,
            b1: r.array1(h).map_err(trunc)?,
            gamma: r.array1(h).map_err(trunc)?,
            beta: r.array1(h).map_err(trunc)?,
            running_mean: r.array1(h).map_err(trunc)?,
            running_var: r.array1(h).map_err(trunc)?,
            w2: r.array2(h, d).map_err(trunc)?,
            b2: r.array1(d).map_err(trunc)?,
            activation,
        };
        let config_hash = r.u64().map_err(trunc)?;
        let epoch = r.u64().map_err(trunc)?;
        let seed = r.u64().map_err(trunc)?;
        let plateau = Plateau {
            best: r.f64().map_err(trunc)?,
            stale: r.u64().map_err(trunc)?,
        };
        let step = r.u64().map_err(trunc)?;
        let input_m = r.array2(v, d).map_err(trunc)?;
        let input_v = r.array2(v, d).map_err(trunc)?;
        let output_m = r.array2(v, d).map_err(trunc)?;
        let output_v = r.array2(v, d).map_err(trunc)?;
        let predictor_m = read_grads(&mut r, d, h).map_err(trunc)?;
        let predictor_v = read_grads(&mut r, d, h).map_err(trunc)?;
        let body_end = r.position();
        let stored = r.u64().map_err(trunc)?;
        if r.remaining() > 0 {
            return Err(CheckpointError::TrailingBytes(r.remaining()));
        }
        let computed = checksum(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        Ok(Self {
            params: ModelParams {
                input,
                output,
                predictor,
            },
            optimizer: AdamState {
                step,
                input_m,
                input_v,
                output_m,
                output_v,
                predictor_m,
                predictor_v,
            },
            vocab_hash,
            config_hash,
            epoch,
            seed,
            plateau,
        })
    }
}

fn write_grads(w: &mut Writer, g: &PredictorGrads) {
    w.f64s(g.w1.iter());
    w.f64s(g.b1.iter());
    w.f64s(g.gamma.iter());
    w.f64s(g.beta.iter());
    w.f64s(g.w2.iter());
    w.f64s(g.b2.iter());
}

fn read_grads(r: &mut Reader<'_>, d: usize, h: usize) -> std::result::Result<PredictorGrads, usize> {
    Ok(PredictorGrads {
        w1: r.array2(d, h)?,
        b1: r.array1(h)?,
        gamma: r.array1(h)?,
        beta: r.array1(h)?,
        w2: r.array2(h, d)?,
        b2: r.array1(d)?,
    })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Loads and checks the vocabulary hash against `vocab`.
pub fn load_checkpoint_for(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    let c = load_checkpoint(path)?;
    c.check_vocabulary(vocab)?;
    Ok(c)
}
