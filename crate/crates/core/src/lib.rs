//! Unsupervised document embeddings.
//!
//! A document is embedded as the mean of its word embeddings. The word
//! embeddings are trained with a CBOW-plus-document negative-sampling
//! objective and, optionally, a contrastive loss that pulls each document
//! towards an augmented copy of itself.
//!
//! ```no_run
//! use docembed::{corpus, trainer, encoder, par::Execution};
//! # fn main() -> docembed::Result<()> {
//! let opts = corpus::CorpusOptions::default();
//! let c = corpus::load_labeled_corpus("train.txt".as_ref(), None, &opts)?;
//! let config = trainer::TrainConfig::default();
//! let run = trainer::train(&c.documents, &c.vocab, None, &config)?;
//! let h = encoder::embed_documents(&c.documents, &run.params().input, Execution::Parallel)?;
//! # let _ = h; Ok(()) }
//! ```

pub mod augment;
mod binio;
pub mod contrastive;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod par;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
