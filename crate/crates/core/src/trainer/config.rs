//! Training hyperparameters, named presets and the flat `key = value` file
//! format.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::augment::{AugmentKind, AugmentStrategy, DEFAULT_ANTONYM_P, DEFAULT_UNINFORMATIVE_THRESHOLD};
use crate::contrastive::{ContrastiveConfig, Framework, DEFAULT_PREDICTOR_HIDDEN, DEFAULT_TEMPERATURE};
use crate::encoder::BackboneConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub doc_sample_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without relative improvement of the epoch-mean backbone loss
    /// before stopping. 0 disables early stopping.
    pub patience: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub tau: f64,
    pub framework: Framework,
    pub predictor_hidden: usize,
    pub simsiam_as_printed: bool,
    pub augment: Option<AugmentKind>,
    pub antonym_p: f64,
    pub uninformative_threshold: u64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
    pub deterministic: bool,
}

/// Relative improvement below which an epoch counts as a plateau.
pub const PLATEAU_TOLERANCE: f64 = 1e-4;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 10,
            negatives: 5,
            doc_sample_size: 5,
            batch_size: 4096,
            learning_rate: 1e-3,
            epochs: 20,
            patience: 3,
            dropout: 0.3,
            lambda: 0.0,
            tau: DEFAULT_TEMPERATURE,
            framework: Framework::SimClr,
            predictor_hidden: DEFAULT_PREDICTOR_HIDDEN,
            simsiam_as_printed: false,
            augment: None,
            antonym_p: DEFAULT_ANTONYM_P,
            uninformative_threshold: DEFAULT_UNINFORMATIVE_THRESHOLD,
            seed: 1,
            threads: 0,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    R8,
    R52,
    Mr,
    Ohsumed,
    TwentyNews,
    Imdb,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::R8,
        Preset::R52,
        Preset::Mr,
        Preset::Ohsumed,
        Preset::TwentyNews,
        Preset::Imdb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::R8 => "r8",
            Preset::R52 => "r52",
            Preset::Mr => "mr",
            Preset::Ohsumed => "ohsumed",
            Preset::TwentyNews => "20news",
            Preset::Imdb => "imdb",
        }
    }

    /// `(window, negatives, strategy, doc_sample_size)`.
    pub fn values(self) -> (usize, usize, AugmentKind, usize) {
        match self {
            Preset::R8 => (6, 5, AugmentKind::Antonym, 5),
            Preset::R52 => (10, 5, AugmentKind::Antonym, 10),
            Preset::Mr => (10, 5, AugmentKind::WordNet, 5),
            Preset::Ohsumed => (10, 7, AugmentKind::WordNet, 7),
            Preset::TwentyNews => (8, 5, AugmentKind::WordNet, 5),
            Preset::Imdb => (4, 5, AugmentKind::Ppdb, 15),
        }
    }

    pub fn apply(self, config: &mut TrainConfig) {
        let (window, negatives, aug, sample) = self.values();
        config.window = window;
        config.negatives = negatives;
        config.augment = Some(aug);
        config.doc_sample_size = sample;
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Keys accepted by [`TrainConfig::set`], in serialization order.
pub const KEYS: [&str; 20] = [
    "dim",
    "window",
    "negatives",
    "doc_sample",
    "batch",
    "lr",
    "epochs",
    "patience",
    "dropout",
    "lambda",
    "tau",
    "framework",
    "predictor_hidden",
    "simsiam_as_printed",
    "aug",
    "antonym_p",
    "uninformative_threshold",
    "seed",
    "threads",
    "deterministic",
];

/// Keys that do not change the trajectory of a run up to its epoch budget.
const UNHASHED: [&str; 3] = ["epochs", "patience", "threads"];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dim" => self.dim = parse_num(key, v)?,
            "window" => self.window = parse_num(key, v)?,
            "negatives" => self.negatives = parse_num(key, v)?,
            "doc_sample" => self.doc_sample_size = parse_num(key, v)?,
            "batch" => self.batch_size = parse_num(key, v)?,
            "lr" => self.learning_rate = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "framework" => self.framework = v.parse()?,
            "predictor_hidden" => self.predictor_hidden = parse_num(key, v)?,
            "simsiam_as_printed" => self.simsiam_as_printed = parse_bool(key, v)?,
            "aug" => self.augment = if v == "none" { None } else { Some(v.parse()?) },
            "antonym_p" => self.antonym_p = parse_num(key, v)?,
            "uninformative_threshold" => self.uninformative_threshold = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "preset" => v.parse::<Preset>()?.apply(self),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.dim.to_string(),
            self.window.to_string(),
            self.negatives.to_string(),
            self.doc_sample_size.to_string(),
            self.batch_size.to_string(),
            self.learning_rate.to_string(),
            self.epochs.to_string(),
            self.patience.to_string(),
            self.dropout.to_string(),
            self.lambda.to_string(),
            self.tau.to_string(),
            self.framework.as_str().to_string(),
            self.predictor_hidden.to_string(),
            self.simsiam_as_printed.to_string(),
            self.augment.map_or("none", |k| k.as_str()).to_string(),
            self.antonym_p.to_string(),
            self.uninformative_threshold.to_string(),
            self.seed.to_string(),
            self.threads.to_string(),
            self.deterministic.to_string(),
        ];
        KEYS.into_iter().zip(values).collect()
    }

    /// `key = value` lines that [`TrainConfig::from_kv_str`] reads back.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (key, value, _) in parse_kv(text)? {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    /// Hash of every setting that affects the trained parameters.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if UNHASHED.contains(&k) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("window", self.window),
            ("negatives", self.negatives),
            ("doc_sample", self.doc_sample_size),
            ("batch", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        self.contrastive().validate()?;
        if let Some(s) = self.augment_strategy() {
            s.validate()?;
        }
        if self.lambda > 0.0 && self.augment.is_none() {
            return Err(Error::ConfigConflict(
                "lambda > 0 needs an augmentation strategy (aug = none)".into(),
            ));
        }
        if self.simsiam_as_printed && self.framework != Framework::SimSiam {
            return Err(Error::ConfigConflict(
                "simsiam_as_printed set with framework simclr".into(),
            ));
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            window: self.window,
            negatives: self.negatives,
            doc_sample_size: self.doc_sample_size,
            dropout: self.dropout,
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            framework: self.framework,
            temperature: self.tau,
            lambda: self.lambda,
            predictor_hidden: self.predictor_hidden,
            simsiam_as_printed: self.simsiam_as_printed,
        }
    }

    pub fn augment_strategy(&self) -> Option<AugmentStrategy> {
        self.augment.map(|kind| AugmentStrategy {
            kind,
            antonym_p: self.antonym_p,
            uninformative_threshold: self.uninformative_threshold,
        })
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored. Returns `(key, value, line)` in file order. A key given twice
/// is a conflict.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim().replace('-', "_");
        if let Some(prev) = out.iter().find(|(pk, _, _)| *pk == k) {
            return Err(Error::ConfigConflict(format!(
                "`{k}` set on lines {} and {}",
                prev.2,
                i + 1
            )));
        }
        out.push((k, v.trim().to_string(), i + 1));
    }
    Ok(out)
}
