//! Stochastic document augmentation: synonym replacement (WordNet or PPDB
//! candidate tables), negated-antonym replacement, uninformative-word
//! replacement and precomputed back-translation.
//!
//! Every augmented token is an in-vocabulary id: out-of-vocabulary candidates
//! are filtered when the lexicon is loaded, never at augmentation time.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::corpus::{tokenize, TokenizedDocument, TokenizerConfig, Vocabulary, WordId};
use crate::error::{Error, Result};

pub const DEFAULT_ANTONYM_P: f64 = 0.15;
pub const DEFAULT_UNINFORMATIVE_THRESHOLD: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentKind {
    WordNet,
    Ppdb,
    Antonym,
    Uninformative,
    BackTranslation,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 5] = [
        AugmentKind::WordNet,
        AugmentKind::Ppdb,
        AugmentKind::Antonym,
        AugmentKind::Uninformative,
        AugmentKind::BackTranslation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentKind::WordNet => "wordnet",
            AugmentKind::Ppdb => "ppdb",
            AugmentKind::Antonym => "antonym",
            AugmentKind::Uninformative => "uninformative",
            AugmentKind::BackTranslation => "backtranslation",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentStrategy {
    pub kind: AugmentKind,
    /// Per-token replacement probability for [`AugmentKind::Antonym`].
    pub antonym_p: f64,
    /// Words with frequency below this are replaced by [`AugmentKind::Uninformative`].
    pub uninformative_threshold: u64,
}

impl AugmentStrategy {
    pub fn new(kind: AugmentKind) -> Self {
        Self {
            kind,
            antonym_p: DEFAULT_ANTONYM_P,
            uninformative_threshold: DEFAULT_UNINFORMATIVE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.antonym_p) {
            return Err(Error::Config(format!(
                "antonym probability {} outside [0, 1]",
                self.antonym_p
            )));
        }
        if self.uninformative_threshold < 1 {
            return Err(Error::Config("uninformative threshold must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-word synonym candidates. Every list starts with the word itself;
/// words without an entry have the singleton candidate set `{word}`.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    loaded: bool,
    candidates: HashMap<WordId, Vec<WordId>>,
}

impl SynonymTable {
    /// A loaded table in which every word is its only candidate.
    pub fn identity() -> Self {
        Self {
            loaded: true,
            candidates: HashMap::new(),
        }
    }

    pub fn from_map(map: HashMap<WordId, Vec<WordId>>) -> Self {
        let candidates = map.into_iter().map(|(w, cands)| (w, with_self(w, cands))).collect();
        Self {
            loaded: true,
            candidates,
        }
    }

    pub fn is_loaded(&self) -> bool {
        self.loaded
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Candidate set of `word`, including `word`.
    pub fn candidates(&self, word: WordId) -> std::borrow::Cow<'_, [WordId]> {
        match self.candidates.get(&word) {
            Some(c) => std::borrow::Cow::Borrowed(c.as_slice()),
            None => std::borrow::Cow::Owned(vec![word]),
        }
    }

    fn load(path: &Path, vocab: &Vocabulary, rules: &TokenizerConfig) -> Result<Self> {
        let mut map = HashMap::new();
        for_each_tsv_line(path, |_, key, value| {
            let Some(word) = single_id(key, vocab, rules) else {
                return Ok(());
            };
            let mut cands = Vec::new();
            for cand in value.split(',') {
                let cand = cand.trim();
                if cand.is_empty() {
                    continue;
                }
                if let Some(id) = single_id(cand, vocab, rules) {
                    cands.push(id);
                }
            }
            map.insert(word, cands);
            Ok(())
        })?;
        Ok(Self::from_map(map))
    }
}

fn with_self(word: WordId, cands: Vec<WordId>) -> Vec<WordId> {
    let mut out = Vec::with_capacity(cands.len() + 1);
    out.push(word);
    for c in cands {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// A lexicon entry key must tokenize to exactly one in-vocabulary word.
fn single_id(raw: &str, vocab: &Vocabulary, rules: &TokenizerConfig) -> Option<WordId> {
    let toks = tokenize(raw, rules);
    match toks.as_slice() {
        [w] => vocab.id_of(w),
        _ => None,
    }
}

fn for_each_tsv_line<F>(path: &Path, mut f: F) -> Result<()>
where
    F: FnMut(usize, &str, &str) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `key<TAB>value`"))?;
        f(i + 1, key.trim(), value.trim())?;
    }
    Ok(())
}

/// File locations of the augmentation tables. Absent paths leave the
/// corresponding table unloaded.
#[derive(Debug, Clone, Default)]
pub struct LexiconPaths {
    pub wordnet: Option<PathBuf>,
    pub ppdb: Option<PathBuf>,
    pub antonym: Option<PathBuf>,
    pub paraphrase: Option<PathBuf>,
}

impl LexiconPaths {
    pub const WORDNET_FILE: &'static str = "wordnet.tsv";
    pub const PPDB_FILE: &'static str = "ppdb.tsv";
    pub const ANTONYM_FILE: &'static str = "antonym.tsv";
    pub const PARAPHRASE_FILE: &'static str = "paraphrase.tsv";

    /// Picks up whichever of the standard file names exist in `dir`.
    pub fn from_dir(dir: &Path) -> Self {
        let pick = |name: &str| {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        Self {
            wordnet: pick(Self::WORDNET_FILE),
            ppdb: pick(Self::PPDB_FILE),
            antonym: pick(Self::ANTONYM_FILE),
            paraphrase: pick(Self::PARAPHRASE_FILE),
        }
    }
}

#[derive(Debug, Default)]
pub struct AugmentationLexicon {
    pub wordnet: SynonymTable,
    pub ppdb: SynonymTable,
    antonyms_loaded: bool,
    pub antonyms: HashMap<WordId, Vec<WordId>>,
    paraphrases_loaded: bool,
    pub paraphrases: HashMap<usize, Vec<WordId>>,
    pub freq: Vec<u64>,
    missing_paraphrases: AtomicUsize,
}

impl Clone for AugmentationLexicon {
    fn clone(&self) -> Self {
        Self {
            wordnet: self.wordnet.clone(),
            ppdb: self.ppdb.clone(),
            antonyms_loaded: self.antonyms_loaded,
            antonyms: self.antonyms.clone(),
            paraphrases_loaded: self.paraphrases_loaded,
            paraphrases: self.paraphrases.clone(),
            freq: self.freq.clone(),
            missing_paraphrases: AtomicUsize::new(self.missing_paraphrases.load(Ordering::Relaxed)),
        }
    }
}

impl AugmentationLexicon {
    /// Every table loaded and empty: all strategies are the identity.
    pub fn identity(vocab: &Vocabulary) -> Self {
        Self {
            wordnet: SynonymTable::identity(),
            ppdb: SynonymTable::identity(),
            antonyms_loaded: true,
            antonyms: HashMap::new(),
            paraphrases_loaded: true,
            paraphrases: HashMap::new(),
            freq: vocab.freqs().to_vec(),
            missing_paraphrases: AtomicUsize::new(0),
        }
    }

    pub fn with_antonyms(mut self, antonyms: HashMap<WordId, Vec<WordId>>) -> Self {
        self.antonyms_loaded = true;
        self.antonyms = antonyms;
        self
    }

    pub fn with_paraphrases(mut self, paraphrases: HashMap<usize, Vec<WordId>>) -> Self {
        self.paraphrases_loaded = true;
        self.paraphrases = paraphrases;
        self
    }

    pub fn load(paths: &LexiconPaths, vocab: &Vocabulary) -> Result<Self> {
        let rules = TokenizerConfig::default();
        let mut lex = Self {
            freq: vocab.freqs().to_vec(),
            ..Default::default()
        };
        if let Some(p) = &paths.wordnet {
            lex.wordnet = SynonymTable::load(p, vocab, &rules)?;
        }
        if let Some(p) = &paths.ppdb {
            lex.ppdb = SynonymTable::load(p, vocab, &rules)?;
        }
        if let Some(p) = &paths.antonym {
            lex.antonyms_loaded = true;
            for_each_tsv_line(p, |_, key, phrase| {
                let Some(word) = single_id(key, vocab, &rules) else {
                    return Ok(());
                };
                let words = tokenize(phrase, &rules);
                let ids = vocab.encode(&words);
                // A partially in-vocabulary phrase would drop its negation.
                if !ids.is_empty() && ids.len() == words.len() {
                    lex.antonyms.insert(word, ids);
                }
                Ok(())
            })?;
        }
        if let Some(p) = &paths.paraphrase {
            lex.paraphrases_loaded = true;
            for_each_tsv_line(p, |line, key, text| {
                let doc_id: usize = key
                    .parse()
                    .map_err(|_| Error::parse(p, line, format!("bad doc_id `{key}`")))?;
                let ids = vocab.encode(&tokenize(text, &rules));
                if ids.is_empty() {
                    return Err(Error::parse(
                        p,
                        line,
                        format!("paraphrase of document {doc_id} is empty after dropping out-of-vocabulary words"),
                    ));
                }
                lex.paraphrases.insert(doc_id, ids);
                Ok(())
            })?;
        }
        Ok(lex)
    }

    pub fn load_dir(dir: &Path, vocab: &Vocabulary) -> Result<Self> {
        Self::load(&LexiconPaths::from_dir(dir), vocab)
    }

    fn synonyms_for(&self, kind: AugmentKind) -> Result<&SynonymTable> {
        let table = match kind {
            AugmentKind::Ppdb => &self.ppdb,
            _ => &self.wordnet,
        };
        if table.is_loaded() {
            Ok(table)
        } else {
            Err(Error::MissingLexicon {
                strategy: kind.as_str(),
            })
        }
    }

    /// Errors unless the table `kind` reads from has been loaded.
    pub fn check_available(&self, kind: AugmentKind) -> Result<()> {
        let ok = match kind {
            AugmentKind::WordNet | AugmentKind::Uninformative => self.wordnet.is_loaded(),
            AugmentKind::Ppdb => self.ppdb.is_loaded(),
            AugmentKind::Antonym => self.antonyms_loaded,
            AugmentKind::BackTranslation => self.paraphrases_loaded,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MissingLexicon {
                strategy: kind.as_str(),
            })
        }
    }

    /// Number of back-translation lookups that fell back to the original.
    pub fn missing_paraphrases(&self) -> usize {
        self.missing_paraphrases.load(Ordering::Relaxed)
    }

    fn freq_of(&self, id: WordId) -> u64 {
        self.freq.get(id as usize).copied().unwrap_or(0)
    }
}

/// Replaces every token by a uniform draw from its candidate set.
pub fn synonym_replace<R: Rng + ?Sized>(
    doc: &TokenizedDocument,
    table: &SynonymTable,
    rng: &mut R,
) -> TokenizedDocument {
    let tokens = doc
        .tokens
        .iter()
        .map(|&t| match table.candidates.get(&t) {
            Some(c) if c.len() > 1 => c[rng.random_range(0..c.len())],
            _ => t,
        })
        .collect();
    doc.with_tokens(tokens)
}

/// Replaces each token that has an antonym entry, with probability `p`, by
/// its negated phrase.
pub fn antonym_negate<R: Rng + ?Sized>(
    doc: &TokenizedDocument,
    lex: &AugmentationLexicon,
    rng: &mut R,
    p: f64,
) -> TokenizedDocument {
    let mut tokens = Vec::with_capacity(doc.tokens.len() + 4);
    for &t in &doc.tokens {
        match lex.antonyms.get(&t) {
            Some(phrase) if rng.random::<f64>() < p => tokens.extend_from_slice(phrase),
            _ => tokens.push(t),
        }
    }
    doc.with_tokens(tokens)
}

/// Replaces every token rarer than `threshold` by its most frequent synonym
/// candidate (smallest id on ties).
pub fn uninformative_replace(doc: &TokenizedDocument, lex: &AugmentationLexicon, threshold: u64) -> TokenizedDocument {
    let tokens = doc
        .tokens
        .iter()
        .map(|&t| {
            if lex.freq_of(t) >= threshold {
                return t;
            }
            match lex.wordnet.candidates.get(&t) {
                Some(c) => *c
                    .iter()
                    .max_by(|&&a, &&b| lex.freq_of(a).cmp(&lex.freq_of(b)).then(b.cmp(&a)))
                    .unwrap_or(&t),
                None => t,
            }
        })
        .collect();
    doc.with_tokens(tokens)
}

/// Precomputed paraphrase of `doc`, or `doc` itself when none exists.
pub fn backtranslate_lookup(doc: &TokenizedDocument, lex: &AugmentationLexicon) -> TokenizedDocument {
    match lex.paraphrases.get(&doc.doc_id) {
        Some(p) => doc.with_tokens(p.clone()),
        None => {
            lex.missing_paraphrases.fetch_add(1, Ordering::Relaxed);
            doc.clone()
        }
    }
}

pub fn augment<R: Rng + ?Sized>(
    doc: &TokenizedDocument,
    strategy: &AugmentStrategy,
    lex: &AugmentationLexicon,
    rng: &mut R,
) -> Result<TokenizedDocument> {
    lex.check_available(strategy.kind)?;
    Ok(match strategy.kind {
        AugmentKind::WordNet | AugmentKind::Ppdb => synonym_replace(doc, lex.synonyms_for(strategy.kind)?, rng),
        AugmentKind::Antonym => antonym_negate(doc, lex, rng, strategy.antonym_p),
        AugmentKind::Uninformative => uninformative_replace(doc, lex, strategy.uninformative_threshold),
        AugmentKind::BackTranslation => backtranslate_lookup(doc, lex),
    })
}
