//! Corpus ingestion: tokenization, vocabulary, token-id documents and
//! sparse bag-of-words vectors.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type WordId = u32;

/// Default frequency threshold for vocabulary admission.
pub const DEFAULT_MIN_COUNT: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

/// Splits on Unicode whitespace, lowercases, and trims non-alphanumeric
/// characters from both ends of every token. Tokens left empty are dropped.
pub fn tokenize(text: &str, rules: &TokenizerConfig) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = if rules.strip_punctuation {
                raw.trim_matches(|c: char| !c.is_alphanumeric())
            } else {
                raw
            };
            if trimmed.is_empty() {
                None
            } else if rules.lowercase {
                Some(trimmed.to_lowercase())
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect()
}

/// Word ↔ id map with corpus frequencies. Ids are dense and ordered by
/// descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    freq: Vec<u64>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn build<D, W>(docs: D, min_count: u64) -> Result<Self>
    where
        D: IntoIterator,
        D::Item: IntoIterator<Item = W>,
        W: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for doc in docs {
            for w in doc {
                let w = w.as_ref();
                match counts.get_mut(w) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(w.to_string(), 1);
                    }
                }
            }
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_entries(entries))
    }

    /// Builds a vocabulary from `(word, freq)` pairs taken in id order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut words = Vec::with_capacity(entries.len());
        let mut freq = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (w, f)) in entries.into_iter().enumerate() {
            index.insert(w.clone(), i as WordId);
            words.push(w);
            freq.push(f);
        }
        Self { words, freq, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn freq(&self, id: WordId) -> u64 {
        self.freq[id as usize]
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freq
    }

    /// Maps words to ids, dropping out-of-vocabulary words.
    pub fn encode<W: AsRef<str>>(&self, words: &[W]) -> Vec<WordId> {
        words.iter().filter_map(|w| self.id_of(w.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[WordId]) -> Vec<&str> {
        ids.iter().map(|&i| self.word(i)).collect()
    }

    /// Content hash over words and frequencies in id order.
    pub fn content_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for (w, f) in self.words.iter().zip(&self.freq) {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
            hasher.update(f.to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Writes `word<TAB>frequency` lines in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (w, f) in self.words.iter().zip(&self.freq) {
            writeln!(out, "{w}\t{f}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (word, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `word<TAB>frequency`"))?;
            let freq: u64 = freq
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad frequency `{freq}`")))?;
            if !seen.insert(word.to_string()) {
                return Err(Error::parse(path, i + 1, format!("duplicate word `{word}`")));
            }
            entries.push((word.to_string(), freq));
        }
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count: 0 });
        }
        Ok(Self::from_entries(entries))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "unlabeled" => Some(Split::Unlabeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub doc_id: usize,
    pub tokens: Vec<WordId>,
    pub label: Option<u32>,
    pub split: Split,
}

impl TokenizedDocument {
    pub fn new(doc_id: usize, tokens: Vec<WordId>) -> Self {
        Self {
            doc_id,
            tokens,
            label: None,
            split: Split::Unlabeled,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Same metadata, different tokens.
    pub fn with_tokens(&self, tokens: Vec<WordId>) -> Self {
        Self {
            doc_id: self.doc_id,
            tokens,
            label: self.label,
            split: self.split,
        }
    }
}

/// Sparse count vector of a document: sorted unique ids with positive counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBow {
    pub indices: Vec<WordId>,
    pub values: Vec<u32>,
    pub total: u32,
}

impl SparseBow {
    pub fn from_tokens(tokens: &[WordId]) -> Option<Self> {
        if tokens.is_empty() {
            return None;
        }
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let mut indices = Vec::new();
        let mut values: Vec<u32> = Vec::new();
        for id in sorted {
            if indices.last() == Some(&id) {
                *values.last_mut().unwrap() += 1;
            } else {
                indices.push(id);
                values.push(1);
            }
        }
        Some(Self {
            indices,
            values,
            total: tokens.len() as u32,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, u32)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

pub fn to_bow(doc: &TokenizedDocument, vocab: &Vocabulary) -> Result<SparseBow> {
    if let Some(&bad) = doc.tokens.iter().find(|&&t| t as usize >= vocab.len()) {
        return Err(Error::InvalidInput(format!(
            "document {} has token id {bad} outside vocabulary of size {}",
            doc.doc_id,
            vocab.len()
        )));
    }
    SparseBow::from_tokens(&doc.tokens).ok_or(Error::EmptyDocument { doc_id: doc.doc_id })
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusOptions {
    pub tokenizer: TokenizerConfig,
    pub min_count: u64,
    /// Drop documents left empty by OOV filtering instead of failing.
    pub skip_empty: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            min_count: DEFAULT_MIN_COUNT,
            skip_empty: false,
        }
    }
}

/// Labeled documents plus the vocabulary and label names they are encoded with.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub documents: Vec<TokenizedDocument>,
    pub label_names: Vec<String>,
}

struct RawLine {
    label: Option<String>,
    words: Vec<String>,
    split: Split,
    source: (usize, usize),
}

/// Label, tokens and 1-based line number of one corpus line.
pub type LabeledLine = (Option<String>, Vec<String>, usize);

/// Reads `label<TAB>text` lines. Blank lines are skipped.
pub fn read_labeled_lines(path: &Path, rules: &TokenizerConfig) -> Result<Vec<LabeledLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "missing TAB between label and text"))?;
        let label = label.trim();
        let label = (!label.is_empty()).then(|| label.to_string());
        out.push((label, tokenize(text, rules), i + 1));
    }
    Ok(out)
}

impl Corpus {
    /// Loads one or more `label<TAB>text` files. Document ids are assigned in
    /// file order, then line order. When `vocab` is `None` it is built from
    /// all loaded files with `opts.min_count`.
    pub fn from_files(files: &[(&Path, Split)], vocab: Option<Vocabulary>, opts: &CorpusOptions) -> Result<Self> {
        let mut raw = Vec::new();
        for (fi, &(path, split)) in files.iter().enumerate() {
            for (label, words, line) in read_labeled_lines(path, &opts.tokenizer)? {
                raw.push(RawLine {
                    label,
                    words,
                    split,
                    source: (fi, line),
                });
            }
        }
        let vocab = match vocab {
            Some(v) => v,
            None => Vocabulary::build(raw.iter().map(|r| r.words.iter()), opts.min_count)?,
        };
        let label_names: Vec<String> = raw
            .iter()
            .filter_map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let label_index: HashMap<&str, u32> = label_names
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();

        let mut documents = Vec::with_capacity(raw.len());
        for r in &raw {
            let tokens = vocab.encode(&r.words);
            if tokens.is_empty() {
                if opts.skip_empty {
                    continue;
                }
                let (fi, line) = r.source;
                return Err(Error::parse(
                    files[fi].0,
                    line,
                    "document is empty after dropping out-of-vocabulary words",
                ));
            }
            documents.push(TokenizedDocument {
                doc_id: documents.len(),
                tokens,
                label: r.label.as_deref().map(|l| label_index[l]),
                split: r.split,
            });
        }
        Ok(Self {
            vocab,
            documents,
            label_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.documents.iter().filter(|d| d.split == split).count()
    }
}

/// Loads a single labeled file as training documents.
pub fn load_labeled_corpus(path: &Path, vocab: Option<Vocabulary>, opts: &CorpusOptions) -> Result<Corpus> {
    Corpus::from_files(&[(path, Split::Train)], vocab, opts)
}
