//! Two-topic toy corpus with disjoint topic vocabularies.

use rand::Rng;

use crate::corpus::{Corpus, Split, TokenizedDocument, Vocabulary, WordId};
use crate::rng::{self, Purpose};

/// `docs_per_topic` documents of `doc_len` tokens for each of two topics.
/// Topic 0 draws uniformly from words `a000..`, topic 1 from `b000..`; the
/// two word sets are disjoint. Every fifth document of a topic is a test
/// document, the rest are training documents. Documents alternate between
/// topics in id order.
pub fn two_topic_corpus(words_per_topic: usize, docs_per_topic: usize, doc_len: usize, seed: u64) -> Corpus {
    assert!(words_per_topic > 0 && doc_len > 0, "empty topics or documents");
    let mut raw: Vec<(u32, Split, Vec<String>)> = Vec::with_capacity(2 * docs_per_topic);
    for i in 0..docs_per_topic {
        for topic in 0..2u32 {
            let doc_id = raw.len() as u64;
            let mut r = rng::derive(seed, 0, doc_id, Purpose::Init);
            let prefix = if topic == 0 { 'a' } else { 'b' };
            let words = (0..doc_len)
                .map(|_| format!("{prefix}{:03}", r.random_range(0..words_per_topic)))
                .collect();
            let split = if i % 5 == 4 { Split::Test } else { Split::Train };
            raw.push((topic, split, words));
        }
    }
    let vocab = Vocabulary::build(raw.iter().map(|r| r.2.iter()), 1).expect("non-empty corpus");
    let documents = raw
        .iter()
        .enumerate()
        .map(|(doc_id, (topic, split, words))| TokenizedDocument {
            doc_id,
            tokens: vocab.encode(words),
            label: Some(*topic),
            split: *split,
        })
        .collect();
    Corpus {
        vocab,
        documents,
        label_names: vec!["topic_a".into(), "topic_b".into()],
    }
}

/// Which topic a word id of [`two_topic_corpus`] belongs to.
pub fn topic_of(vocab: &Vocabulary, id: WordId) -> u32 {
    u32::from(vocab.word(id).starts_with('b'))
}
