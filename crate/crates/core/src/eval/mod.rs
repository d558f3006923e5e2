//! Downstream evaluation of frozen embeddings.

pub mod export;
pub mod kmeans;
pub mod logreg;
pub mod metrics;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::corpus::{Corpus, Split};
use crate::encoder::embed_documents;
use crate::error::{Error, Result};
use crate::par::Execution;

pub use export::{export_embeddings, import_embeddings, ExportFormat};
pub use kmeans::{kmeans_cluster, KMeansResult, DEFAULT_RESTARTS};
pub use logreg::{fit_logistic_regression, logistic_objective, LogRegOptions, LogisticModel};
pub use metrics::{classification_accuracy, classification_error, nmi};

/// Label of a document without one; never used for training or scoring.
pub const UNLABELED: u32 = u32::MAX;

/// Embeddings of a document collection with optional labels and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub doc_ids: Vec<usize>,
    pub matrix: Array2<f64>,
    pub labels: Option<Vec<u32>>,
    pub splits: Option<Vec<Split>>,
}

impl EmbeddingSet {
    pub fn new(doc_ids: Vec<usize>, matrix: Array2<f64>) -> Result<Self> {
        if doc_ids.len() != matrix.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} ids for {} embedding rows",
                doc_ids.len(),
                matrix.nrows()
            )));
        }
        Ok(Self {
            doc_ids,
            matrix,
            labels: None,
            splits: None,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Labels and splits looked up by document id.
    pub fn with_annotations(
        mut self,
        labels: &HashMap<usize, u32>,
        splits: Option<&HashMap<usize, Split>>,
    ) -> Result<Self> {
        let lookup = |id: &usize| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no label for document {id}")))
        };
        self.labels = Some(self.doc_ids.iter().map(lookup).collect::<Result<_>>()?);
        if let Some(s) = splits {
            self.splits = Some(
                self.doc_ids
                    .iter()
                    .map(|id| {
                        s.get(id)
                            .copied()
                            .ok_or_else(|| Error::InvalidInput(format!("no split for document {id}")))
                    })
                    .collect::<Result<_>>()?,
            );
        }
        Ok(self)
    }

    /// Labeled rows of one split.
    fn rows_where(&self, split: Split) -> Vec<usize> {
        match (&self.splits, &self.labels) {
            (Some(s), Some(l)) => (0..self.len())
                .filter(|&i| s[i] == split && l[i] != UNLABELED)
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum EvalReport {
    Classify {
        n_train: usize,
        n_test: usize,
        num_classes: usize,
        error_rate: f64,
        accuracy: f64,
        c: f64,
        iterations: usize,
        converged: bool,
    },
    Cluster {
        n: usize,
        k: usize,
        nmi: f64,
        inertia: f64,
        restarts: usize,
        seed: u64,
    },
}

/// Embeds every document of `corpus` and attaches its labels and splits.
/// Unlabeled documents get label [`UNLABELED`].
pub fn corpus_embeddings(corpus: &Corpus, input: &Array2<f64>, exec: Execution) -> Result<EmbeddingSet> {
    let matrix = embed_documents(&corpus.documents, input, exec)?;
    let mut set = EmbeddingSet::new(corpus.documents.iter().map(|d| d.doc_id).collect(), matrix)?;
    set.labels = Some(corpus.documents.iter().map(|d| d.label.unwrap_or(UNLABELED)).collect());
    set.splits = Some(corpus.documents.iter().map(|d| d.split).collect());
    Ok(set)
}

/// Fits on the training rows and reports the error on the test rows.
pub fn evaluate_classification(set: &EmbeddingSet, opts: &LogRegOptions) -> Result<EvalReport> {
    let labels = set
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("classification needs labels".into()))?;
    let train = set.rows_where(Split::Train);
    let test = set.rows_where(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput(
            "classification needs train and test documents".into(),
        ));
    }
    let num_classes = labels
        .iter()
        .copied()
        .filter(|&l| l != UNLABELED)
        .max()
        .map_or(0, |m| m as usize + 1)
        .max(2);
    let xt = set.matrix.select(Axis(0), &train);
    let yt: Vec<u32> = train.iter().map(|&i| labels[i]).collect();
    let model = fit_logistic_regression(&xt, &yt, num_classes, opts)?;
    let xs = set.matrix.select(Axis(0), &test);
    let ys: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    let pred = model.predict(&xs);
    let error_rate = classification_error(&pred, &ys)?;
    Ok(EvalReport::Classify {
        n_train: train.len(),
        n_test: test.len(),
        num_classes,
        error_rate,
        accuracy: 1.0 - error_rate,
        c: opts.c,
        iterations: model.iterations,
        converged: model.converged,
    })
}

/// k-means on every row, scored by NMI against the labels.
pub fn evaluate_clustering(
    set: &EmbeddingSet,
    k: usize,
    seed: u64,
    restarts: usize,
    exec: Execution,
) -> Result<EvalReport> {
    let labels = set
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("clustering needs labels".into()))?;
    let km = kmeans_cluster(&set.matrix, k, seed, restarts, exec)?;
    Ok(EvalReport::Cluster {
        n: set.len(),
        k,
        nmi: nmi(&km.assignment, labels)?,
        inertia: km.inertia,
        restarts: restarts.max(1),
        seed,
    })
}

/// `doc_id<TAB>value` lines.
fn read_id_table(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `doc_id<TAB>value`"))?;
        let id = id
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad document id `{id}`")))?;
        out.push((id, value.trim().to_string()));
    }
    Ok(out)
}

/// Reads `doc_id<TAB>label` lines. Label names are mapped to indices in
/// sorted order; the names are returned alongside.
pub fn read_labels(path: &Path) -> Result<(HashMap<usize, u32>, Vec<String>)> {
    let rows = read_id_table(path)?;
    let names: Vec<String> = rows
        .iter()
        .map(|r| r.1.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, u32> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i as u32)).collect();
    let map = rows.iter().map(|(id, l)| (*id, index[l.as_str()])).collect();
    Ok((map, names))
}

pub fn read_splits(path: &Path) -> Result<HashMap<usize, Split>> {
    read_id_table(path)?
        .into_iter()
        .enumerate()
        .map(|(i, (id, s))| {
            Split::parse(&s)
                .map(|s| (id, s))
                .ok_or_else(|| Error::parse(path, i + 1, format!("unknown split `{s}`")))
        })
        .collect()
}

/// Writes the label and split tables of a loaded corpus; either may be
/// skipped. Unlabeled documents are left out of the label table.
pub fn write_annotations(corpus: &Corpus, labels_path: Option<&Path>, splits_path: Option<&Path>) -> Result<()> {
    if let Some(path) = labels_path {
        let mut out = String::new();
        for d in &corpus.documents {
            if let Some(l) = d.label {
                let _ = writeln!(out, "{}\t{}", d.doc_id, corpus.label_names[l as usize]);
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = splits_path {
        let mut out = String::new();
        for d in &corpus.documents {
            let _ = writeln!(out, "{}\t{}", d.doc_id, d.split.as_str());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
