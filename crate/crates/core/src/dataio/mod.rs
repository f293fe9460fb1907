//! Corpus ingestion, synthetic corpus generation, and model persistence.
//!
//! Corpora travel as JSONL: one object per line with string fields `task`,
//! `label`, and `text`. A manifest file names the JSONL files per split,
//! tokenizer settings, an optional word-vector file, and optional per-task
//! OOD files for meta-test. The reserved label `__OOD__` marks OOD
//! examples in those files and is forbidden as an in-domain label.

mod checkpoint;
mod jsonl;
mod manifest;
mod synthetic;

pub use checkpoint::{config_fingerprint, Checkpoint, CHECKPOINT_VERSION};
pub use jsonl::{load_split, read_jsonl, write_corpus, RawRecord, RawSplit, OOD_LABEL};
use jsonl::write_jsonl_records;
pub use manifest::{load_manifest, CorpusManifest, SplitPaths, TokenizerSettings};
pub use synthetic::{generate_records, generate_synthetic, SplitRecords, SyntheticSpec};

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::encoder::{TokenizedExample, Vocabulary, WordVecError, WordVectors};
use crate::episodic::{SampleError, TaskCorpus};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("manifest {path}: {reason}")]
    InvalidManifest { path: PathBuf, reason: String },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint {path}: corrupt or truncated ({reason})")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("incompatible encoder config: checkpoint fingerprint {found:#018x}, expected {expected:#018x}")]
    FingerprintMismatch { found: u64, expected: u64 },

    #[error(transparent)]
    WordVec(#[from] WordVecError),

    #[error(transparent)]
    Corpus(#[from] SampleError),
}

/// Everything a run needs from one manifest.
#[derive(Debug, Clone)]
pub struct LoadedCorpora {
    pub vocab: Vocabulary,
    pub meta_train: TaskCorpus,
    pub meta_valid: TaskCorpus,
    pub meta_test: TaskCorpus,
    /// Tokenized OOD examples per meta-test task, from the manifest's
    /// `ood_files` table.
    pub ood_sets: BTreeMap<String, Vec<TokenizedExample>>,
    pub word_vectors: Option<WordVectors>,
    pub max_len: usize,
}

/// Loads all splits, building the vocabulary from meta-train text.
pub fn load_corpora(manifest: &CorpusManifest) -> Result<LoadedCorpora, DataError> {
    load_corpora_inner(manifest, None)
}

/// Loads all splits with a fixed vocabulary (evaluation against a trained
/// checkpoint must tokenize exactly as training did).
pub fn load_corpora_with_vocab(
    manifest: &CorpusManifest,
    vocab: &Vocabulary,
) -> Result<LoadedCorpora, DataError> {
    load_corpora_inner(manifest, Some(vocab.clone()))
}

fn load_corpora_inner(
    manifest: &CorpusManifest,
    vocab: Option<Vocabulary>,
) -> Result<LoadedCorpora, DataError> {
    let train_raw = load_split(&manifest.splits.meta_train)?;
    let valid_raw = load_split(&manifest.splits.meta_valid)?;
    let test_raw = load_split(&manifest.splits.meta_test)?;

    let vocab = vocab.unwrap_or_else(|| Vocabulary::build(train_raw.texts()));
    let max_len = manifest.tokenizer.max_len;

    let meta_train = train_raw.tokenize("meta-train", &vocab, max_len)?;
    let meta_valid = valid_raw.tokenize("meta-valid", &vocab, max_len)?;
    let meta_test = test_raw.tokenize("meta-test", &vocab, max_len)?;

    let mut ood_sets = BTreeMap::new();
    for (task, path) in &manifest.ood_files {
        let texts = jsonl::load_ood_file(path, task)?;
        let examples = texts
            .iter()
            .map(|t| TokenizedExample::from_text(t, OOD_LABEL, &vocab, max_len))
            .collect();
        ood_sets.insert(task.clone(), examples);
    }

    let word_vectors = match &manifest.embedding_file {
        Some(path) => Some(crate::encoder::load_word_vectors(path)?),
        None => None,
    };

    Ok(LoadedCorpora {
        vocab,
        meta_train,
        meta_valid,
        meta_test,
        ood_sets,
        word_vectors,
        max_len,
    })
}
