use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{TokenizedExample, Vocabulary};
use crate::episodic::{TaskCorpus, TaskExamples};

use super::DataError;

/// Reserved label marking OOD examples in labeled-OOD files. Forbidden as
/// an in-domain label.
pub const OOD_LABEL: &str = "__OOD__";

/// One corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub task: String,
    pub label: String,
    pub text: String,
}

/// Parses a JSONL corpus file. Blank lines are skipped; anything else that
/// fails to parse or validate is an error carrying the file and line.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| DataError::InvalidRecord {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
        let reject = |reason: String| DataError::InvalidRecord {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        if record.task.is_empty() {
            return Err(reject("`task` must be non-empty".into()));
        }
        if record.label.is_empty() {
            return Err(reject("`label` must be non-empty".into()));
        }
        if record.text.trim().is_empty() {
            return Err(reject("`text` must be non-empty".into()));
        }
        records.push(record);
    }
    Ok(records)
}

/// Raw text of one split, grouped task -> label -> texts in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSplit {
    tasks: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl RawSplit {
    /// Every text, iterated in sorted task and label order then file order.
    /// Vocabulary construction depends on this order being stable.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tasks
            .values()
            .flat_map(|labels| labels.values())
            .flatten()
            .map(String::as_str)
    }

    pub fn tokenize(
        &self,
        split: &str,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<TaskCorpus, DataError> {
        let mut tasks = BTreeMap::new();
        for (task, labels) in &self.tasks {
            let mut out = TaskExamples::new();
            for (label, texts) in labels {
                let examples = texts
                    .iter()
                    .map(|t| TokenizedExample::from_text(t, label, vocab, max_len))
                    .collect();
                out.insert(label.clone(), examples);
            }
            tasks.insert(task.clone(), out);
        }
        Ok(TaskCorpus::from_tasks(split, tasks)?)
    }
}

/// Reads and merges the JSONL files of one split. Duplicate identical
/// lines are kept; the reserved OOD label is rejected.
pub fn load_split(paths: &[PathBuf]) -> Result<RawSplit, DataError> {
    let mut split = RawSplit::default();
    for path in paths {
        for (i, record) in read_jsonl(path)?.into_iter().enumerate() {
            if record.label == OOD_LABEL {
                return Err(DataError::InvalidRecord {
                    path: path.clone(),
                    line: i + 1,
                    reason: format!("label `{OOD_LABEL}` is reserved for OOD files"),
                });
            }
            split
                .tasks
                .entry(record.task)
                .or_default()
                .entry(record.label)
                .or_default()
                .push(record.text);
        }
    }
    Ok(split)
}

/// Reads a labeled-OOD file: every record must carry the reserved OOD
/// label and the expected task id. Returns the texts in file order.
pub fn load_ood_file(path: &Path, expected_task: &str) -> Result<Vec<String>, DataError> {
    let records = read_jsonl(path)?;
    let mut texts = Vec::with_capacity(records.len());
    for (i, record) in records.into_iter().enumerate() {
        let reject = |reason: String| DataError::InvalidRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if record.label != OOD_LABEL {
            return Err(reject(format!(
                "OOD file records must use label `{OOD_LABEL}`, found `{}`",
                record.label
            )));
        }
        if record.task != expected_task {
            return Err(reject(format!(
                "OOD file for task `{expected_task}` contains task `{}`",
                record.task
            )));
        }
        texts.push(record.text);
    }
    Ok(texts)
}

/// Writes records to a JSONL file in slice order.
pub(super) fn write_jsonl_records(path: &Path, records: &[RawRecord]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("string fields serialize");
        writeln!(w, "{line}").map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Writes a corpus back to JSONL, one record per example, tasks and labels
/// in sorted order and examples in corpus order. `load_split` of the
/// result reproduces the original grouping.
pub fn write_corpus(corpus: &TaskCorpus, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    for (task, labels) in corpus.tasks() {
        for (label, examples) in labels {
            for ex in examples {
                let record = RawRecord {
                    task: task.clone(),
                    label: label.clone(),
                    text: ex.raw_text.clone(),
                };
                let line = serde_json::to_string(&record).expect("string fields serialize");
                writeln!(w, "{line}").map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
