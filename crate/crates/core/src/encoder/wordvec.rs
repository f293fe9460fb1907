use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WordVecError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: file contains no vectors")]
    Empty { path: PathBuf },

    #[error("word vectors have dimension {file_dim}, encoder expects {expected}")]
    DimensionMismatch { file_dim: usize, expected: usize },
}

/// Pre-trained word vectors loaded from a text file.
#[derive(Debug, Clone)]
pub struct WordVectors {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.map.get(word).map(Vec::as_slice)
    }
}

/// Loads vectors in the plain-text format `word v1 v2 ... vd`, one entry
/// per line, space separated. The dimension is inferred from the first
/// line; every later line must match it. A malformed line is rejected with
/// its line number. When a word repeats, the last occurrence wins.
pub fn load_word_vectors(path: &Path) -> Result<WordVectors, WordVecError> {
    let file = File::open(path).map_err(|source| WordVecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut dim: Option<usize> = None;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| WordVecError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-blank line has a first field");
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| WordVecError::Malformed {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: format!("cannot parse `{f}` as a float"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(WordVecError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                reason: "line has a word but no vector components".into(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(WordVecError::Malformed {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: format!("expected {d} components, found {}", values.len()),
                });
            }
            Some(_) => {}
        }
        map.insert(word.to_string(), values);
    }
    let dim = dim.ok_or_else(|| WordVecError::Empty {
        path: path.to_path_buf(),
    })?;
    Ok(WordVectors { dim, map })
}
