use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

/// Manifest schema version this build reads and writes.
pub const MANIFEST_VERSION: u32 = 1;

fn default_version() -> u32 {
    MANIFEST_VERSION
}

/// Describes where one dataset lives on disk. Relative paths inside the
/// file resolve against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(default = "default_version")]
    pub version: u32,
    pub splits: SplitPaths,
    #[serde(default)]
    pub tokenizer: TokenizerSettings,
    /// Optional pre-trained word vectors, `word v1 .. vd` text format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_file: Option<PathBuf>,
    /// Optional labeled-OOD JSONL file per meta-test task.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ood_files: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub meta_train: Vec<PathBuf>,
    pub meta_valid: Vec<PathBuf>,
    pub meta_test: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSettings {
    /// Tokens beyond this count are discarded.
    pub max_len: usize,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self { max_len: 40 }
    }
}

/// Parses a manifest and resolves every contained path against the
/// manifest's directory. Referenced files must exist.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest: CorpusManifest =
        toml::from_str(&text).map_err(|e| DataError::InvalidManifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DataError::InvalidManifest {
            path: path.to_path_buf(),
            reason: format!(
                "unsupported version {} (expected {MANIFEST_VERSION})",
                manifest.version
            ),
        });
    }
    if manifest.tokenizer.max_len == 0 {
        return Err(DataError::InvalidManifest {
            path: path.to_path_buf(),
            reason: "tokenizer.max_len must be >= 1".into(),
        });
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for list in [
        &mut manifest.splits.meta_train,
        &mut manifest.splits.meta_valid,
        &mut manifest.splits.meta_test,
    ] {
        if list.is_empty() {
            return Err(DataError::InvalidManifest {
                path: path.to_path_buf(),
                reason: "every split needs at least one file".into(),
            });
        }
        for p in list.iter_mut() {
            resolve(p);
        }
    }
    if let Some(p) = &mut manifest.embedding_file {
        resolve(p);
    }
    for p in manifest.ood_files.values_mut() {
        resolve(p);
    }

    let mut referenced: Vec<&PathBuf> = Vec::new();
    referenced.extend(&manifest.splits.meta_train);
    referenced.extend(&manifest.splits.meta_valid);
    referenced.extend(&manifest.splits.meta_test);
    referenced.extend(&manifest.embedding_file);
    referenced.extend(manifest.ood_files.values());
    for p in referenced {
        if !p.is_file() {
            return Err(DataError::InvalidManifest {
                path: path.to_path_buf(),
                reason: format!("referenced file {} does not exist", p.display()),
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.jsonl"), "").unwrap();
        fs::write(dir.path().join("valid.jsonl"), "").unwrap();
        fs::write(dir.path().join("test.jsonl"), "").unwrap();
        let manifest_path = dir.path().join("manifest.toml");
        fs::write(
            &manifest_path,
            concat!(
                "[splits]\n",
                "meta_train = [\"train.jsonl\"]\n",
                "meta_valid = [\"valid.jsonl\"]\n",
                "meta_test = [\"test.jsonl\"]\n",
            ),
        )
        .unwrap();
        let manifest = load_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.tokenizer.max_len, 40);
        assert!(manifest.splits.meta_train[0].is_absolute() || manifest.splits.meta_train[0].starts_with(dir.path()));
        assert!(manifest.splits.meta_train[0].is_file());
    }

    #[test]
    fn missing_referenced_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("manifest.toml");
        fs::write(
            &manifest_path,
            concat!(
                "[splits]\n",
                "meta_train = [\"nope.jsonl\"]\n",
                "meta_valid = [\"nope.jsonl\"]\n",
                "meta_test = [\"nope.jsonl\"]\n",
            ),
        )
        .unwrap();
        match load_manifest(&manifest_path).unwrap_err() {
            DataError::InvalidManifest { reason, .. } => assert!(reason.contains("nope.jsonl")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.jsonl"), "").unwrap();
        let manifest_path = dir.path().join("manifest.toml");
        fs::write(
            &manifest_path,
            concat!(
                "version = 99\n",
                "[splits]\n",
                "meta_train = [\"x.jsonl\"]\n",
                "meta_valid = [\"x.jsonl\"]\n",
                "meta_test = [\"x.jsonl\"]\n",
            ),
        )
        .unwrap();
        assert!(load_manifest(&manifest_path).is_err());
    }
}
