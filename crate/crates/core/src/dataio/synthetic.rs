use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, SplitPaths, TokenizerSettings, MANIFEST_VERSION};
use super::{write_jsonl_records, DataError, RawRecord};

/// Parameters of a generated multi-task corpus.
///
/// The vocabulary is cut into global *anchor* blocks, one per label index,
/// and one *slice* per task index; each slice is cut further into one
/// sub-block per label plus a task-common block. A token of an example
/// with label `j` in the task using slice `i` is drawn
///
/// - from slice `i` with probability `separation`: half the draws from the
///   label's sub-block, half from the task-common block;
/// - from anchor block `j` otherwise.
///
/// Anchors play the role of label words that mean the same thing in every
/// task, so classification transfers across tasks and out-of-domain text
/// shares label vocabulary with in-domain text; slice tokens are the only
/// evidence of which task an example came from. At `separation = 1` tasks
/// use disjoint vocabularies; at `separation = 0` every task's label-`j`
/// distribution is the same anchor block, so tasks are indistinguishable.
///
/// Task index `i` of every split uses the same slice, which is how
/// meta-valid and meta-test stay homogeneous with meta-train while the
/// label-to-sub-block assignment is re-drawn per split and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_train_tasks: usize,
    pub n_valid_tasks: usize,
    pub n_test_tasks: usize,
    pub labels_per_task: usize,
    pub examples_per_label: usize,
    pub vocab_size: usize,
    pub tokens_per_example: usize,
    /// Cluster separation in `[0, 1]`.
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train_tasks: 8,
            n_valid_tasks: 2,
            n_test_tasks: 2,
            labels_per_task: 5,
            examples_per_label: 50,
            vocab_size: 600,
            tokens_per_example: 10,
            separation: 0.8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(DataError::InvalidSpec(format!(
                "separation must be in [0, 1], got {}",
                self.separation
            )));
        }
        for (name, v) in [
            ("n_train_tasks", self.n_train_tasks),
            ("n_valid_tasks", self.n_valid_tasks),
            ("n_test_tasks", self.n_test_tasks),
            ("labels_per_task", self.labels_per_task),
            ("examples_per_label", self.examples_per_label),
            ("vocab_size", self.vocab_size),
            ("tokens_per_example", self.tokens_per_example),
        ] {
            if v == 0 {
                return Err(DataError::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        if self.block_size() == 0 {
            return Err(DataError::InvalidSpec(format!(
                "vocab_size {} is too small for {} task slices of {} labels each",
                self.vocab_size,
                self.n_slices(),
                self.labels_per_task
            )));
        }
        Ok(())
    }

    fn n_slices(&self) -> usize {
        self.n_train_tasks
            .max(self.n_valid_tasks)
            .max(self.n_test_tasks)
    }

    /// Size of one atomic block: the vocabulary holds `labels_per_task`
    /// anchors plus, per slice, `labels_per_task` sub-blocks and one
    /// task-common block.
    fn block_size(&self) -> usize {
        let n_blocks = self.labels_per_task + self.n_slices() * (self.labels_per_task + 1);
        self.vocab_size / n_blocks
    }
}

fn token(ix: usize) -> String {
    format!("w{ix:04}")
}

/// Fraction of slice draws that come from the task-common block rather
/// than the label's sub-block.
const TASK_COMMON_SHARE: f64 = 0.5;

/// Raw records of the meta-train, meta-valid, and meta-test splits.
pub type SplitRecords = (Vec<RawRecord>, Vec<RawRecord>, Vec<RawRecord>);

/// Generates the raw records of all three splits, a pure function of the
/// spec.
pub fn generate_records(spec: &SyntheticSpec) -> Result<SplitRecords, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block = spec.block_size();
    let labels = spec.labels_per_task;
    // anchors occupy the front of the vocabulary, then one slice per task
    // index of (labels + 1) blocks: sub-blocks first, task-common last
    let slice_start = |i: usize| (labels + i * (labels + 1)) * block;

    let mut generate_split = |prefix: &str, n_tasks: usize| -> Vec<RawRecord> {
        let mut records = Vec::with_capacity(n_tasks * labels * spec.examples_per_label);
        for t in 0..n_tasks {
            let slice = slice_start(t);
            // fresh label-to-sub-block assignment per split and task
            let mut assignment: Vec<usize> = (0..labels).collect();
            for i in 0..assignment.len() {
                let j = rng.random_range(i..assignment.len());
                assignment.swap(i, j);
            }
            for (l, &sub_block) in assignment.iter().enumerate() {
                let anchor = l * block;
                let sub = slice + sub_block * block;
                let common = slice + labels * block;
                for _ in 0..spec.examples_per_label {
                    let words: Vec<String> = (0..spec.tokens_per_example)
                        .map(|_| {
                            let ix = if rng.random_range(0.0..1.0) < spec.separation {
                                if rng.random_range(0.0..1.0) < TASK_COMMON_SHARE {
                                    common + rng.random_range(0..block)
                                } else {
                                    sub + rng.random_range(0..block)
                                }
                            } else {
                                anchor + rng.random_range(0..block)
                            };
                            token(ix)
                        })
                        .collect();
                    records.push(RawRecord {
                        task: format!("{prefix}_{t:02}"),
                        label: format!("label_{l}"),
                        text: words.join(" "),
                    });
                }
            }
        }
        records
    };

    let train = generate_split("train", spec.n_train_tasks);
    let valid = generate_split("valid", spec.n_valid_tasks);
    let test = generate_split("test", spec.n_test_tasks);
    Ok((train, valid, test))
}

/// Writes the three split files plus a `manifest.toml` into `out_dir` and
/// returns the manifest with resolved paths, ready to load.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    out_dir: &Path,
) -> Result<CorpusManifest, DataError> {
    let (train, valid, test) = generate_records(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let files = [
        ("meta_train.jsonl", &train),
        ("meta_valid.jsonl", &valid),
        ("meta_test.jsonl", &test),
    ];
    for (name, records) in files {
        write_jsonl_records(&out_dir.join(name), records)?;
    }

    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        splits: SplitPaths {
            meta_train: vec![out_dir.join("meta_train.jsonl")],
            meta_valid: vec![out_dir.join("meta_valid.jsonl")],
            meta_test: vec![out_dir.join("meta_test.jsonl")],
        },
        tokenizer: TokenizerSettings::default(),
        embedding_file: None,
        ood_files: Default::default(),
    };
    // the written copy uses bare file names so the directory can move
    let portable = CorpusManifest {
        splits: SplitPaths {
            meta_train: vec!["meta_train.jsonl".into()],
            meta_valid: vec!["meta_valid.jsonl".into()],
            meta_test: vec!["meta_test.jsonl".into()],
        },
        ..manifest.clone()
    };
    let manifest_text = toml::to_string_pretty(&portable).expect("manifest serializes");
    std::fs::write(out_dir.join("manifest.toml"), manifest_text).map_err(|source| {
        DataError::Io {
            path: out_dir.join("manifest.toml"),
            source,
        }
    })?;
    Ok(manifest)
}
