//! Task corpora and episodic sampling.
//!
//! Meta-training never sees a fixed dataset: each optimizer step draws
//! fresh episodes, each pairing an in-domain query from one task with a
//! simulated OOD query from a different task, plus K-shot support sets for
//! the ground-truth label and a handful of sampled negatives.
//!
//! All sampling is deterministic given an explicit RNG, and a [`TaskCorpus`]
//! is immutable after construction, so samplers with independent seeds may
//! run in parallel.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::encoder::TokenizedExample;

/// Examples of one task, grouped by label.
pub type TaskExamples = BTreeMap<String, Vec<TokenizedExample>>;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("corpus `{split}` needs at least {needed} tasks, found {found}")]
    TooFewTasks {
        split: String,
        needed: usize,
        found: usize,
    },

    #[error("task `{task}` not present in corpus `{split}`")]
    UnknownTask { split: String, task: String },

    #[error("no OOD source for task `{task}`: corpus `{split}` has no other tasks and no OOD file was provided")]
    NoOodSource { split: String, task: String },

    #[error("invalid corpus `{split}`: {reason}")]
    InvalidCorpus { split: String, reason: String },

    #[error("{what} must be >= 1")]
    ZeroCount { what: &'static str },
}

/// A named set of tasks, each mapping labels to tokenized examples.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCorpus {
    split: String,
    tasks: BTreeMap<String, TaskExamples>,
}

impl TaskCorpus {
    /// Validates that every task has at least one label and every label at
    /// least one example.
    pub fn from_tasks(
        split: impl Into<String>,
        tasks: BTreeMap<String, TaskExamples>,
    ) -> Result<Self, SampleError> {
        let split = split.into();
        for (task, labels) in &tasks {
            if labels.is_empty() {
                return Err(SampleError::InvalidCorpus {
                    split,
                    reason: format!("task `{task}` has no labels"),
                });
            }
            for (label, examples) in labels {
                if examples.is_empty() {
                    return Err(SampleError::InvalidCorpus {
                        split,
                        reason: format!("task `{task}` label `{label}` has no examples"),
                    });
                }
            }
        }
        Ok(Self { split, tasks })
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn tasks(&self) -> &BTreeMap<String, TaskExamples> {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&TaskExamples> {
        self.tasks.get(id)
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_examples(&self) -> usize {
        self.tasks
            .values()
            .flat_map(|t| t.values())
            .map(|v| v.len())
            .sum()
    }
}

/// One meta-training sample.
#[derive(Debug, Clone)]
pub struct Episode {
    pub id_query: TokenizedExample,
    pub ood_query: TokenizedExample,
    /// Support sets in sorted label order, each exactly K examples.
    pub supports: Vec<(String, Vec<TokenizedExample>)>,
    /// Position of the ground-truth label within `supports`.
    pub gt_index: usize,
    pub id_task: String,
    pub ood_task: String,
}

/// Draws one episode: an ID task and query, an OOD query from a different
/// task, up to `n_negatives` distinct non-ground-truth labels, and K-shot
/// support sets.
///
/// When a label holds at least `k_shot` candidates the support set is
/// sampled without replacement; smaller pools are taken whole and padded to
/// `k_shot` by uniform draws with replacement. The ID query is excluded
/// from its own support pool whenever its label has more than one example.
pub fn sample_episode<R: Rng>(
    corpus: &TaskCorpus,
    n_negatives: usize,
    k_shot: usize,
    rng: &mut R,
) -> Result<Episode, SampleError> {
    if k_shot == 0 {
        return Err(SampleError::ZeroCount { what: "k_shot" });
    }
    if corpus.n_tasks() < 2 {
        return Err(SampleError::TooFewTasks {
            split: corpus.split.clone(),
            needed: 2,
            found: corpus.n_tasks(),
        });
    }
    let task_ids: Vec<&String> = corpus.tasks.keys().collect();
    let i = rng.random_range(0..task_ids.len());
    let j = {
        let j = rng.random_range(0..task_ids.len() - 1);
        if j >= i {
            j + 1
        } else {
            j
        }
    };
    let id_task = task_ids[i].clone();
    let ood_task = task_ids[j].clone();

    let (gt_label, query_index) = draw_example(&corpus.tasks[&id_task], rng);
    let id_query = corpus.tasks[&id_task][&gt_label][query_index].clone();
    let (ood_label, ood_index) = draw_example(&corpus.tasks[&ood_task], rng);
    let ood_query = corpus.tasks[&ood_task][&ood_label][ood_index].clone();

    let other_labels: Vec<&String> = corpus.tasks[&id_task]
        .keys()
        .filter(|l| **l != gt_label)
        .collect();
    let n_neg = n_negatives.min(other_labels.len());
    let negative_labels: Vec<String> = choose_indices(other_labels.len(), n_neg, rng)
        .into_iter()
        .map(|ix| other_labels[ix].clone())
        .collect();

    let mut labels: Vec<String> = Vec::with_capacity(n_neg + 1);
    labels.push(gt_label.clone());
    labels.extend(negative_labels);
    labels.sort_unstable();

    let supports = labels
        .iter()
        .map(|label| {
            let pool = &corpus.tasks[&id_task][label];
            let excluded = if *label == gt_label && pool.len() > 1 {
                Some(query_index)
            } else {
                None
            };
            (label.clone(), sample_support(pool, excluded, k_shot, rng))
        })
        .collect::<Vec<_>>();
    let gt_index = labels
        .iter()
        .position(|l| *l == gt_label)
        .expect("ground-truth label is in the list");

    Ok(Episode {
        id_query,
        ood_query,
        supports,
        gt_index,
        id_task,
        ood_task,
    })
}

/// Uniform draw over all examples of a task. Returns (label, index within
/// that label's list).
fn draw_example<R: Rng>(task: &TaskExamples, rng: &mut R) -> (String, usize) {
    let total: usize = task.values().map(|v| v.len()).sum();
    let mut pick = rng.random_range(0..total);
    for (label, examples) in task {
        if pick < examples.len() {
            return (label.clone(), pick);
        }
        pick -= examples.len();
    }
    unreachable!("pick < total")
}

/// K draws from `pool`, skipping `excluded`: without replacement while the
/// pool lasts, then uniform with replacement.
fn sample_support<R: Rng>(
    pool: &[TokenizedExample],
    excluded: Option<usize>,
    k: usize,
    rng: &mut R,
) -> Vec<TokenizedExample> {
    let candidates: Vec<usize> = (0..pool.len()).filter(|&i| Some(i) != excluded).collect();
    let chosen: Vec<usize> = if candidates.len() >= k {
        choose_indices(candidates.len(), k, rng)
            .into_iter()
            .map(|ix| candidates[ix])
            .collect()
    } else {
        let mut all = candidates.clone();
        while all.len() < k {
            all.push(candidates[rng.random_range(0..candidates.len())]);
        }
        all
    };
    debug_assert_eq!(chosen.len(), k);
    chosen.into_iter().map(|ix| pool[ix].clone()).collect()
}

/// First `k` indices of a partial Fisher-Yates shuffle of `0..n`.
fn choose_indices<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    indices.truncate(k);
    indices
}

/// The labeled ID side and unlabeled OOD side of one meta-test task's
/// evaluation data.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub id_examples: Vec<TokenizedExample>,
    pub ood_examples: Vec<TokenizedExample>,
}

/// Where the OOD side of an [`EvalSet`] comes from.
#[derive(Debug, Clone, Copy)]
pub enum OodSource<'a> {
    /// Sample from every task in the corpus other than the target, matching
    /// the ID count exactly.
    OtherTasks,
    /// Use a provided list verbatim (its count is preserved).
    Provided(&'a [TokenizedExample]),
}

/// Assembles the evaluation set for `target_task`, given its held-out ID
/// test examples.
pub fn build_eval_set<R: Rng>(
    corpus: &TaskCorpus,
    target_task: &str,
    id_test: &[TokenizedExample],
    ood: OodSource<'_>,
    rng: &mut R,
) -> Result<EvalSet, SampleError> {
    if !corpus.tasks.contains_key(target_task) {
        return Err(SampleError::UnknownTask {
            split: corpus.split.clone(),
            task: target_task.to_string(),
        });
    }
    let ood_examples = match ood {
        OodSource::Provided(list) => list.to_vec(),
        OodSource::OtherTasks => {
            let pool: Vec<&TokenizedExample> = corpus
                .tasks
                .iter()
                .filter(|(task, _)| task.as_str() != target_task)
                .flat_map(|(_, labels)| labels.values().flatten())
                .collect();
            if pool.is_empty() {
                return Err(SampleError::NoOodSource {
                    split: corpus.split.clone(),
                    task: target_task.to_string(),
                });
            }
            let need = id_test.len();
            if pool.len() >= need {
                choose_indices(pool.len(), need, rng)
                    .into_iter()
                    .map(|ix| pool[ix].clone())
                    .collect()
            } else {
                let mut out: Vec<TokenizedExample> = pool.iter().map(|e| (*e).clone()).collect();
                while out.len() < need {
                    out.push(pool[rng.random_range(0..pool.len())].clone());
                }
                out
            }
        }
    };
    Ok(EvalSet {
        id_examples: id_test.to_vec(),
        ood_examples,
    })
}

/// A K-shot split of one task into training and held-out ID test examples.
#[derive(Debug, Clone)]
pub struct KShotSplit {
    pub train: TaskExamples,
    pub test: Vec<TokenizedExample>,
    /// One record per label that could not supply `k` training examples and
    /// degraded to leave-one-out.
    pub warnings: Vec<String>,
}

/// Splits each label into exactly `k` training examples and a disjoint
/// remainder of test examples.
///
/// Labels with at most `k` examples degrade to leave-one-out (all but one
/// to train, one to test) with a warning record; a single-example label
/// trains on its only example and contributes nothing to test.
pub fn split_k_shot<R: Rng>(task: &TaskExamples, k: usize, rng: &mut R) -> KShotSplit {
    let mut train = TaskExamples::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    for (label, examples) in task {
        let order = choose_indices(examples.len(), examples.len(), rng);
        let n_train = if examples.len() > k {
            k
        } else {
            warnings.push(format!(
                "label `{label}` has {} examples, fewer than k={k}; using leave-one-out",
                examples.len()
            ));
            examples.len().saturating_sub(1).max(1)
        };
        let picked: Vec<TokenizedExample> = order[..n_train]
            .iter()
            .map(|&ix| examples[ix].clone())
            .collect();
        train.insert(label.clone(), picked);
        test.extend(order[n_train..].iter().map(|&ix| examples[ix].clone()));
    }
    KShotSplit {
        train,
        test,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocabulary;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example(text: &str, label: &str) -> TokenizedExample {
        let vocab = Vocabulary::build([text]);
        TokenizedExample::from_text(text, label, &vocab, 40)
    }

    /// `n_tasks` tasks named t0.., each with `labels` labels of `per_label`
    /// distinct examples.
    fn corpus(n_tasks: usize, labels: usize, per_label: usize) -> TaskCorpus {
        let mut tasks = BTreeMap::new();
        for t in 0..n_tasks {
            let mut task = TaskExamples::new();
            for l in 0..labels {
                let examples = (0..per_label)
                    .map(|e| example(&format!("task{t} label{l} ex{e}"), &format!("l{l}")))
                    .collect();
                task.insert(format!("l{l}"), examples);
            }
            tasks.insert(format!("t{t}"), task);
        }
        TaskCorpus::from_tasks("meta-train", tasks).unwrap()
    }

    #[test]
    fn small_pool_pads_to_k_by_resampling() {
        let c = corpus(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = sample_episode(&c, 4, 20, &mut rng).unwrap();
        for (label, support) in &ep.supports {
            assert_eq!(support.len(), 20, "label {label}");
            // drawn from a pool of at most 3 distinct examples
            let mut texts: Vec<&str> = support.iter().map(|e| e.raw_text.as_str()).collect();
            texts.sort_unstable();
            texts.dedup();
            assert!(texts.len() <= 3);
        }
    }

    #[test]
    fn negatives_are_capped_by_available_labels() {
        let c = corpus(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = sample_episode(&c, 4, 2, &mut rng).unwrap();
        assert_eq!(ep.supports.len(), 2);
    }

    #[test]
    fn same_seed_reproduces_the_episode() {
        let c = corpus(4, 3, 5);
        let a = sample_episode(&c, 2, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_episode(&c, 2, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.id_query, b.id_query);
        assert_eq!(a.ood_query, b.ood_query);
        assert_eq!(a.supports, b.supports);
        assert_eq!(a.gt_index, b.gt_index);
    }

    #[test]
    fn single_task_corpus_is_rejected() {
        let c = corpus(1, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_episode(&c, 4, 5, &mut rng),
            Err(SampleError::TooFewTasks { found: 1, .. })
        ));
    }

    #[test]
    fn query_is_excluded_from_its_own_support() {
        let c = corpus(3, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let ep = sample_episode(&c, 4, 10, &mut rng).unwrap();
            let (_, gt_support) = &ep.supports[ep.gt_index];
            assert!(
                gt_support.iter().all(|e| e.raw_text != ep.id_query.raw_text),
                "query leaked into its own support set"
            );
        }
    }

    #[test]
    fn episode_contracts_hold_across_samples() {
        let c = corpus(5, 4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let ep = sample_episode(&c, 3, 7, &mut rng).unwrap();
            assert_ne!(ep.id_task, ep.ood_task);
            assert!(ep.supports.len() <= 4);
            assert_eq!(ep.supports[ep.gt_index].0, ep.id_query.label);
            assert_eq!(
                ep.supports.iter().filter(|(l, _)| *l == ep.id_query.label).count(),
                1
            );
            for (_, s) in &ep.supports {
                assert_eq!(s.len(), 7);
            }
        }
    }

    #[test]
    fn eval_set_matches_id_count_from_other_tasks() {
        let c = corpus(3, 2, 10);
        let id_test: Vec<TokenizedExample> = c.task("t0").unwrap()["l0"].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = build_eval_set(&c, "t0", &id_test, OodSource::OtherTasks, &mut rng).unwrap();
        assert_eq!(set.ood_examples.len(), set.id_examples.len());
        for e in &set.ood_examples {
            assert!(!e.raw_text.contains("task0"), "OOD drawn from the target task");
        }
    }

    #[test]
    fn eval_set_preserves_provided_ood_counts() {
        let c = corpus(2, 2, 10);
        let id_test: Vec<TokenizedExample> = (0..71)
            .map(|i| example(&format!("id {i}"), "l0"))
            .collect();
        let ood: Vec<TokenizedExample> = (0..29)
            .map(|i| example(&format!("ood {i}"), "__OOD__"))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = build_eval_set(&c, "t0", &id_test, OodSource::Provided(&ood), &mut rng).unwrap();
        assert_eq!(set.id_examples.len(), 71);
        assert_eq!(set.ood_examples.len(), 29);
    }

    #[test]
    fn eval_set_without_ood_source_is_an_error() {
        let c = corpus(1, 2, 5);
        let id_test = vec![example("x", "l0")];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(
            build_eval_set(&c, "t0", &id_test, OodSource::OtherTasks, &mut rng),
            Err(SampleError::NoOodSource { .. })
        ));
    }

    #[test]
    fn eval_set_is_deterministic_per_seed() {
        let c = corpus(4, 2, 8);
        let id_test: Vec<TokenizedExample> = c.task("t1").unwrap()["l1"].clone();
        let a = build_eval_set(&c, "t1", &id_test, OodSource::OtherTasks, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = build_eval_set(&c, "t1", &id_test, OodSource::OtherTasks, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.ood_examples, b.ood_examples);
    }

    #[test]
    fn k_shot_split_counts() {
        let c = corpus(1, 2, 3);
        let task = c.task("t0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let split = split_k_shot(task, 1, &mut rng);
        let total_train: usize = split.train.values().map(|v| v.len()).sum();
        assert_eq!(total_train, 2);
        assert_eq!(split.test.len(), 4);
        assert!(split.warnings.is_empty());
    }

    #[test]
    fn k_shot_split_arithmetic() {
        let c = corpus(1, 1, 150);
        let task = c.task("t0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let split = split_k_shot(task, 100, &mut rng);
        assert_eq!(split.train["l0"].len(), 100);
        assert_eq!(split.test.len(), 50);
    }

    #[test]
    fn oversized_k_degrades_to_leave_one_out_with_warning() {
        let c = corpus(1, 1, 4);
        let task = c.task("t0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let split = split_k_shot(task, 10, &mut rng);
        assert_eq!(split.train["l0"].len(), 3);
        assert_eq!(split.test.len(), 1);
        assert_eq!(split.warnings.len(), 1);
    }

    #[test]
    fn task_sampling_is_uniform_within_three_sigma() {
        let c = corpus(8, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let n = 10_000;
        for _ in 0..n {
            let ep = sample_episode(&c, 1, 2, &mut rng).unwrap();
            *counts.entry(ep.id_task).or_default() += 1;
        }
        let p = 1.0 / 8.0;
        let expected = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (task, count) in counts {
            let dev = (count as f64 - expected).abs();
            assert!(dev <= 3.0 * sigma, "task {task}: count {count}, dev {dev:.1} > 3sigma {:.1}", 3.0 * sigma);
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(k in 1usize..12, per_label in 1usize..15, seed in 0u64..200) {
            let c = corpus(1, 3, per_label);
            let task = c.task("t0").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let split = split_k_shot(task, k, &mut rng);

            let mut reassembled: Vec<String> = split
                .train
                .values()
                .flatten()
                .chain(split.test.iter())
                .map(|e| e.raw_text.clone())
                .collect();
            reassembled.sort_unstable();
            let mut original: Vec<String> = task
                .values()
                .flatten()
                .map(|e| e.raw_text.clone())
                .collect();
            original.sort_unstable();
            prop_assert_eq!(reassembled, original);

            for (label, train) in &split.train {
                for e in train {
                    prop_assert!(split.test.iter().all(|t| t.raw_text != e.raw_text),
                        "train/test overlap in label {}", label);
                }
            }
        }
    }
}
