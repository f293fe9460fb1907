//! Shared fixtures for the criterion benchmarks in `benches/`.

use std::collections::BTreeMap;

use oproto_core::encoder::{EncoderConfig, EncoderParams, TokenizedExample, Vocabulary};
use oproto_core::episodic::{TaskCorpus, TaskExamples};

/// A deterministic corpus of `n_tasks` tasks with `labels` labels of
/// `per_label` synthetic sentences each, over a small shared vocabulary.
pub fn bench_corpus(n_tasks: usize, labels: usize, per_label: usize) -> (TaskCorpus, Vocabulary) {
    let words: Vec<String> = (0..200).map(|i| format!("w{i:03}")).collect();
    let all_text = words.join(" ");
    let vocab = Vocabulary::build([all_text.as_str()]);

    let mut tasks: BTreeMap<String, TaskExamples> = BTreeMap::new();
    for t in 0..n_tasks {
        let mut task = TaskExamples::new();
        for l in 0..labels {
            let label = format!("label_{l}");
            let examples = (0..per_label)
                .map(|e| {
                    let text: Vec<&str> = (0..12)
                        .map(|p| words[(t * 37 + l * 17 + e * 7 + p * 3) % words.len()].as_str())
                        .collect();
                    TokenizedExample::from_text(&text.join(" "), &label, &vocab, 40)
                })
                .collect();
            task.insert(label, examples);
        }
        tasks.insert(format!("task_{t:02}"), task);
    }
    (
        TaskCorpus::from_tasks("meta-train", tasks).expect("valid corpus"),
        vocab,
    )
}

/// Encoder parameters sized like the desk-scale experiments.
pub fn bench_params(vocab: &Vocabulary, emb_dim: usize, n_filters: usize) -> EncoderParams {
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        emb_dim,
        n_filters,
        kernel_width: 3,
        projection_dim: None,
    };
    EncoderParams::init(&config, 7)
}
