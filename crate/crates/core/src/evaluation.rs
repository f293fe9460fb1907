//! Inference and metrics: FAR, FRR, EER, CER, and Combined-CER.
//!
//! Deployment builds one prototype per label from the target task's small
//! training set, classifies queries by maximum similarity, and rejects as
//! OOD anything whose confidence falls below a threshold. The threshold is
//! chosen where the false acceptance rate (accepted OOD) and false
//! rejection rate (rejected ID) meet.
//!
//! Finite samples rarely admit FAR == FRR exactly, so the threshold
//! minimizing |FAR - FRR| is selected and the mean of the two rates
//! reported, with ties between thresholds resolved toward the larger one.
//! Acceptance is closed on the accept side: a confidence equal to the
//! threshold is accepted.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::diffmath::{cosine_value, DiffError, Tensor};
use crate::encoder::{encode_value, EncoderParams, TokenizedExample};
use crate::episodic::{
    build_eval_set, split_k_shot, OodSource, SampleError, TaskCorpus, TaskExamples,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {side} confidence list")]
    EmptyConfidences { side: &'static str },

    #[error("no ID examples to score")]
    NoIdExamples,

    #[error("prototype table has no labels")]
    EmptyTable,

    #[error("label `{label}` has no training examples")]
    EmptyLabel { label: String },

    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// The deployable model for one task: frozen encoder parameters plus one
/// prototype per label, built from every training instance of that label.
#[derive(Debug, Clone)]
pub struct PrototypeTable {
    params: EncoderParams,
    entries: Vec<(String, Tensor)>,
}

impl PrototypeTable {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    pub fn prototype(&self, label: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, p)| p)
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn n_labels(&self) -> usize {
        self.entries.len()
    }
}

/// Averages the encodings of every training instance per label. Labels are
/// stored in sorted order, and the fold order over instances is fixed, so
/// rebuilding from the same inputs is bitwise identical.
pub fn build_prototype_table(
    d_train: &TaskExamples,
    params: &EncoderParams,
) -> Result<PrototypeTable, EvalError> {
    if d_train.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let mut entries = Vec::with_capacity(d_train.len());
    for (label, examples) in d_train {
        if examples.is_empty() {
            return Err(EvalError::EmptyLabel {
                label: label.clone(),
            });
        }
        let mut mean = vec![0.0; params.config.out_dim()];
        for ex in examples {
            let enc = encode_value(&ex.tokens, params)?;
            for (m, x) in mean.iter_mut().zip(enc.data()) {
                *m += x;
            }
        }
        let inv = 1.0 / examples.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        entries.push((label.clone(), Tensor::vector(&mean)));
    }
    Ok(PrototypeTable {
        params: params.clone(),
        entries,
    })
}

/// Whether a scored example was truly in-domain (with its label) or OOD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Truth {
    Id(String),
    Ood,
}

/// One classified query.
#[derive(Debug, Clone)]
pub struct ScoredExample {
    pub predicted: String,
    /// Maximum similarity over labels, in `[0, 1]`.
    pub confidence: f64,
    pub truth: Truth,
}

/// Predicts `argmax_l F(encode(x), proto_l)` with ties broken toward the
/// lexicographically smaller label. The truth field is filled from the
/// example's own label; callers scoring OOD queries overwrite it.
pub fn classify(
    example: &TokenizedExample,
    table: &PrototypeTable,
) -> Result<ScoredExample, EvalError> {
    if table.entries.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let enc = encode_value(&example.tokens, &table.params)?;
    let mut best: Option<(&str, f64)> = None;
    for (label, proto) in &table.entries {
        let f = (cosine_value(enc.data(), proto.data())? + 1.0) / 2.0;
        match best {
            Some((_, top)) if f <= top => {}
            _ => best = Some((label, f)),
        }
    }
    let (label, confidence) = best.expect("non-empty table");
    Ok(ScoredExample {
        predicted: label.to_string(),
        confidence,
        truth: Truth::Id(example.label.clone()),
    })
}

/// One point of the FAR/FRR trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// The equal error rate estimate and the curve it was read from.
#[derive(Debug, Clone)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    /// FAR/FRR at every candidate threshold, in ascending threshold order
    /// with -inf and +inf sentinels at the ends.
    pub curve: Vec<CurvePoint>,
}

/// Estimates the equal error rate from ID and OOD confidence samples.
///
/// Candidate thresholds are every distinct observed confidence plus the
/// two infinite sentinels. At each threshold `t`, FAR is the fraction of
/// OOD confidences `>= t` and FRR the fraction of ID confidences `< t`.
/// The reported threshold minimizes `|FAR - FRR|` (largest such threshold
/// on ties), and the EER is the mean of the two rates there.
pub fn eer(id_confidences: &[f64], ood_confidences: &[f64]) -> Result<EerResult, EvalError> {
    if id_confidences.is_empty() {
        return Err(EvalError::EmptyConfidences { side: "ID" });
    }
    if ood_confidences.is_empty() {
        return Err(EvalError::EmptyConfidences { side: "OOD" });
    }
    let mut id_sorted = id_confidences.to_vec();
    id_sorted.sort_unstable_by(f64::total_cmp);
    let mut ood_sorted = ood_confidences.to_vec();
    ood_sorted.sort_unstable_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = Vec::with_capacity(id_sorted.len() + ood_sorted.len() + 2);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.extend_from_slice(&id_sorted);
    thresholds.extend_from_slice(&ood_sorted);
    thresholds.push(f64::INFINITY);
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();

    // count of elements < t via partition point in a sorted slice
    let below = |sorted: &[f64], t: f64| -> usize { sorted.partition_point(|&x| x < t) };

    let mut curve = Vec::with_capacity(thresholds.len());
    let mut best: Option<CurvePoint> = None;
    for &t in &thresholds {
        let far = (ood_sorted.len() - below(&ood_sorted, t)) as f64 / ood_sorted.len() as f64;
        let frr = below(&id_sorted, t) as f64 / id_sorted.len() as f64;
        let point = CurvePoint {
            threshold: t,
            far,
            frr,
        };
        curve.push(point);
        let better = match best {
            None => true,
            // thresholds ascend, so <= keeps the largest minimizer
            Some(b) => (far - frr).abs() <= (b.far - b.frr).abs(),
        };
        if better {
            best = Some(point);
        }
    }
    let best = best.expect("at least the sentinels exist");
    Ok(EerResult {
        eer: (best.far + best.frr) / 2.0,
        threshold: best.threshold,
        curve,
    })
}

/// Fraction of ID examples whose predicted label differs from the truth,
/// ignoring any rejection threshold. OOD entries in the slice are skipped.
pub fn cer(scored: &[ScoredExample]) -> Result<f64, EvalError> {
    let mut total = 0usize;
    let mut wrong = 0usize;
    for s in scored {
        if let Truth::Id(label) = &s.truth {
            total += 1;
            if *label != s.predicted {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::NoIdExamples);
    }
    Ok(wrong as f64 / total as f64)
}

/// Fraction of ID examples that are rejected by the threshold or
/// misclassified; an example failing both ways still counts once.
pub fn combined_cer(scored: &[ScoredExample], threshold: f64) -> Result<f64, EvalError> {
    let mut total = 0usize;
    let mut bad = 0usize;
    for s in scored {
        if let Truth::Id(label) = &s.truth {
            total += 1;
            if s.confidence < threshold || *label != s.predicted {
                bad += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::NoIdExamples);
    }
    Ok(bad as f64 / total as f64)
}

/// All metrics for one meta-test task.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub far_frr_curve: Vec<CurvePoint>,
    pub cer: f64,
    pub combined_cer: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Scores both sides of an evaluation set against a prototype table.
pub fn score_eval_set(
    set_id: &[TokenizedExample],
    set_ood: &[TokenizedExample],
    table: &PrototypeTable,
) -> Result<Vec<ScoredExample>, EvalError> {
    let mut scored = Vec::with_capacity(set_id.len() + set_ood.len());
    for ex in set_id {
        scored.push(classify(ex, table)?);
    }
    for ex in set_ood {
        let mut s = classify(ex, table)?;
        s.truth = Truth::Ood;
        scored.push(s);
    }
    Ok(scored)
}

/// Runs the full protocol for one task: K-shot split, eval-set assembly,
/// prototype table, scoring, and metrics.
pub fn evaluate_task<R: Rng>(
    corpus: &TaskCorpus,
    task_id: &str,
    params: &EncoderParams,
    k_shot: usize,
    ood: OodSource<'_>,
    rng: &mut R,
) -> Result<(EvalReport, Vec<String>), EvalError> {
    let task = corpus
        .task(task_id)
        .ok_or_else(|| SampleError::UnknownTask {
            split: corpus.split().to_string(),
            task: task_id.to_string(),
        })?;
    let split = split_k_shot(task, k_shot, rng);
    let set = build_eval_set(corpus, task_id, &split.test, ood, rng)?;
    let table = build_prototype_table(&split.train, params)?;
    let scored = score_eval_set(&set.id_examples, &set.ood_examples, &table)?;

    let id_conf: Vec<f64> = scored
        .iter()
        .filter(|s| matches!(s.truth, Truth::Id(_)))
        .map(|s| s.confidence)
        .collect();
    let ood_conf: Vec<f64> = scored
        .iter()
        .filter(|s| s.truth == Truth::Ood)
        .map(|s| s.confidence)
        .collect();
    let eer_result = eer(&id_conf, &ood_conf)?;
    let report = EvalReport {
        eer: eer_result.eer,
        eer_threshold: eer_result.threshold,
        cer: cer(&scored)?,
        combined_cer: combined_cer(&scored, eer_result.threshold)?,
        far_frr_curve: eer_result.curve,
        n_id: id_conf.len(),
        n_ood: ood_conf.len(),
    };
    Ok((report, split.warnings))
}

/// Per-task reports plus their arithmetic mean.
#[derive(Debug, Clone)]
pub struct CorpusEval {
    pub per_task: BTreeMap<String, EvalReport>,
    pub mean: MeanMetrics,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMetrics {
    pub eer: f64,
    pub cer: f64,
    pub combined_cer: f64,
}

/// Evaluates every task of a corpus with a fresh deterministic RNG stream
/// per task, derived from `seed` and the task's position, so adding a task
/// does not perturb the others.
pub fn evaluate_corpus(
    corpus: &TaskCorpus,
    params: &EncoderParams,
    k_shot: usize,
    ood_sets: &BTreeMap<String, Vec<TokenizedExample>>,
    seed: u64,
) -> Result<CorpusEval, EvalError> {
    use rand_chacha::rand_core::SeedableRng;
    let mut per_task = BTreeMap::new();
    let mut warnings = Vec::new();
    for (index, task_id) in corpus.tasks().keys().enumerate() {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64) ^ 0x5eed_0eea);
        let ood = match ood_sets.get(task_id) {
            Some(list) => OodSource::Provided(list),
            None => OodSource::OtherTasks,
        };
        let (report, task_warnings) =
            evaluate_task(corpus, task_id, params, k_shot, ood, &mut rng)?;
        warnings.extend(
            task_warnings
                .into_iter()
                .map(|w| format!("{task_id}: {w}")),
        );
        per_task.insert(task_id.clone(), report);
    }
    if per_task.is_empty() {
        return Err(EvalError::NoIdExamples);
    }
    let n = per_task.len() as f64;
    let mean = MeanMetrics {
        eer: per_task.values().map(|r| r.eer).sum::<f64>() / n,
        cer: per_task.values().map(|r| r.cer).sum::<f64>() / n,
        combined_cer: per_task.values().map(|r| r.combined_cer).sum::<f64>() / n,
    };
    Ok(CorpusEval {
        per_task,
        mean,
        warnings,
    })
}

/// CSV with one row per task plus a trailing `mean` row:
/// `task,eer,eer_threshold,cer,combined_cer,n_id,n_ood`.
pub fn reports_csv(per_task: &BTreeMap<String, EvalReport>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "eer", "eer_threshold", "cer", "combined_cer", "n_id", "n_ood"])
        .expect("in-memory write");
    for (task, r) in per_task {
        w.write_record([
            task.as_str(),
            &r.eer.to_string(),
            &r.eer_threshold.to_string(),
            &r.cer.to_string(),
            &r.combined_cer.to_string(),
            &r.n_id.to_string(),
            &r.n_ood.to_string(),
        ])
        .expect("in-memory write");
    }
    let n = per_task.len().max(1) as f64;
    let mean = |f: fn(&EvalReport) -> f64| -> f64 { per_task.values().map(f).sum::<f64>() / n };
    w.write_record([
        "mean",
        &mean(|r| r.eer).to_string(),
        &mean(|r| r.eer_threshold).to_string(),
        &mean(|r| r.cer).to_string(),
        &mean(|r| r.combined_cer).to_string(),
        &mean(|r| r.n_id as f64).to_string(),
        &mean(|r| r.n_ood as f64).to_string(),
    ])
    .expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// CSV of one task's FAR/FRR curve: `threshold,far,frr`.
pub fn curve_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "far", "frr"]).expect("in-memory write");
    for p in &report.far_frr_curve {
        w.write_record([
            &p.threshold.to_string(),
            &p.far.to_string(),
            &p.frr.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, Vocabulary};
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(vocab: &Vocabulary, seed: u64) -> EncoderParams {
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            emb_dim: 4,
            n_filters: 6,
            kernel_width: 3,
            projection_dim: None,
        };
        EncoderParams::init(&cfg, seed)
    }

    fn ex(text: &str, label: &str, vocab: &Vocabulary) -> TokenizedExample {
        TokenizedExample::from_text(text, label, vocab, 40)
    }

    #[test]
    fn duplicated_training_examples_collapse_to_one_encoding() {
        let vocab = Vocabulary::build(["red green blue yellow"]);
        let params = tiny_params(&vocab, 1);
        let mut d_train = TaskExamples::new();
        d_train.insert(
            "a".into(),
            vec![ex("red green", "a", &vocab); 5],
        );
        let table = build_prototype_table(&d_train, &params).unwrap();
        let single = encode_value(&ex("red green", "a", &vocab).tokens, &params).unwrap();
        for (p, s) in table.prototype("a").unwrap().data().iter().zip(single.data()) {
            assert!((p - s).abs() < 1e-12);
        }
    }

    #[test]
    fn two_way_table_has_two_prototypes() {
        let vocab = Vocabulary::build(["a b c d e f"]);
        let params = tiny_params(&vocab, 2);
        let mut d_train = TaskExamples::new();
        d_train.insert("neg".into(), vec![ex("a b", "neg", &vocab); 100]);
        d_train.insert("pos".into(), vec![ex("e f", "pos", &vocab); 100]);
        let table = build_prototype_table(&d_train, &params).unwrap();
        assert_eq!(table.n_labels(), 2);
        assert_eq!(table.labels().collect::<Vec<_>>(), vec!["neg", "pos"]);
    }

    #[test]
    fn rebuilding_the_table_is_bitwise_identical() {
        let vocab = Vocabulary::build(["w1 w2 w3 w4 w5"]);
        let params = tiny_params(&vocab, 3);
        let mut d_train = TaskExamples::new();
        d_train.insert("x".into(), vec![ex("w1 w2", "x", &vocab), ex("w3", "x", &vocab)]);
        d_train.insert("y".into(), vec![ex("w4 w5", "y", &vocab)]);
        let a = build_prototype_table(&d_train, &params).unwrap();
        let b = build_prototype_table(&d_train, &params).unwrap();
        for (label, proto) in &a.entries {
            assert_eq!(proto, b.prototype(label).unwrap());
        }
    }

    #[test]
    fn empty_label_is_a_contract_violation() {
        let vocab = Vocabulary::build(["a"]);
        let params = tiny_params(&vocab, 1);
        let mut d_train = TaskExamples::new();
        d_train.insert("bad".into(), vec![]);
        assert!(matches!(
            build_prototype_table(&d_train, &params),
            Err(EvalError::EmptyLabel { .. })
        ));
    }

    #[test]
    fn classify_own_training_example_with_confidence_one() {
        let vocab = Vocabulary::build(["alpha beta gamma delta"]);
        let params = tiny_params(&vocab, 4);
        let mut d_train = TaskExamples::new();
        d_train.insert("a".into(), vec![ex("alpha beta", "a", &vocab)]);
        let table = build_prototype_table(&d_train, &params).unwrap();
        let scored = classify(&ex("alpha beta", "a", &vocab), &table).unwrap();
        assert_eq!(scored.predicted, "a");
        assert!((scored.confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_label_table_always_predicts_it() {
        let vocab = Vocabulary::build(["p q r s t"]);
        let params = tiny_params(&vocab, 5);
        let mut d_train = TaskExamples::new();
        d_train.insert("only".into(), vec![ex("p q", "only", &vocab)]);
        let table = build_prototype_table(&d_train, &params).unwrap();
        for text in ["r s", "t", "p t r"] {
            let scored = classify(&ex(text, "whatever", &vocab), &table).unwrap();
            assert_eq!(scored.predicted, "only");
        }
    }

    #[test]
    fn classify_matches_brute_force_argmax() {
        let vocab = Vocabulary::build(["a b c d e f g h i j"]);
        let params = tiny_params(&vocab, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        use rand::Rng;
        for _ in 0..50 {
            let mut d_train = TaskExamples::new();
            let n_labels = rng.random_range(1..5);
            let words = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
            let sentence = |rng: &mut ChaCha8Rng| {
                (0..rng.random_range(1..5))
                    .map(|_| words[rng.random_range(0..10)])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            for l in 0..n_labels {
                let label = format!("l{l}");
                let examples = (0..rng.random_range(1..4))
                    .map(|_| ex(&sentence(&mut rng), &label, &vocab))
                    .collect();
                d_train.insert(label, examples);
            }
            let table = build_prototype_table(&d_train, &params).unwrap();
            let query = ex(&sentence(&mut rng), "?", &vocab);
            let scored = classify(&query, &table).unwrap();

            // brute force over labels, first max wins in sorted label order
            let enc = encode_value(&query.tokens, &params).unwrap();
            let mut expect: Option<(String, f64)> = None;
            for (label, proto) in &table.entries {
                let f = (cosine_value(enc.data(), proto.data()).unwrap() + 1.0) / 2.0;
                if expect.as_ref().is_none_or(|(_, top)| f > *top) {
                    expect = Some((label.clone(), f));
                }
            }
            let (label, conf) = expect.unwrap();
            assert_eq!(scored.predicted, label);
            assert_eq!(scored.confidence, conf);
        }
    }

    #[test]
    fn classify_is_scale_invariant() {
        let vocab = Vocabulary::build(["a b c d e"]);
        let params = tiny_params(&vocab, 8);
        let mut d_train = TaskExamples::new();
        d_train.insert("x".into(), vec![ex("a b", "x", &vocab)]);
        d_train.insert("y".into(), vec![ex("d e", "y", &vocab)]);
        let mut table = build_prototype_table(&d_train, &params).unwrap();
        let query = ex("a c e", "?", &vocab);
        let before = classify(&query, &table).unwrap();
        for (_, proto) in &mut table.entries {
            for v in proto.data_mut() {
                *v *= 37.5;
            }
        }
        let after = classify(&query, &table).unwrap();
        assert_eq!(before.predicted, after.predicted);
    }

    #[test]
    fn eer_perfect_separation() {
        let r = eer(&[0.9, 0.8, 0.7], &[0.3, 0.2, 0.1]).unwrap();
        assert_eq!(r.eer, 0.0);
        assert_eq!(r.threshold, 0.7);
    }

    #[test]
    fn eer_indistinguishable_is_half() {
        let r = eer(&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eer_empty_side_is_an_error() {
        assert!(matches!(
            eer(&[], &[0.5]),
            Err(EvalError::EmptyConfidences { side: "ID" })
        ));
        assert!(matches!(
            eer(&[0.5], &[]),
            Err(EvalError::EmptyConfidences { side: "OOD" })
        ));
    }

    /// Exhaustive scan over every candidate threshold, kept deliberately
    /// naive: one pass over both lists per threshold.
    fn brute_force_eer(id: &[f64], ood: &[f64]) -> (f64, f64) {
        let mut candidates: Vec<f64> = id
            .iter()
            .chain(ood.iter())
            .cloned()
            .chain([f64::NEG_INFINITY, f64::INFINITY])
            .collect();
        candidates.sort_unstable_by(f64::total_cmp);
        candidates.dedup();
        let mut best: Option<(f64, f64, f64)> = None; // (|gap|, threshold, eer)
        for &t in &candidates {
            let far = ood.iter().filter(|&&c| c >= t).count() as f64 / ood.len() as f64;
            let frr = id.iter().filter(|&&c| c < t).count() as f64 / id.len() as f64;
            let gap = (far - frr).abs();
            let better = match best {
                None => true,
                Some((bg, bt, _)) => gap < bg || (gap == bg && t > bt),
            };
            if better {
                best = Some((gap, t, (far + frr) / 2.0));
            }
        }
        let (_, t, e) = best.unwrap();
        (e, t)
    }

    #[test]
    fn eer_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        use rand::Rng;
        for trial in 0..300 {
            let n_id = rng.random_range(1..=50);
            let n_ood = rng.random_range(1..=50);
            // quantized confidences force plenty of ties
            let q = rng.random_range(2..20) as f64;
            let id: Vec<f64> = (0..n_id).map(|_| (rng.random_range(0..=q as u32) as f64) / q).collect();
            let ood: Vec<f64> = (0..n_ood).map(|_| (rng.random_range(0..=q as u32) as f64) / q).collect();
            let r = eer(&id, &ood).unwrap();
            let (be, bt) = brute_force_eer(&id, &ood);
            assert_eq!(r.eer, be, "trial {trial}");
            assert_eq!(r.threshold, bt, "trial {trial}");
        }
    }

    #[test]
    fn curve_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        use rand::Rng;
        for _ in 0..100 {
            let id: Vec<f64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0.0..1.0)).collect();
            let ood: Vec<f64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0.0..1.0)).collect();
            let r = eer(&id, &ood).unwrap();
            for pair in r.curve.windows(2) {
                assert!(pair[1].far <= pair[0].far, "FAR increased with threshold");
                assert!(pair[1].frr >= pair[0].frr, "FRR decreased with threshold");
            }
        }
    }

    fn scored(confidence: f64, predicted: &str, truth: Truth) -> ScoredExample {
        ScoredExample {
            predicted: predicted.into(),
            confidence,
            truth,
        }
    }

    #[test]
    fn cer_counts_misclassified_id_examples() {
        let all_right = vec![
            scored(0.9, "a", Truth::Id("a".into())),
            scored(0.8, "b", Truth::Id("b".into())),
        ];
        assert_eq!(cer(&all_right).unwrap(), 0.0);
        let one_wrong = vec![
            scored(0.9, "a", Truth::Id("a".into())),
            scored(0.8, "b", Truth::Id("a".into())),
            scored(0.7, "a", Truth::Id("a".into())),
        ];
        assert!((cer(&one_wrong).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn combined_cer_extremes() {
        let s = vec![
            scored(0.9, "a", Truth::Id("a".into())),
            scored(0.8, "b", Truth::Id("b".into())),
        ];
        assert_eq!(combined_cer(&s, 0.0).unwrap(), 0.0);
        assert_eq!(combined_cer(&s, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn mean_row_is_arithmetic_mean_of_task_rows() {
        let mut per_task = BTreeMap::new();
        for (i, name) in ["t1", "t2", "t3"].iter().enumerate() {
            per_task.insert(
                name.to_string(),
                EvalReport {
                    eer: 0.1 * (i + 1) as f64,
                    eer_threshold: 0.5,
                    far_frr_curve: vec![],
                    cer: 0.2,
                    combined_cer: 0.25,
                    n_id: 10,
                    n_ood: 10,
                },
            );
        }
        let csv_text = reports_csv(&per_task);
        let mean_line = csv_text.lines().last().unwrap();
        let fields: Vec<&str> = mean_line.split(',').collect();
        assert_eq!(fields[0], "mean");
        let mean_eer: f64 = fields[1].parse().unwrap();
        assert!((mean_eer - 0.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn combined_cer_dominates_cer(seed in 0u64..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let n = rng.random_range(1..30);
            let labels = ["a", "b", "c"];
            let scored_set: Vec<ScoredExample> = (0..n)
                .map(|_| {
                    scored(
                        rng.random_range(0.0..1.0),
                        labels[rng.random_range(0..3)],
                        Truth::Id(labels[rng.random_range(0..3)].into()),
                    )
                })
                .collect();
            let threshold = rng.random_range(0.0..1.0);
            let c = cer(&scored_set).unwrap();
            let cc = combined_cer(&scored_set, threshold).unwrap();
            prop_assert!(cc >= c);
            prop_assert!((0.0..=1.0).contains(&c) && (0.0..=1.0).contains(&cc));
        }
    }
}
