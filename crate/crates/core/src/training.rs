//! Adam, the episodic meta-training loop, and model selection.
//!
//! One optimizer step consumes a batch of independently sampled episodes;
//! the batch loss is the arithmetic mean of per-episode losses, folded in
//! episode order so training is bitwise reproducible per seed. Every
//! `eval_every` steps (and at the final step) the model is scored on a
//! meta-valid fixture built once per run, and the checkpoint with the
//! lowest meta-valid EER is kept.
//!
//! RNG streams are separated: parameter initialization uses the seed
//! itself, episode sampling and meta-valid fixture construction each use
//! their own derived stream, so adding or removing evaluations never
//! perturbs the episode sequence.

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Checkpoint;
use crate::diffmath::{DiffError, Graph, Tensor};
use crate::encoder::{
    EncoderParams, EncoderSettings, TokenizedExample, Vocabulary, WordVecError, WordVectors,
};
use crate::episodic::{
    build_eval_set, sample_episode, split_k_shot, OodSource, SampleError, TaskCorpus, TaskExamples,
};
use crate::evaluation::{
    build_prototype_table, eer, evaluate_corpus, score_eval_set, CorpusEval, EvalError, Truth,
};
use crate::protonet::{episode_loss, LossConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient (parameter {param})")]
    NonFiniteGrad { param: usize },

    #[error("gradient count {grads} does not match parameter count {params}")]
    GradCount { grads: usize, params: usize },

    #[error("step {step} (episodes {first}..={last}): {source}")]
    AtStep {
        step: u64,
        first: u64,
        last: u64,
        #[source]
        source: Box<TrainError>,
    },

    #[error(transparent)]
    Sample(#[from] SampleError),

    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error(transparent)]
    WordVec(#[from] WordVecError),
}

/// Adam moment estimates plus hyperparameters. Moment tensors mirror the
/// parameter tensors one for one.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        Self {
            m: params.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
///
/// A non-finite gradient fails the whole step before anything mutates.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::GradCount {
            grads: grads.len(),
            params: params.len(),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGrad { param: i });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((pj, &gj), (mj, vj)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mj = state.beta1 * *mj + (1.0 - state.beta1) * gj;
            *vj = state.beta2 * *vj + (1.0 - state.beta2) * gj * gj;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Meta-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer steps; each consumes `batch_episodes` fresh episodes.
    pub steps: u64,
    pub batch_episodes: usize,
    /// Meta-valid evaluation cadence in steps.
    pub eval_every: u64,
    /// Support-set size per label, both for training episodes and the
    /// meta-valid split protocol.
    pub k_shot: usize,
    /// Negative labels sampled per episode, on top of the ground truth.
    pub n_negatives: usize,
    pub lr: f64,
    /// Optional global-norm gradient clip. Off by default.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub loss: LossConfig,
    pub encoder: EncoderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_episodes: 10,
            eval_every: 100,
            k_shot: 20,
            n_negatives: 4,
            lr: 1e-3,
            grad_clip: None,
            seed: 0,
            loss: LossConfig::default(),
            encoder: EncoderSettings::default(),
        }
    }
}

const EPISODE_STREAM: u64 = 0x6570_6973_6f64_6573;
const VALID_STREAM: u64 = 0x7661_6c69_6461_7465;

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("steps", self.steps),
            ("batch_episodes", self.batch_episodes as u64),
            ("eval_every", self.eval_every),
            ("k_shot", self.k_shot as u64),
        ] {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// The stream episodes are sampled from, in batch order.
    pub fn episode_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ EPISODE_STREAM)
    }

    /// The stream the meta-valid fixture is built from.
    pub fn valid_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ VALID_STREAM)
    }
}

/// One training-log row; component losses are batch means and
/// `loss_total` already carries the beta/gamma weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss_in: f64,
    pub loss_ood: f64,
    pub loss_gt: f64,
    pub loss_total: f64,
    /// Present on evaluation steps only.
    pub valid_eer: Option<f64>,
}

/// Renders the training log as CSV with the header
/// `step,loss_in,loss_ood,loss_gt,loss_total,valid_eer`.
pub fn log_csv(rows: &[LogRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss_in", "loss_ood", "loss_gt", "loss_total", "valid_eer"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.loss_in.to_string(),
            r.loss_ood.to_string(),
            r.loss_gt.to_string(),
            r.loss_total.to_string(),
            r.valid_eer.map(|e| e.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the lowest meta-valid EER seen.
    pub best: Checkpoint,
    /// Parameters after the last completed step.
    pub final_params: EncoderParams,
    pub log: Vec<LogRow>,
    /// Set when training aborted on a non-finite loss; the best checkpoint
    /// still reflects the last good parameters.
    pub diverged_at: Option<u64>,
    pub warnings: Vec<String>,
}

/// Per-task meta-valid fixture, frozen for the whole run so evaluations at
/// different steps are comparable.
struct ValidFixture {
    d_train: TaskExamples,
    id: Vec<TokenizedExample>,
    ood: Vec<TokenizedExample>,
}

fn build_valid_fixtures(
    meta_valid: &TaskCorpus,
    k_shot: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<ValidFixture>, Vec<String>), TrainError> {
    let mut fixtures = Vec::with_capacity(meta_valid.n_tasks());
    let mut warnings = Vec::new();
    for (task_id, task) in meta_valid.tasks() {
        let split = split_k_shot(task, k_shot, rng);
        warnings.extend(split.warnings.iter().map(|w| format!("{task_id}: {w}")));
        let set = build_eval_set(meta_valid, task_id, &split.test, OodSource::OtherTasks, rng)?;
        fixtures.push(ValidFixture {
            d_train: split.train,
            id: set.id_examples,
            ood: set.ood_examples,
        });
    }
    Ok((fixtures, warnings))
}

fn valid_eer(fixtures: &[ValidFixture], params: &EncoderParams) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for fixture in fixtures {
        let table = build_prototype_table(&fixture.d_train, params)?;
        let scored = score_eval_set(&fixture.id, &fixture.ood, &table)?;
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
        sum += eer(&id_conf, &ood_conf)?.eer;
    }
    Ok(sum / fixtures.len() as f64)
}

/// Whether a new meta-valid EER improves on the incumbent. Strictly lower
/// wins, so the earliest of tied checkpoints is retained.
fn improves(best: Option<f64>, candidate: f64) -> bool {
    best.is_none_or(|b| candidate < b)
}

/// Argmin over (step, metric) pairs with first-minimal-wins tie breaking;
/// the same rule the training loop applies incrementally.
pub fn select_best_step(evals: &[(u64, f64)]) -> Option<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for &(step, metric) in evals {
        if improves(best.map(|(_, m)| m), metric) {
            best = Some((step, metric));
        }
    }
    best
}

/// Runs episodic meta-training and returns the best checkpoint by
/// meta-valid EER, the final parameters, and the per-step log.
///
/// A non-finite batch loss (or non-finite parameters after an update)
/// aborts the run, retaining the last good state; a non-finite gradient
/// with a finite loss is reported as an error with step context.
pub fn train(
    meta_train: &TaskCorpus,
    meta_valid: &TaskCorpus,
    vocab: &Vocabulary,
    max_len: usize,
    cfg: &TrainConfig,
    pretrained: Option<&WordVectors>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if meta_train.n_tasks() < 2 {
        return Err(SampleError::TooFewTasks {
            split: meta_train.split().to_string(),
            needed: 2,
            found: meta_train.n_tasks(),
        }
        .into());
    }

    let encoder_cfg = cfg.encoder.with_vocab(vocab.len());
    let mut params = match pretrained {
        Some(vectors) => EncoderParams::init_with_embeddings(&encoder_cfg, cfg.seed, vocab, vectors)?,
        None => EncoderParams::init(&encoder_cfg, cfg.seed),
    };
    let mut adam = AdamState::new(&params.tensors(), cfg.lr);
    let mut episode_rng = cfg.episode_rng();
    let (fixtures, mut warnings) =
        build_valid_fixtures(meta_valid, cfg.k_shot, &mut cfg.valid_rng())?;

    let checkpoint = |params: &EncoderParams, step: u64, eer: f64| Checkpoint {
        step,
        valid_eer: eer,
        max_len,
        loss: cfg.loss,
        vocab: vocab.clone(),
        params: params.clone(),
    };

    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let mut diverged_at = None;

    for step in 1..=cfg.steps {
        let at_step = |source: TrainError| TrainError::AtStep {
            step,
            first: (step - 1) * cfg.batch_episodes as u64 + 1,
            last: step * cfg.batch_episodes as u64,
            source: Box::new(source),
        };

        let episodes = (0..cfg.batch_episodes)
            .map(|_| sample_episode(meta_train, cfg.n_negatives, cfg.k_shot, &mut episode_rng))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| at_step(e.into()))?;

        let mut g = Graph::new();
        let nodes = params.bind(&mut g);
        let mut totals = Vec::with_capacity(episodes.len());
        let (mut sum_in, mut sum_ood, mut sum_gt) = (0.0, 0.0, 0.0);
        for episode in &episodes {
            let l = episode_loss(&mut g, &nodes, episode, &cfg.loss)
                .map_err(|e| at_step(e.into()))?;
            totals.push(l.total);
            sum_in += g.scalar_value(l.loss_in);
            sum_ood += g.scalar_value(l.loss_ood);
            sum_gt += g.scalar_value(l.loss_gt);
        }
        let mut acc = totals[0];
        for &t in &totals[1..] {
            acc = g.add(acc, t).map_err(|e| at_step(e.into()))?;
        }
        let inv_batch = 1.0 / episodes.len() as f64;
        let batch_loss = g.scale(acc, inv_batch);
        let loss_total = g.scalar_value(batch_loss);
        let mut row = LogRow {
            step,
            loss_in: sum_in * inv_batch,
            loss_ood: sum_ood * inv_batch,
            loss_gt: sum_gt * inv_batch,
            loss_total,
            valid_eer: None,
        };

        if !loss_total.is_finite() {
            diverged_at = Some(step);
            log.push(row);
            break;
        }

        g.backward(batch_loss).map_err(|e| at_step(e.into()))?;
        let mut grads: Vec<Tensor> = nodes.ids().iter().map(|&id| g.grad(id).clone()).collect();
        drop(g);
        if let Some(limit) = cfg.grad_clip {
            clip_global_norm(&mut grads, limit);
        }

        let before_update = params.clone();
        adam_step(&mut params.tensors_mut(), &grads, &mut adam).map_err(&at_step)?;

        if !params.is_finite() {
            params = before_update;
            diverged_at = Some(step);
            log.push(row);
            break;
        }

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let eer = valid_eer(&fixtures, &params).map_err(&at_step)?;
            row.valid_eer = Some(eer);
            if improves(best.as_ref().map(|b| b.valid_eer), eer) {
                best = Some(checkpoint(&params, step, eer));
            }
        }
        log.push(row);
    }

    let best = match best {
        Some(b) => b,
        // divergence before the first evaluation: score the retained params
        None => {
            let eer = valid_eer(&fixtures, &params)?;
            let step = diverged_at.map_or(0, |s| s.saturating_sub(1));
            checkpoint(&params, step, eer)
        }
    };
    if let Some(step) = diverged_at {
        warnings.push(format!(
            "training diverged at step {step}; kept checkpoint from step {}",
            best.step
        ));
    }
    Ok(TrainOutcome {
        best,
        final_params: params,
        log,
        diverged_at,
        warnings,
    })
}

fn clip_global_norm(grads: &mut [Tensor], limit: f64) {
    let norm_sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum();
    let norm = norm_sq.sqrt();
    if norm > limit {
        let factor = limit / norm;
        for g in grads {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }
}

/// Meta-test metrics of one seed's run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub eer: f64,
    pub cer: f64,
    pub combined_cer: f64,
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> MetricSummary {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone)]
pub struct MultiSeedReport {
    pub per_seed: Vec<SeedMetrics>,
    pub eer: MetricSummary,
    pub cer: MetricSummary,
    pub combined_cer: MetricSummary,
}

/// One seed's artifacts within a multi-seed run.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub eval: CorpusEval,
}

#[derive(Debug)]
pub struct MultiSeedRun {
    pub report: MultiSeedReport,
    pub runs: Vec<SeedRun>,
}

/// Trains once per seed (in parallel, each run fully determined by its
/// seed), evaluates each best checkpoint on meta-test under a shared
/// evaluation seed, and aggregates the metrics.
#[allow(clippy::too_many_arguments)]
pub fn multi_seed_run(
    meta_train: &TaskCorpus,
    meta_valid: &TaskCorpus,
    meta_test: &TaskCorpus,
    vocab: &Vocabulary,
    max_len: usize,
    base: &TrainConfig,
    eval_k: usize,
    eval_seed: u64,
    ood_sets: &BTreeMap<String, Vec<TokenizedExample>>,
    pretrained: Option<&WordVectors>,
    seeds: &[u64],
) -> Result<MultiSeedRun, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("seeds must be non-empty".into()));
    }
    let results: Vec<Result<SeedRun, TrainError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let cfg = TrainConfig {
                        seed,
                        ..base.clone()
                    };
                    let outcome = train(meta_train, meta_valid, vocab, max_len, &cfg, pretrained)?;
                    let eval = evaluate_corpus(
                        meta_test,
                        &outcome.best.params,
                        eval_k,
                        ood_sets,
                        eval_seed,
                    )?;
                    Ok(SeedRun {
                        seed,
                        outcome,
                        eval,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let runs: Vec<SeedRun> = results.into_iter().collect::<Result<_, _>>()?;
    let per_seed: Vec<SeedMetrics> = runs
        .iter()
        .map(|r| SeedMetrics {
            seed: r.seed,
            eer: r.eval.mean.eer,
            cer: r.eval.mean.cer,
            combined_cer: r.eval.mean.combined_cer,
        })
        .collect();
    let report = MultiSeedReport {
        eer: summarize(per_seed.iter().map(|m| m.eer)),
        cer: summarize(per_seed.iter().map(|m| m.cer)),
        combined_cer: summarize(per_seed.iter().map(|m| m.combined_cer)),
        per_seed,
    };
    Ok(MultiSeedRun { report, runs })
}
