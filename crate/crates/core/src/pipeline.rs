//! Run configuration and end-to-end orchestration.
//!
//! Every run resolves its configuration once (file, then overrides), writes
//! the resolved snapshot to `config.resolved.toml` in the output directory,
//! and produces stable-ordered artifacts: tasks sorted, seeds sorted, and
//! floating-point values rendered with shortest round-trip formatting, so
//! re-running from a snapshot reproduces every output byte for byte.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{
    generate_synthetic, load_corpora, load_corpora_with_vocab, load_manifest, Checkpoint,
    LoadedCorpora, SyntheticSpec,
};
use crate::encoder::EncoderSettings;
use crate::evaluation::{curve_csv, evaluate_corpus, reports_csv, MeanMetrics};
use crate::protonet::LossConfig;
use crate::training::{log_csv, multi_seed_run, train, TrainConfig};

/// Whether a failure is the caller's configuration or a runtime fault;
/// they exit with different codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineErrorKind {
    Config,
    Runtime,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct PipelineError {
    message: String,
    kind: PipelineErrorKind,
}

impl PipelineError {
    pub fn config(e: impl Display) -> Self {
        Self {
            message: e.to_string(),
            kind: PipelineErrorKind::Config,
        }
    }

    pub fn runtime(e: impl Display) -> Self {
        Self {
            message: e.to_string(),
            kind: PipelineErrorKind::Runtime,
        }
    }

    pub fn kind(&self) -> PipelineErrorKind {
        self.kind
    }

    /// 1 for usage and configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            PipelineErrorKind::Config => 1,
            PipelineErrorKind::Runtime => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Training-loop settings as they appear in the `[train]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_episodes: usize,
    pub eval_every: u64,
    pub k_shot: usize,
    pub n_negatives: usize,
    pub lr: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            batch_episodes: d.batch_episodes,
            eval_every: d.eval_every,
            k_shot: d.k_shot,
            n_negatives: d.n_negatives,
            lr: d.lr,
            grad_clip: d.grad_clip,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_eval_seed() -> u64 {
    1_000_003
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One run's declarative configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus manifest path; relative paths resolve against the working
    /// directory.
    pub manifest: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seed of the meta-test evaluation protocol (splits and OOD draws),
    /// shared across seeds and sweep points so results stay comparable.
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    /// Meta-test K; defaults to the training `k_shot`.
    #[serde(default)]
    pub eval_k: Option<usize>,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSettings,
}

impl RunConfig {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            batch_episodes: self.train.batch_episodes,
            eval_every: self.train.eval_every,
            k_shot: self.train.k_shot,
            n_negatives: self.train.n_negatives,
            lr: self.train.lr,
            grad_clip: self.train.grad_clip,
            seed,
            loss: self.loss,
            encoder: self.encoder.clone(),
        }
    }

    pub fn eval_k(&self) -> usize {
        self.eval_k.unwrap_or(self.train.k_shot)
    }

    /// Seeds, sorted and deduplicated, as every run consumes them.
    pub fn sorted_seeds(&self) -> Vec<u64> {
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
    }
}

/// Command-line overrides; any set field wins over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub eval_seed: Option<u64>,
    pub eval_k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub k_shot: Option<usize>,
    pub n_negatives: Option<usize>,
    pub lr: Option<f64>,
    pub steps: Option<u64>,
    pub batch_episodes: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:expr, $target:expr) => {
                if let Some(v) = &$field {
                    $target = v.clone();
                }
            };
        }
        set!(self.out_dir, cfg.out_dir);
        set!(self.seeds, cfg.seeds);
        set!(self.eval_seed, cfg.eval_seed);
        if self.eval_k.is_some() {
            cfg.eval_k = self.eval_k;
        }
        set!(self.alpha, cfg.loss.alpha);
        set!(self.beta, cfg.loss.beta);
        set!(self.gamma, cfg.loss.gamma);
        set!(self.m1, cfg.loss.m1);
        set!(self.m2, cfg.loss.m2);
        set!(self.k_shot, cfg.train.k_shot);
        set!(self.n_negatives, cfg.train.n_negatives);
        set!(self.lr, cfg.train.lr);
        set!(self.steps, cfg.train.steps);
        set!(self.batch_episodes, cfg.train.batch_episodes);
    }
}

/// Parses a run config file and applies overrides. The manifest path is
/// canonicalized so resolved snapshots are location independent.
pub fn load_run_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| PipelineError::config(format!("invalid config {}: {e}", path.display())))?;
    overrides.apply(&mut cfg);
    cfg.loss.validate().map_err(PipelineError::config)?;
    if cfg.seeds.is_empty() {
        return Err(PipelineError::config("seeds must be non-empty"));
    }
    cfg.manifest = cfg
        .manifest
        .canonicalize()
        .map_err(|e| PipelineError::config(format!("manifest {}: {e}", cfg.manifest.display())))?;
    Ok(cfg)
}

/// What produced a snapshot, recorded as comments so the file itself
/// stays a valid run config.
#[derive(Debug, Clone, Copy)]
struct RunDetails<'a> {
    command: &'a str,
    betas: Option<&'a [f64]>,
    ks: Option<&'a [usize]>,
    checkpoint: Option<&'a Path>,
}

/// Renders the resolved snapshot: a loadable `RunConfig` in TOML, headed
/// by comments naming the command and its arguments. Re-running the same
/// command with this file as `--config` reproduces the run.
fn snapshot_text(cfg: &RunConfig, details: &RunDetails<'_>) -> Result<String> {
    let mut text = format!("# command: {}\n", details.command);
    if let Some(betas) = details.betas {
        let list: Vec<String> = betas.iter().map(f64::to_string).collect();
        text.push_str(&format!("# betas: {}\n", list.join(",")));
    }
    if let Some(ks) = details.ks {
        let list: Vec<String> = ks.iter().map(usize::to_string).collect();
        text.push_str(&format!("# ks: {}\n", list.join(",")));
    }
    if let Some(checkpoint) = details.checkpoint {
        text.push_str(&format!("# checkpoint: {}\n", checkpoint.display()));
    }
    let body = toml::to_string_pretty(cfg)
        .map_err(|e| PipelineError::runtime(format!("snapshot serialization: {e}")))?;
    text.push_str(&body);
    Ok(text)
}

fn write_snapshot(cfg: &RunConfig, details: &RunDetails<'_>) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| PipelineError::runtime(format!("{}: {e}", cfg.out_dir.display())))?;
    let path = cfg.out_dir.join("config.resolved.toml");
    write_text(&path, &snapshot_text(cfg, details)?)?;
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| PipelineError::runtime(format!("{}: {e}", path.display())))
}

fn load_inputs(cfg: &RunConfig) -> Result<LoadedCorpora> {
    let manifest = load_manifest(&cfg.manifest).map_err(PipelineError::config)?;
    load_corpora(&manifest).map_err(PipelineError::config)
}

/// Artifacts of one trained seed.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub best_step: u64,
    pub best_valid_eer: f64,
    pub diverged_at: Option<u64>,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub per_seed: Vec<SeedArtifacts>,
    pub warnings: Vec<String>,
}

/// Trains one model per seed and writes, per seed, a checkpoint and a
/// training-log CSV under `seed_<n>/`, plus the resolved-config snapshot.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let data = load_inputs(cfg)?;
    for train_cfg in cfg.sorted_seeds().iter().map(|&s| cfg.to_train_config(s)) {
        train_cfg.validate().map_err(PipelineError::config)?;
    }
    write_snapshot(
        cfg,
        &RunDetails {
            command: "train",
            betas: None,
            ks: None,
            checkpoint: None,
        },
    )?;

    let seeds = cfg.sorted_seeds();
    let results: Vec<std::result::Result<_, crate::training::TrainError>> =
        std::thread::scope(|scope| {
            let data = &data;
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    scope.spawn(move || {
                        train(
                            &data.meta_train,
                            &data.meta_valid,
                            &data.vocab,
                            data.max_len,
                            &cfg.to_train_config(seed),
                            data.word_vectors.as_ref(),
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        });

    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut warnings = Vec::new();
    for (&seed, result) in seeds.iter().zip(results) {
        let outcome = result.map_err(PipelineError::runtime)?;
        let dir = cfg.out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| PipelineError::runtime(format!("{}: {e}", dir.display())))?;
        let checkpoint_path = dir.join("checkpoint.bin");
        outcome
            .best
            .save(&checkpoint_path)
            .map_err(PipelineError::runtime)?;
        let log_path = dir.join("train_log.csv");
        write_text(&log_path, &log_csv(&outcome.log))?;
        warnings.extend(outcome.warnings.iter().map(|w| format!("seed {seed}: {w}")));
        per_seed.push(SeedArtifacts {
            seed,
            checkpoint_path,
            log_path,
            best_step: outcome.best.step,
            best_valid_eer: outcome.best.valid_eer,
            diverged_at: outcome.diverged_at,
        });
    }
    Ok(TrainSummary {
        out_dir: cfg.out_dir.clone(),
        per_seed,
        warnings,
    })
}

#[derive(Debug)]
pub struct EvalSummary {
    pub report_path: PathBuf,
    pub curves_dir: PathBuf,
    pub mean: MeanMetrics,
    pub warnings: Vec<String>,
}

/// Evaluates a checkpoint on the manifest's meta-test split, writing
/// `eval_report.csv` (per task plus a mean row) and one FAR/FRR curve CSV
/// per task under `curves/`.
pub fn run_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<EvalSummary> {
    let checkpoint = Checkpoint::load(checkpoint_path).map_err(PipelineError::config)?;
    let manifest = load_manifest(&cfg.manifest).map_err(PipelineError::config)?;

    // the configured encoder shape must match what the checkpoint was
    // trained with; tokenization must match too
    let expected = cfg.encoder.with_vocab(checkpoint.params.config.vocab_size);
    checkpoint
        .verify_config(&expected, manifest.tokenizer.max_len)
        .map_err(PipelineError::config)?;

    let data =
        load_corpora_with_vocab(&manifest, &checkpoint.vocab).map_err(PipelineError::config)?;
    write_snapshot(
        cfg,
        &RunDetails {
            command: "eval",
            betas: None,
            ks: None,
            checkpoint: Some(checkpoint_path),
        },
    )?;

    let eval = evaluate_corpus(
        &data.meta_test,
        &checkpoint.params,
        cfg.eval_k(),
        &data.ood_sets,
        cfg.eval_seed,
    )
    .map_err(PipelineError::runtime)?;

    let report_path = cfg.out_dir.join("eval_report.csv");
    write_text(&report_path, &reports_csv(&eval.per_task))?;
    let curves_dir = cfg.out_dir.join("curves");
    std::fs::create_dir_all(&curves_dir)
        .map_err(|e| PipelineError::runtime(format!("{}: {e}", curves_dir.display())))?;
    for (task, report) in &eval.per_task {
        write_text(&curves_dir.join(format!("{task}.csv")), &curve_csv(report))?;
    }
    Ok(EvalSummary {
        report_path,
        curves_dir,
        mean: eval.mean,
        warnings: eval.warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub eer: f64,
    pub cer: f64,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub csv_path: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// One full train-and-evaluate cycle per beta value, sharing seeds and the
/// evaluation protocol. Emits `sweep_beta.csv` with header `beta,eer,cer`;
/// rows keep the input order, including duplicates.
pub fn run_sweep_beta(cfg: &RunConfig, betas: &[f64]) -> Result<SweepSummary> {
    if betas.is_empty() {
        return Err(PipelineError::config("sweep-beta needs at least one beta value"));
    }
    for &beta in betas {
        if beta < 0.0 {
            return Err(PipelineError::config(format!("beta must be >= 0, got {beta}")));
        }
    }
    let data = load_inputs(cfg)?;
    write_snapshot(
        cfg,
        &RunDetails {
            command: "sweep-beta",
            betas: Some(betas),
            ks: None,
            checkpoint: None,
        },
    )?;

    let seeds = cfg.sorted_seeds();
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut base = cfg.to_train_config(0);
        base.loss.beta = beta;
        let run = multi_seed_run(
            &data.meta_train,
            &data.meta_valid,
            &data.meta_test,
            &data.vocab,
            data.max_len,
            &base,
            cfg.eval_k(),
            cfg.eval_seed,
            &data.ood_sets,
            data.word_vectors.as_ref(),
            &seeds,
        )
        .map_err(PipelineError::runtime)?;
        rows.push(SweepRow {
            beta,
            eer: run.report.eer.mean,
            cer: run.report.cer.mean,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["beta", "eer", "cer"]).expect("in-memory write");
    for r in &rows {
        w.write_record([r.beta.to_string(), r.eer.to_string(), r.cer.to_string()])
            .expect("in-memory write");
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8");
    let csv_path = cfg.out_dir.join("sweep_beta.csv");
    write_text(&csv_path, &text)?;
    Ok(SweepSummary { csv_path, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KshotRow {
    pub k: usize,
    pub proto_eer: f64,
    pub oproto_eer: f64,
}

#[derive(Debug)]
pub struct KshotSummary {
    pub csv_path: PathBuf,
    pub rows: Vec<KshotRow>,
}

/// Trains the full model and its beta = gamma = 0 reduction once per seed,
/// then evaluates both under every requested meta-test K. Emits
/// `kshot.csv` with header `k,proto_eer,oproto_eer`.
pub fn run_kshot(cfg: &RunConfig, ks: &[usize]) -> Result<KshotSummary> {
    if ks.is_empty() {
        return Err(PipelineError::config("kshot needs at least one K value"));
    }
    if ks.contains(&0) {
        return Err(PipelineError::config("K values must be >= 1"));
    }
    let data = load_inputs(cfg)?;
    write_snapshot(
        cfg,
        &RunDetails {
            command: "kshot",
            betas: None,
            ks: Some(ks),
            checkpoint: None,
        },
    )?;

    let seeds = cfg.sorted_seeds();
    let mut variants = Vec::with_capacity(2);
    for proto_baseline in [true, false] {
        let mut base = cfg.to_train_config(0);
        if proto_baseline {
            base.loss.beta = 0.0;
            base.loss.gamma = 0.0;
        }
        let results: Vec<std::result::Result<_, crate::training::TrainError>> =
            std::thread::scope(|scope| {
                let data = &data;
                let base = &base;
                let handles: Vec<_> = seeds
                    .iter()
                    .map(|&seed| {
                        scope.spawn(move || {
                            let cfg_seed = TrainConfig {
                                seed,
                                ..base.clone()
                            };
                            train(
                                &data.meta_train,
                                &data.meta_valid,
                                &data.vocab,
                                data.max_len,
                                &cfg_seed,
                                data.word_vectors.as_ref(),
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training thread panicked"))
                    .collect()
            });
        let outcomes: Vec<_> = results
            .into_iter()
            .collect::<std::result::Result<_, _>>()
            .map_err(PipelineError::runtime)?;
        variants.push(outcomes);
    }
    let (proto_runs, oproto_runs) = (&variants[0], &variants[1]);

    let mean_eer_at = |runs: &[crate::training::TrainOutcome], k: usize| -> Result<f64> {
        let mut sum = 0.0;
        for outcome in runs {
            let eval_seed = cfg.eval_seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let eval = evaluate_corpus(
                &data.meta_test,
                &outcome.best.params,
                k,
                &data.ood_sets,
                eval_seed,
            )
            .map_err(PipelineError::runtime)?;
            sum += eval.mean.eer;
        }
        Ok(sum / runs.len() as f64)
    };

    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        rows.push(KshotRow {
            k,
            proto_eer: mean_eer_at(proto_runs, k)?,
            oproto_eer: mean_eer_at(oproto_runs, k)?,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "proto_eer", "oproto_eer"]).expect("in-memory write");
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.proto_eer.to_string(),
            r.oproto_eer.to_string(),
        ])
        .expect("in-memory write");
    }
    let text = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8");
    let csv_path = cfg.out_dir.join("kshot.csv");
    write_text(&csv_path, &text)?;
    Ok(KshotSummary { csv_path, rows })
}

#[derive(Debug)]
pub struct GenerateSummary {
    pub manifest_path: PathBuf,
    pub n_train_tasks: usize,
    pub n_valid_tasks: usize,
    pub n_test_tasks: usize,
}

/// Generates a synthetic corpus from a spec file into `out_dir`.
pub fn run_generate(spec_path: &Path, out_dir: &Path) -> Result<GenerateSummary> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| {
        PipelineError::config(format!("cannot read spec {}: {e}", spec_path.display()))
    })?;
    let spec: SyntheticSpec = toml::from_str(&text)
        .map_err(|e| PipelineError::config(format!("invalid spec {}: {e}", spec_path.display())))?;
    spec.validate().map_err(PipelineError::config)?;
    generate_synthetic(&spec, out_dir).map_err(PipelineError::runtime)?;
    Ok(GenerateSummary {
        manifest_path: out_dir.join("manifest.toml"),
        n_train_tasks: spec.n_train_tasks,
        n_valid_tasks: spec.n_valid_tasks,
        n_test_tasks: spec.n_test_tasks,
    })
}

/// Convenience for consumers that already have a resolved manifest path.
pub fn load_corpora_for(manifest_path: &Path) -> Result<LoadedCorpora> {
    let manifest = load_manifest(manifest_path).map_err(PipelineError::config)?;
    load_corpora(&manifest).map_err(PipelineError::config)
}

/// Tokenized OOD sets keyed by task, loaded for evaluation runs.
pub type OodSets = BTreeMap<String, Vec<crate::encoder::TokenizedExample>>;
