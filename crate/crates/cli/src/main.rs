//! `oproto`: train, evaluate, and sweep few-shot OOD-resistant prototype
//! models from the command line.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on
//! runtime failures. The `OPROTO_OUT_DIR` environment variable overrides
//! the config file's output directory; explicit `--out-dir` wins over both.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oproto_core::pipeline::{
    load_run_config, run_eval, run_generate, run_kshot, run_sweep_beta, run_train, Overrides,
    PipelineError, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "oproto",
    version,
    about = "Few-shot text classification with out-of-domain rejection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-task corpus from a spec file
    Generate {
        /// TOML spec of the synthetic corpus
        #[arg(long)]
        spec: PathBuf,
        /// Directory the corpus and its manifest are written to
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Meta-train one model per seed and keep the best checkpoints
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint on the meta-test split
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint produced by `train`
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate once per beta value, sharing seeds
    SweepBeta {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated beta values
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
    },
    /// Evaluate the model and its plain-prototype reduction across K values
    Kshot {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated meta-test K values
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (wins over OPROTO_OUT_DIR and the config file)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Single seed; shorthand for --seeds with one value
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Evaluation protocol seed
    #[arg(long)]
    eval_seed: Option<u64>,
    /// Meta-test K (defaults to the training k-shot)
    #[arg(long)]
    eval_k: Option<usize>,
    /// Similarity re-scaling factor
    #[arg(long)]
    alpha: Option<f64>,
    /// OOD hinge weight
    #[arg(long)]
    beta: Option<f64>,
    /// Ground-truth hinge weight
    #[arg(long)]
    gamma: Option<f64>,
    /// OOD similarity margin
    #[arg(long)]
    m1: Option<f64>,
    /// Ground-truth similarity margin
    #[arg(long)]
    m2: Option<f64>,
    /// Support-set size per label
    #[arg(long)]
    k_shot: Option<usize>,
    /// Negative labels per episode
    #[arg(long)]
    n_negatives: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Optimizer steps
    #[arg(long)]
    steps: Option<u64>,
    /// Episodes per optimizer step
    #[arg(long)]
    batch: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let out_dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os("OPROTO_OUT_DIR").map(PathBuf::from));
        let seeds = self
            .seeds
            .clone()
            .or_else(|| self.seed.map(|s| vec![s]));
        let overrides = Overrides {
            out_dir,
            seeds,
            eval_seed: self.eval_seed,
            eval_k: self.eval_k,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            m1: self.m1,
            m2: self.m2,
            k_shot: self.k_shot,
            n_negatives: self.n_negatives,
            lr: self.lr,
            steps: self.steps,
            batch_episodes: self.batch,
        };
        load_run_config(&self.config, &overrides)
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate { spec, out_dir } => {
            let summary = run_generate(&spec, &out_dir)?;
            println!(
                "generated {} meta-train / {} meta-valid / {} meta-test tasks",
                summary.n_train_tasks, summary.n_valid_tasks, summary.n_test_tasks
            );
            println!("manifest: {}", summary.manifest_path.display());
        }
        Command::Train { common } => {
            let cfg = common.load()?;
            let summary = run_train(&cfg)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for s in &summary.per_seed {
                let note = match s.diverged_at {
                    Some(step) => format!(" (diverged at step {step})"),
                    None => String::new(),
                };
                println!(
                    "seed {}: best step {} valid EER {:.4}{note} -> {}",
                    s.seed,
                    s.best_step,
                    s.best_valid_eer,
                    s.checkpoint_path.display()
                );
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let summary = run_eval(&cfg, &checkpoint)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "mean EER {:.4}  CER {:.4}  Combined-CER {:.4}",
                summary.mean.eer, summary.mean.cer, summary.mean.combined_cer
            );
            println!("report: {}", summary.report_path.display());
        }
        Command::SweepBeta { common, betas } => {
            let cfg = common.load()?;
            let summary = run_sweep_beta(&cfg, &betas)?;
            for r in &summary.rows {
                println!("beta {}: EER {:.4}  CER {:.4}", r.beta, r.eer, r.cer);
            }
            println!("csv: {}", summary.csv_path.display());
        }
        Command::Kshot { common, ks } => {
            let cfg = common.load()?;
            let summary = run_kshot(&cfg, &ks)?;
            for r in &summary.rows {
                println!(
                    "K={}: proto EER {:.4}  oproto EER {:.4}",
                    r.k, r.proto_eer, r.oproto_eer
                );
            }
            println!("csv: {}", summary.csv_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
