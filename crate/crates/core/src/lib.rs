//! Few-shot text classification with out-of-domain (OOD) rejection.
//!
//! The model is a prototypical network over a one-layer CNN sentence
//! encoder, meta-trained episodically: each episode pairs an in-domain
//! query with a simulated OOD query drawn from a different task, and the
//! objective combines a softmax classification loss with two hinge losses
//! that push OOD similarity below a margin and ground-truth similarity
//! above one. At inference, label prototypes are averaged from a small
//! support set and queries are accepted or rejected by thresholding the
//! maximum similarity.
//!
//! Crate layout mirrors the pipeline:
//!
//! - [`diffmath`]: flat tensors and a reverse-mode autodiff graph
//! - [`encoder`]: vocabulary, tokenization, word vectors, CNN encoder
//! - [`episodic`]: task corpora, episode sampling, evaluation-set splits
//! - [`protonet`]: prototypes, the similarity score, and the three losses
//! - [`training`]: Adam, the meta-training loop, multi-seed aggregation
//! - [`evaluation`]: classification, FAR/FRR/EER, CER and Combined-CER
//! - [`dataio`]: JSONL corpora, synthetic corpus generation, checkpoints
//! - [`pipeline`]: configuration files and end-to-end run orchestration

pub mod dataio;
pub mod diffmath;
pub mod encoder;
pub mod episodic;
pub mod evaluation;
pub mod pipeline;
pub mod protonet;
pub mod training;

pub use dataio::{Checkpoint, CorpusManifest, SyntheticSpec};
pub use diffmath::{DiffError, Graph, NodeId, Tensor};
pub use encoder::{EncoderConfig, EncoderParams, EncoderSettings, TokenizedExample, Vocabulary};
pub use episodic::{Episode, EvalSet, TaskCorpus};
pub use evaluation::{EvalReport, PrototypeTable, ScoredExample};
pub use pipeline::RunConfig;
pub use protonet::LossConfig;
pub use training::{TrainConfig, TrainOutcome};
