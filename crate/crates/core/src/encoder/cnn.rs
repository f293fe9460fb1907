use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{DiffError, Graph, NodeId, Tensor};

use super::vocab::Vocabulary;
use super::wordvec::{WordVecError, WordVectors};

/// Encoder hyperparameters as they appear in configuration files, before
/// the vocabulary size is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub emb_dim: usize,
    pub n_filters: usize,
    pub kernel_width: usize,
    /// Optional trainable projection after mean pooling. Off by default:
    /// the similarity score consumes the pooled filter activations
    /// directly.
    pub projection_dim: Option<usize>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            emb_dim: 100,
            n_filters: 200,
            kernel_width: 3,
            projection_dim: None,
        }
    }
}

impl EncoderSettings {
    pub fn with_vocab(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            emb_dim: self.emb_dim,
            n_filters: self.n_filters,
            kernel_width: self.kernel_width,
            projection_dim: self.projection_dim,
        }
    }
}

/// Fully determined encoder shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub n_filters: usize,
    pub kernel_width: usize,
    pub projection_dim: Option<usize>,
}

impl EncoderConfig {
    /// Dimension of the encoded sentence vector.
    pub fn out_dim(&self) -> usize {
        self.projection_dim.unwrap_or(self.n_filters)
    }
}

const INIT_RANGE: f64 = 0.1;

/// The trainable parameters of the sentence encoder.
///
/// Tensor order is fixed (embedding, filters, bias, then projection weight
/// and bias when present) and shared by [`EncoderParams::tensors`],
/// [`EncoderParams::bind`], and the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub embedding: Tensor,
    pub filters: Tensor,
    pub bias: Tensor,
    pub projection: Option<(Tensor, Tensor)>,
}

impl EncoderParams {
    /// Uniform initialization in `[-0.1, 0.1)`, deterministic per seed.
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Tensor::uniform(
            &[config.vocab_size, config.emb_dim],
            -INIT_RANGE,
            INIT_RANGE,
            &mut rng,
        );
        let filters = Tensor::uniform(
            &[config.n_filters, config.kernel_width, config.emb_dim],
            -INIT_RANGE,
            INIT_RANGE,
            &mut rng,
        );
        let bias = Tensor::uniform(&[config.n_filters], -INIT_RANGE, INIT_RANGE, &mut rng);
        let projection = config.projection_dim.map(|out| {
            (
                Tensor::uniform(&[config.n_filters, out], -INIT_RANGE, INIT_RANGE, &mut rng),
                Tensor::uniform(&[out], -INIT_RANGE, INIT_RANGE, &mut rng),
            )
        });
        Self {
            config: config.clone(),
            embedding,
            filters,
            bias,
            projection,
        }
    }

    /// Like [`EncoderParams::init`], then overwrites the embedding rows of
    /// every in-vocabulary word present in `vectors`. Rows for words
    /// without a pre-trained vector keep their random initialization.
    pub fn init_with_embeddings(
        config: &EncoderConfig,
        seed: u64,
        vocab: &Vocabulary,
        vectors: &WordVectors,
    ) -> Result<Self, WordVecError> {
        if vectors.dim() != config.emb_dim {
            return Err(WordVecError::DimensionMismatch {
                file_dim: vectors.dim(),
                expected: config.emb_dim,
            });
        }
        let mut params = Self::init(config, seed);
        let dim = config.emb_dim;
        for (offset, word) in vocab.plain_words().iter().enumerate() {
            if let Some(v) = vectors.get(word) {
                let row = offset + 2; // reserved slots
                params.embedding.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(v);
            }
        }
        Ok(params)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding, &self.filters, &self.bias];
        if let Some((w, b)) = &self.projection {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding, &mut self.filters, &mut self.bias];
        if let Some((w, b)) = &mut self.projection {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Inserts the parameters as graph leaves, in the fixed tensor order.
    pub fn bind(&self, g: &mut Graph) -> EncoderNodes {
        EncoderNodes {
            embedding: g.leaf(self.embedding.clone()),
            filters: g.leaf(self.filters.clone()),
            bias: g.leaf(self.bias.clone()),
            projection: self
                .projection
                .as_ref()
                .map(|(w, b)| (g.leaf(w.clone()), g.leaf(b.clone()))),
        }
    }
}

/// Graph handles for one binding of [`EncoderParams`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub embedding: NodeId,
    pub filters: NodeId,
    pub bias: NodeId,
    pub projection: Option<(NodeId, NodeId)>,
}

impl EncoderNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.embedding, self.filters, self.bias];
        if let Some((w, b)) = self.projection {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Encodes a token sequence into a differentiable sentence vector:
/// embedding lookup, same-length 1-D convolution, tanh, mean pooling over
/// positions, then the optional projection.
pub fn encode(g: &mut Graph, nodes: &EncoderNodes, tokens: &[usize]) -> Result<NodeId, DiffError> {
    let e = g.embed_gather(nodes.embedding, tokens)?;
    let c = g.conv1d(e, nodes.filters, nodes.bias)?;
    let t = g.tanh(c);
    let pooled = g.mean_rows(t)?;
    match nodes.projection {
        Some((w, b)) => g.linear(pooled, w, b),
        None => Ok(pooled),
    }
}

/// Forward-only encoding with frozen parameters, via a throwaway graph so
/// the arithmetic is identical to the training path.
pub fn encode_value(tokens: &[usize], params: &EncoderParams) -> Result<Tensor, DiffError> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g);
    let id = encode(&mut g, &nodes, tokens)?;
    Ok(g.value(id).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::grad_check;
    use rand::Rng;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 9,
            emb_dim: 4,
            n_filters: 5,
            kernel_width: 3,
            projection_dim: None,
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_params() {
        let cfg = tiny_config();
        let a = EncoderParams::init(&cfg, 11);
        let b = EncoderParams::init(&cfg, 11);
        assert_eq!(a, b);
        let c = EncoderParams::init(&cfg, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_params_encode_to_zero_vector() {
        let cfg = tiny_config();
        let params = EncoderParams {
            config: cfg.clone(),
            embedding: Tensor::zeros(&[cfg.vocab_size, cfg.emb_dim]),
            filters: Tensor::zeros(&[cfg.n_filters, cfg.kernel_width, cfg.emb_dim]),
            bias: Tensor::zeros(&[cfg.n_filters]),
            projection: None,
        };
        let out = encode_value(&[1, 2, 3], &params).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
        assert_eq!(out.shape(), &[cfg.n_filters]);
    }

    #[test]
    fn identical_inputs_encode_identically() {
        let params = EncoderParams::init(&tiny_config(), 3);
        let a = encode_value(&[2, 5, 7, 1], &params).unwrap();
        let b = encode_value(&[2, 5, 7, 1], &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_dim_is_independent_of_sentence_length() {
        let params = EncoderParams::init(&tiny_config(), 3);
        for len in [1usize, 2, 7, 13] {
            let tokens: Vec<usize> = (0..len).map(|i| i % 9).collect();
            let out = encode_value(&tokens, &params).unwrap();
            assert_eq!(out.shape(), &[5], "length {len}");
        }
    }

    #[test]
    fn width_one_kernel_is_order_invariant() {
        let cfg = EncoderConfig {
            kernel_width: 1,
            ..tiny_config()
        };
        let params = EncoderParams::init(&cfg, 21);
        let a = encode_value(&[2, 3, 4, 5, 6], &params).unwrap();
        let b = encode_value(&[6, 4, 2, 5, 3], &params).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn pretrained_rows_overwrite_in_vocab_words_only() {
        let vocab = Vocabulary::build(["red green blue"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        use std::io::Write;
        writeln!(f, "green 1 2 3 4").unwrap();
        writeln!(f, "unrelated 9 9 9 9").unwrap();
        let vectors = crate::encoder::load_word_vectors(f.path()).unwrap();

        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            ..tiny_config()
        };
        let plain = EncoderParams::init(&cfg, 5);
        let loaded = EncoderParams::init_with_embeddings(&cfg, 5, &vocab, &vectors).unwrap();

        let row = vocab.lookup("green");
        assert_eq!(&loaded.embedding.data()[row * 4..(row + 1) * 4], &[1.0, 2.0, 3.0, 4.0]);
        let other = vocab.lookup("red");
        assert_eq!(
            &loaded.embedding.data()[other * 4..(other + 1) * 4],
            &plain.embedding.data()[other * 4..(other + 1) * 4]
        );
    }

    #[test]
    fn pretrained_dimension_mismatch_is_an_error() {
        let vocab = Vocabulary::build(["red"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        use std::io::Write;
        writeln!(f, "red 1 2").unwrap();
        let vectors = crate::encoder::load_word_vectors(f.path()).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            ..tiny_config()
        };
        assert!(matches!(
            EncoderParams::init_with_embeddings(&cfg, 5, &vocab, &vectors),
            Err(WordVecError::DimensionMismatch { file_dim: 2, expected: 4 })
        ));
    }

    #[test]
    fn encoder_is_differentiable_end_to_end() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for (trial, projection_dim) in [None, Some(3)].into_iter().enumerate() {
            let cfg = EncoderConfig {
                vocab_size: 6,
                emb_dim: 3,
                n_filters: 4,
                kernel_width: 3,
                projection_dim,
            };
            let params = EncoderParams::init(&cfg, 40 + trial as u64);
            let tokens: Vec<usize> = (0..5).map(|_| rng.random_range(0..6)).collect();
            let probe: Vec<f64> = (0..cfg.out_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();

            let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            let report = grad_check(
                |g, ids| {
                    let nodes = EncoderNodes {
                        embedding: ids[0],
                        filters: ids[1],
                        bias: ids[2],
                        projection: if ids.len() > 3 { Some((ids[3], ids[4])) } else { None },
                    };
                    let enc = encode(g, &nodes, &tokens)?;
                    let p = g.leaf(Tensor::vector(&probe));
                    g.dot(enc, p)
                },
                &tensors,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "projection {projection_dim:?}: {}", report.max_rel_err);
        }
    }
}
