//! Checkpoint persistence.
//!
//! The on-disk format is a little-endian binary blob, stable across
//! releases at a given version:
//!
//! ```text
//! magic "OPCK" | version u32 | fingerprint u64 | step u64 | valid_eer f64
//! | max_len u64
//! | encoder config: vocab_size, emb_dim, n_filters, kernel_width u64 x4,
//!   projection flag u8 (+ projection_dim u64 when 1)
//! | loss config: alpha, beta, gamma, m1, m2 f64 x5
//! | vocabulary: word count u64, then per word byte length u64 + utf-8
//! | tensors: count u64, then per tensor rank u64, dims u64.., values f64..
//! ```
//!
//! The fingerprint hashes the encoder config and tokenizer max_len; loads
//! verify it against the stored config (integrity) and callers verify it
//! against their own resolved config (compatibility). Trailing bytes or a
//! short read surface as corruption, never as a partially loaded model.

use std::io::{Read, Write};
use std::path::Path;

use crate::diffmath::Tensor;
use crate::encoder::{EncoderConfig, EncoderParams, Vocabulary};
use crate::protonet::LossConfig;

use super::DataError;

const MAGIC: [u8; 4] = *b"OPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model snapshot: everything needed to tokenize, encode, and
/// score unseen data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Optimizer step the snapshot was taken at.
    pub step: u64,
    /// Meta-valid EER that selected this snapshot.
    pub valid_eer: f64,
    pub max_len: usize,
    pub loss: LossConfig,
    pub vocab: Vocabulary,
    pub params: EncoderParams,
}

/// FNV-1a over the canonical little-endian encoding of the encoder shape
/// and tokenizer length.
pub fn config_fingerprint(config: &EncoderConfig, max_len: usize) -> u64 {
    let mut bytes = Vec::with_capacity(48);
    for v in [
        config.vocab_size as u64,
        config.emb_dim as u64,
        config.n_filters as u64,
        config.kernel_width as u64,
        config.projection_dim.map_or(u64::MAX, |d| d as u64),
        max_len as u64,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Checkpoint {
    pub fn fingerprint(&self) -> u64 {
        config_fingerprint(&self.params.config, self.max_len)
    }

    /// Fails when the checkpoint was trained under a different encoder
    /// shape or tokenizer length.
    pub fn verify_config(&self, config: &EncoderConfig, max_len: usize) -> Result<(), DataError> {
        let expected = config_fingerprint(config, max_len);
        let found = self.fingerprint();
        if expected != found {
            return Err(DataError::FingerprintMismatch { found, expected });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint().to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.valid_eer.to_le_bytes());
        out.extend_from_slice(&(self.max_len as u64).to_le_bytes());

        let cfg = &self.params.config;
        for v in [cfg.vocab_size, cfg.emb_dim, cfg.n_filters, cfg.kernel_width] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        match cfg.projection_dim {
            Some(d) => {
                out.push(1);
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            None => out.push(0),
        }
        for v in [
            self.loss.alpha,
            self.loss.beta,
            self.loss.gamma,
            self.loss.m1,
            self.loss.m2,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }

        let words = self.vocab.plain_words();
        out.extend_from_slice(&(words.len() as u64).to_le_bytes());
        for w in words {
            out.extend_from_slice(&(w.len() as u64).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
        }

        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(&out).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| DataError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let corrupt = |reason: &str| DataError::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = Reader { bytes: &bytes, pos: 0 };

        if r.take(4).ok_or_else(|| corrupt("missing magic"))? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32().ok_or_else(|| corrupt("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let stored_fingerprint = r.u64().ok_or_else(|| corrupt("missing fingerprint"))?;
        let step = r.u64().ok_or_else(|| corrupt("missing step"))?;
        let valid_eer = r.f64().ok_or_else(|| corrupt("missing valid_eer"))?;
        let max_len = r.u64().ok_or_else(|| corrupt("missing max_len"))? as usize;

        let mut cfg_field = || r.u64().map(|v| v as usize);
        let vocab_size = cfg_field().ok_or_else(|| corrupt("missing vocab_size"))?;
        let emb_dim = cfg_field().ok_or_else(|| corrupt("missing emb_dim"))?;
        let n_filters = cfg_field().ok_or_else(|| corrupt("missing n_filters"))?;
        let kernel_width = cfg_field().ok_or_else(|| corrupt("missing kernel_width"))?;
        let projection_dim = match r.u8().ok_or_else(|| corrupt("missing projection flag"))? {
            0 => None,
            1 => Some(r.u64().ok_or_else(|| corrupt("missing projection_dim"))? as usize),
            _ => return Err(corrupt("invalid projection flag")),
        };
        let config = EncoderConfig {
            vocab_size,
            emb_dim,
            n_filters,
            kernel_width,
            projection_dim,
        };
        if config_fingerprint(&config, max_len) != stored_fingerprint {
            return Err(corrupt("fingerprint does not match stored config"));
        }

        let mut loss_field = || r.f64();
        let loss = LossConfig {
            alpha: loss_field().ok_or_else(|| corrupt("missing alpha"))?,
            beta: loss_field().ok_or_else(|| corrupt("missing beta"))?,
            gamma: loss_field().ok_or_else(|| corrupt("missing gamma"))?,
            m1: loss_field().ok_or_else(|| corrupt("missing m1"))?,
            m2: loss_field().ok_or_else(|| corrupt("missing m2"))?,
        };

        let n_words = r.u64().ok_or_else(|| corrupt("missing word count"))? as usize;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let len = r.u64().ok_or_else(|| corrupt("missing word length"))? as usize;
            let raw = r.take(len).ok_or_else(|| corrupt("truncated word"))?;
            let word = std::str::from_utf8(raw).map_err(|_| corrupt("word is not utf-8"))?;
            words.push(word.to_string());
        }
        let vocab = Vocabulary::from_words(words);
        if vocab.len() != vocab_size {
            return Err(corrupt("vocabulary size does not match config"));
        }

        let n_tensors = r.u64().ok_or_else(|| corrupt("missing tensor count"))? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = r.u64().ok_or_else(|| corrupt("missing tensor rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64().ok_or_else(|| corrupt("missing tensor dim"))? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64().ok_or_else(|| corrupt("truncated tensor data"))?);
            }
            tensors.push(Tensor::new(shape, data).map_err(|_| corrupt("inconsistent tensor"))?);
        }

        let expected_tensors = if projection_dim.is_some() { 5 } else { 3 };
        if tensors.len() != expected_tensors {
            return Err(corrupt("unexpected tensor count"));
        }
        let mut it = tensors.into_iter();
        let embedding = it.next().expect("counted");
        let filters = it.next().expect("counted");
        let bias = it.next().expect("counted");
        let projection = projection_dim.map(|_| {
            let w = it.next().expect("counted");
            let b = it.next().expect("counted");
            (w, b)
        });
        if embedding.shape() != [vocab_size, emb_dim]
            || filters.shape() != [n_filters, kernel_width, emb_dim]
            || bias.shape() != [n_filters]
        {
            return Err(corrupt("tensor shapes do not match config"));
        }
        if let (Some((w, b)), Some(d)) = (&projection, projection_dim) {
            if w.shape() != [n_filters, d] || b.shape() != [d] {
                return Err(corrupt("projection shapes do not match config"));
            }
        }

        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            step,
            valid_eer,
            max_len,
            loss,
            vocab,
            params: EncoderParams {
                config,
                embedding,
                filters,
                bias,
                projection,
            },
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
