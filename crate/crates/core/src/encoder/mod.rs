//! Tokenization, vocabulary, word embeddings, and the CNN sentence encoder.
//!
//! The encoder is a single convolution layer over word embeddings followed
//! by tanh and mean pooling, optionally projected to a smaller output
//! dimension. Encoding with frozen parameters is safe from multiple
//! threads; parameter mutation requires exclusive access.

mod cnn;
mod vocab;
mod wordvec;

pub use cnn::{encode, encode_value, EncoderConfig, EncoderNodes, EncoderParams, EncoderSettings};
pub use vocab::{tokenize, TokenizedExample, Vocabulary, OOV_TOKEN, PAD_TOKEN};
pub use wordvec::{load_word_vectors, WordVecError, WordVectors};
