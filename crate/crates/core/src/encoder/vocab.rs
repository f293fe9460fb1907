use std::collections::HashMap;

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

/// A dense token-to-index map with reserved padding and out-of-vocabulary
/// slots at indices 0 and 1.
///
/// Built from meta-train text only; tokens unseen at build time map to the
/// OOV index at lookup, never to an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from texts, assigning indices in first-seen
    /// order after lowercasing and whitespace splitting.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::empty();
        for text in texts {
            for token in text.to_lowercase().split_whitespace() {
                vocab.add(token);
            }
        }
        vocab
    }

    /// Reconstructs a vocabulary from its word list, excluding the two
    /// reserved tokens. Order must match the original build order.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Self::empty();
        for w in words {
            vocab.add(&w);
        }
        vocab
    }

    fn empty() -> Self {
        let words = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    fn add(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.words.len());
            self.words.push(token.to_string());
        }
    }

    /// Index of a token, or the OOV index when unknown.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::OOV)
    }

    pub const PAD: usize = 0;
    pub const OOV: usize = 1;

    /// Total number of indices, reserved slots included.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved slots are always present
    }

    /// Words beyond the reserved slots, in index order.
    pub fn plain_words(&self) -> &[String] {
        &self.words[2..]
    }
}

/// Lowercase whitespace tokenization into vocabulary indices, truncated to
/// `max_len` tokens. Text that tokenizes to nothing yields a single PAD
/// index rather than an empty sequence.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 1, "max_len must be >= 1");
    let tokens: Vec<usize> = text
        .to_lowercase()
        .split_whitespace()
        .take(max_len)
        .map(|t| vocab.lookup(t))
        .collect();
    if tokens.is_empty() {
        vec![Vocabulary::PAD]
    } else {
        tokens
    }
}

/// A labeled example with its token indices and original text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedExample {
    pub tokens: Vec<usize>,
    pub label: String,
    pub raw_text: String,
}

impl TokenizedExample {
    pub fn from_text(
        text: &str,
        label: impl Into<String>,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Self {
        Self {
            tokens: tokenize(text, vocab, max_len),
            label: label.into(),
            raw_text: text.to_string(),
        }
    }
}
