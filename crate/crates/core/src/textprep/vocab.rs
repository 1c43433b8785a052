use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::PreparedExample;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub const DEFAULT_MAX_SIZE: usize = 50_000;
pub const DEFAULT_MIN_FREQ: usize = 1;

/// Token ↔ id map. Ids 0–3 are the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(extra: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for t in SPECIALS.iter().map(|s| s.to_string()).chain(extra) {
            if !index.contains_key(&t) {
                index.insert(t.clone(), tokens.len());
                tokens.push(t);
            }
        }
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK`] when unseen.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Hex SHA-256 over the id order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens[SPECIALS.len()..].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rest = Vec::<String>::deserialize(d)?;
        Ok(Vocabulary::from_tokens(rest))
    }
}

/// Most frequent first, ties in lexicographic order; `max_size` counts the
/// special tokens.
pub fn build_vocab<I, S>(tokens: I, max_size: usize, min_freq: usize) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in tokens {
        let t = t.as_ref();
        if SPECIALS.contains(&t) {
            continue;
        }
        *counts.entry(t.to_owned()).or_insert(0) += 1;
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size.saturating_sub(SPECIALS.len()));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t))
}

/// The word vocabulary together with the POS and NE tag vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: Vocabulary,
    pub pos: Vocabulary,
    pub ne: Vocabulary,
}

impl Vocabularies {
    /// Words from sources and targets; tags from the feature columns.
    pub fn build(examples: &[PreparedExample], max_size: usize, min_freq: usize) -> Self {
        let words = build_vocab(
            examples.iter().flat_map(|e| e.src.iter().chain(&e.tgt)),
            max_size,
            min_freq,
        );
        let pos = build_vocab(examples.iter().flat_map(|e| &e.pos), usize::MAX, 1);
        let ne = build_vocab(examples.iter().flat_map(|e| &e.ne), usize::MAX, 1);
        Self { words, pos, ne }
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [&self.words, &self.pos, &self.ne] {
            h.update(v.fingerprint().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = build_vocab("a a b".split(' '), 10, 1);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(v.token(PAD), Some("<pad>"));
    }

    #[test]
    fn min_freq_excludes() {
        let v = build_vocab("a a b".split(' '), 10, 2);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn ties_are_lexicographic_and_size_capped() {
        let v = build_vocab("d c b a a".split(' '), 6, 1);
        assert_eq!(v.tokens()[4..], ["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn serde_round_trip_and_fingerprint() {
        let v = build_vocab("x y y z".split(' '), 100, 1);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.fingerprint(), back.fingerprint());
        let other = build_vocab("x y z".split(' '), 100, 1);
        assert_ne!(v.fingerprint(), other.fingerprint());
    }
}
