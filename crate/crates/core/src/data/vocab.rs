use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id map. Ids 0..4 are reserved for padding, unknown and sentence
/// boundaries; every out-of-vocabulary token maps to [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens.into_iter().skip(RESERVED.len()))
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved ids followed by `tokens` in order; duplicates and reserved
    /// names are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.push(r.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    /// Frequency-ranked vocabulary (ties broken lexicographically), limited to
    /// `max_size` entries including the reserved ids, keeping only tokens seen
    /// at least `min_count` times.
    pub fn build<'a, I, S>(
        sentences: I,
        max_size: usize,
        min_count: usize,
    ) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        if max_size < RESERVED.len() {
            return Err(DataError::VocabTooSmall(max_size, RESERVED.len()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for s in sentences {
            for t in s {
                any = true;
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        if !any {
            return Err(DataError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map(String::as_str)
            .unwrap_or(RESERVED[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sents(text: &str) -> Vec<Vec<String>> {
        text.lines()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    fn build(text: &str, max: usize, min: usize) -> Result<Vocab, DataError> {
        let s = sents(text);
        Vocab::build(s.iter().map(|v| v.as_slice()), max, min)
    }

    #[test]
    fn frequency_order() {
        let v = build("a a b", 100, 1).unwrap();
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), 4);
    }

    #[test]
    fn min_count_excludes_rare_tokens() {
        let v = build("a a b", 100, 2).unwrap();
        assert_eq!(v.id("b"), UNK);
        assert!(v.contains("a"));
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = build("c b\nb c", 100, 1).unwrap();
        assert!(v.id("b") < v.id("c"));
    }

    #[test]
    fn max_size_counts_reserved_ids() {
        let v = build("a a a b b c", 6, 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("c"), UNK);
        assert!(matches!(
            build("a", 3, 1),
            Err(DataError::VocabTooSmall(3, 4))
        ));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(build("", 10, 1), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn serde_preserves_ids() {
        let v = build("x y y z z z", 100, 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec("[a-e]{1,3}", 1..30)) {
            let v = Vocab::build(std::iter::once(words.as_slice()), 1000, 1).unwrap();
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids), words.clone());
            // Pure function of its inputs.
            let again = Vocab::build(std::iter::once(words.as_slice()), 1000, 1).unwrap();
            prop_assert_eq!(again, v);
        }
    }
}
