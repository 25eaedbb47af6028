//! Caption tokenization and vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::panoptic::{FINE_GRIP_STUFF, FINE_GRIP_THINGS};
use crate::{Error, Result};

pub const START: usize = 0;
pub const END: usize = 1;
pub const PAD: usize = 2;

const SPECIALS: [&str; 3] = ["<start>", "<end>", "<pad>"];
const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];

/// Lowercased category names that must survive tokenization as single tokens.
pub fn default_lexicon() -> Vec<String> {
    FINE_GRIP_THINGS
        .iter()
        .chain(FINE_GRIP_STUFF.iter())
        .map(|s| s.to_lowercase())
        .collect()
}

/// Tokenizes with the FineGrip class lexicon.
pub fn tokenize(sentence: &str) -> Vec<String> {
    tokenize_with(sentence, &default_lexicon())
}

/// Lowercases, splits on whitespace and strips trailing punctuation (tokens made only
/// of punctuation disappear). A lexicon pass then rejoins class names that were split
/// apart, e.g. `b - 52` becomes `b-52`.
pub fn tokenize_with(sentence: &str, lexicon: &[String]) -> Vec<String> {
    let raw: Vec<String> = sentence
        .split_whitespace()
        .map(|t| t.to_lowercase().trim_end_matches(TRAILING_PUNCT).to_string())
        .filter(|t| !t.is_empty())
        .collect();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let merged = (2..=3).rev().find_map(|k| {
            let joined: String = raw.get(i..i + k)?.concat();
            lexicon.iter().any(|l| *l == joined).then_some((joined, k))
        });
        match merged {
            Some((tok, k)) => {
                out.push(tok);
                i += k;
            }
            None => {
                out.push(raw[i].clone());
                i += 1;
            }
        }
    }
    out
}

/// Token ↔ index mapping. Indices 0, 1, 2 are START, END and PAD.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from words; duplicates and special tokens are dropped and
    /// the remaining words sorted so that the mapping is independent of input order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut body: Vec<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !SPECIALS.contains(&w.as_str()))
            .collect();
        body.sort();
        body.dedup();
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(body).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Number of tokens including the specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.index_of(t.as_ref())
                    .ok_or_else(|| Error::Input(format!("token {:?} not in vocabulary", t.as_ref())))
            })
            .collect()
    }

    /// Maps indices back to words, stopping at END and skipping START/PAD.
    pub fn decode(&self, indices: &[usize]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for &i in indices {
            match i {
                END => break,
                START | PAD => continue,
                _ => out.push(
                    self.token(i)
                        .ok_or_else(|| Error::Input(format!("token index {i} out of range")))?
                        .to_string(),
                ),
            }
        }
        Ok(out)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[..3].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Input("vocabulary must start with <start>, <end>, <pad>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_strips() {
        assert_eq!(
            tokenize("Two B-52 are parked on the Parking-apron."),
            ["two", "b-52", "are", "parked", "on", "the", "parking-apron"]
        );
        assert_eq!(tokenize("one f-16 , near the runway ."), ["one", "f-16", "near", "the", "runway"]);
    }

    #[test]
    fn lexicon_rejoins_split_class_names() {
        assert_eq!(tokenize("three B - 52 here"), ["three", "b-52", "here"]);
        assert_eq!(tokenize("a KC- 135"), ["a", "kc-135"]);
    }

    #[test]
    fn vocabulary_specials_and_roundtrip() {
        let v = Vocabulary::from_words(["zeta", "alpha", "alpha", "<end>"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.index_of("<start>"), Some(START));
        assert_eq!(v.index_of("<end>"), Some(END));
        assert_eq!(v.index_of("<pad>"), Some(PAD));
        let enc = v.encode(&["alpha", "zeta"]).unwrap();
        assert_eq!(v.decode(&[START, enc[0], enc[1], END, enc[0]]).unwrap(), ["alpha", "zeta"]);
        assert!(v.encode(&["missing"]).is_err());
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocabulary>("[\"a\",\"b\",\"c\"]").is_err());
    }
}
