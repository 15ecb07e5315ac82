//! Word-level tokenizer: lowercased, punctuation stripped, whitespace split.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{IoContext, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

/// Lowercases, drops everything but alphanumerics and whitespace, splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

impl Vocab {
    /// Orders words by descending frequency, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for w in normalize(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(words.into_iter().map(|(w, _)| w))
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !SPECIALS.contains(&w.as_str()) {
                id_to_token.push(w);
            }
        }
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { token_to_id, id_to_token }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.token_to_id.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.token_to_id.contains_key(word)
    }

    /// `[BOS, words..., EOS]`; unknown words map to `UNK`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![BOS];
        ids.extend(normalize(text).iter().map(|w| self.id(w).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    /// Joins word tokens with single spaces, skipping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; the line index is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Self {
        let tokens: Vec<String> = text.lines().skip(SPECIALS.len()).map(str::to_string).collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_text(&fs::read_to_string(path).at(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocab::build(&["a b", "a"]);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        let v = Vocab::build(&["z y", "y z", "c"]);
        assert_eq!(v.token(4), Some("y"));
        assert_eq!(v.token(5), Some("z"));
        assert_eq!(v.token(6), Some("c"));
    }

    #[test]
    fn empty_string_adds_nothing() {
        let v = Vocab::build(&["", "box"]);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn fifty_words_gives_54() {
        let corpus: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        assert_eq!(Vocab::build(&corpus).len(), 54);
    }

    #[test]
    fn encode_edge_cases() {
        let v = Vocab::build(&["the box"]);
        assert_eq!(v.encode(""), vec![BOS, EOS]);
        assert_eq!(v.decode(&v.encode("the box")), "the box");
        assert!(v.encode("the sofa").contains(&UNK));
        assert_eq!(v.decode(&v.encode("The, BOX!")), "the box");
    }

    #[test]
    fn text_file_round_trip() {
        let v = Vocab::build(&["is the chair near the table", "yes"]);
        let back = Vocab::from_text(&v.to_text());
        assert_eq!(v, back);
        assert_eq!(v.to_text().lines().next(), Some("<pad>"));
    }

    proptest! {
        #[test]
        fn round_trip_in_vocab(words in proptest::collection::vec("[a-z]{1,6}", 0..12)) {
            let text = words.join(" ");
            let v = Vocab::build(&[text.clone()]);
            prop_assert_eq!(v.decode(&v.encode(&text)), text);
        }

        #[test]
        fn encode_injective(a in proptest::collection::vec("[a-c]{1,2}", 0..5),
                            b in proptest::collection::vec("[a-c]{1,2}", 0..5)) {
            let (ta, tb) = (a.join(" "), b.join(" "));
            let v = Vocab::build(&[ta.clone(), tb.clone()]);
            if ta != tb {
                prop_assert_ne!(v.encode(&ta), v.encode(&tb));
            }
        }
    }
}
