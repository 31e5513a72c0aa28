use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";

/// Ordered word inventory with dense ids. Ids 0, 1 and 2 are the padding,
/// unknown-word and mask tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const MASK_ID: usize = 2;

    /// Builds a vocabulary from its word list. The list must begin with the
    /// three special tokens and contain no duplicates.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[0] != PAD || words[1] != UNK || words[2] != MASK {
            return Err(Error::InvalidConfig(
                "vocabulary must start with <pad>, <unk>, <mask>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words, index })
    }

    /// Vocabulary of every token seen at least `min_count` times, most
    /// frequent first, ties alphabetical.
    pub fn build<'a, I>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && ![PAD, UNK, MASK].contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut words: Vec<String> = vec![PAD.into(), UNK.into(), MASK.into()];
        words.extend(ranked.into_iter().map(|(w, _)| w.to_string()));
        Self::from_words(words).expect("special tokens are excluded from the ranked list")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Hex SHA-256 over the newline-joined word list.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for w in &self.words {
            hasher.update(w.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_words(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_invertible() {
        let v = Vocabulary::build("b a b c a b".split(' '), 1);
        assert_eq!(v.words(), &["<pad>", "<unk>", "<mask>", "b", "a", "c"]);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.id(w), Some(i));
            assert_eq!(v.word(i), Some(w.as_str()));
        }
        assert_eq!(v.id_or_unk("zzz"), Vocabulary::UNK_ID);
    }

    #[test]
    fn min_count_filters_rare_words() {
        let v = Vocabulary::build("x x y".split(' '), 2);
        assert!(v.contains("x"));
        assert!(!v.contains("y"));
    }

    #[test]
    fn duplicate_words_rejected() {
        let words = vec![PAD, UNK, MASK, "a", "a"].into_iter().map(String::from).collect();
        assert!(Vocabulary::from_words(words).is_err());
    }

    #[test]
    fn hash_depends_on_order() {
        let a = Vocabulary::build("a b b".split(' '), 1);
        let b = Vocabulary::build("a a b".split(' '), 1);
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build("one two two three".split(' '), 1);
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }
}
