use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    SingleLabel,
    Multilabel,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::SingleLabel => "single-label",
            TaskMode::Multilabel => "multilabel",
        })
    }
}

/// Set of class indices. Single-label sets hold exactly one index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelSet {
    labels: BTreeSet<usize>,
    mode: TaskMode,
}

impl LabelSet {
    pub fn single(label: usize) -> Self {
        Self {
            labels: BTreeSet::from([label]),
            mode: TaskMode::SingleLabel,
        }
    }

    pub fn multi(labels: impl IntoIterator<Item = usize>) -> Self {
        Self {
            labels: labels.into_iter().collect(),
            mode: TaskMode::Multilabel,
        }
    }

    pub fn new(labels: impl IntoIterator<Item = usize>, mode: TaskMode, num_labels: usize) -> Result<Self> {
        let labels: BTreeSet<usize> = labels.into_iter().collect();
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::InvalidLabel {
                label: bad,
                num_labels,
            });
        }
        if mode == TaskMode::SingleLabel && labels.len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "single-label sample needs exactly one label, got {}",
                labels.len()
            )));
        }
        Ok(Self { labels, mode })
    }

    pub fn mode(&self) -> TaskMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.contains(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.labels.iter().copied().collect()
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.labels.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// A whitespace-tokenized text with its labels.
///
/// `tokens` carries the surface words (attack candidates may be outside the
/// vocabulary) and `ids` their vocabulary ids, with out-of-vocabulary words
/// mapped to the unknown id.
#[derive(Clone, Debug, PartialEq)]
pub struct TextSample {
    pub id: String,
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub labels: LabelSet,
    pub raw_text: String,
}

impl TextSample {
    /// Tokenizes `text` on whitespace, truncating to `max_len` tokens.
    pub fn from_text(
        id: impl Into<String>,
        text: &str,
        labels: LabelSet,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let tokens: Vec<String> = text.split_whitespace().take(max_len).map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::EmptySample);
        }
        let ids = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
        Ok(Self {
            id: id.into(),
            tokens,
            ids,
            labels,
            raw_text: text.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Copy with the word at `position` replaced. With `strict_vocab`, a
    /// word outside the vocabulary yields `None`.
    pub fn with_substitution(
        &self,
        position: usize,
        word: &str,
        vocab: &Vocabulary,
        strict_vocab: bool,
    ) -> Option<TextSample> {
        let id = match vocab.id(word) {
            Some(id) => id,
            None if strict_vocab => return None,
            None => Vocabulary::UNK_ID,
        };
        let mut out = self.clone();
        out.tokens[position] = word.to_string();
        out.ids[position] = id;
        out.raw_text = out.tokens.join(" ");
        Some(out)
    }

    pub fn with_labels(&self, labels: LabelSet) -> TextSample {
        TextSample {
            labels,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_label_requires_one_index() {
        assert!(LabelSet::new([0, 1], TaskMode::SingleLabel, 3).is_err());
        assert!(LabelSet::new([], TaskMode::SingleLabel, 3).is_err());
        assert!(LabelSet::new([2], TaskMode::SingleLabel, 3).is_ok());
        assert!(matches!(
            LabelSet::new([3], TaskMode::Multilabel, 3),
            Err(Error::InvalidLabel { label: 3, .. })
        ));
    }

    #[test]
    fn sample_truncates_and_maps_unknowns() {
        let vocab = Vocabulary::build("a b".split(' '), 1);
        let s = TextSample::from_text("x", "a zz b a", LabelSet::single(0), &vocab, 3).unwrap();
        assert_eq!(s.tokens, vec!["a", "zz", "b"]);
        assert_eq!(s.ids, vec![vocab.id("a").unwrap(), Vocabulary::UNK_ID, vocab.id("b").unwrap()]);
        assert!(TextSample::from_text("y", "   ", LabelSet::single(0), &vocab, 3).is_err());
    }

    #[test]
    fn substitution_respects_strict_flag() {
        let vocab = Vocabulary::build("a b".split(' '), 1);
        let s = TextSample::from_text("x", "a b", LabelSet::single(0), &vocab, 8).unwrap();
        assert!(s.with_substitution(0, "new", &vocab, true).is_none());
        let t = s.with_substitution(0, "new", &vocab, false).unwrap();
        assert_eq!(t.ids[0], Vocabulary::UNK_ID);
        assert_eq!(t.text(), "new b");
        assert_eq!(s.text(), "a b");
    }
}
