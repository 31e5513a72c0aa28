//! English stop-word list skipped by the attack loops.
//!
//! The shipped list (`data/stopwords.txt`) is a common list of English
//! function words: pronouns, articles, auxiliaries, conjunctions and
//! prepositions. Negations are on it as well, so attacks never flip "not".

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../data/stopwords.txt");

/// The shipped list.
pub fn default_stopwords() -> BTreeSet<String> {
    parse(SHIPPED)
}

/// One word per line; blank lines and lines starting with `#` are ignored.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&text))
}

fn parse(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_list_has_function_words_only() {
        let s = default_stopwords();
        assert!(s.contains("the") && s.contains("not") && s.contains("and"));
        assert!(!s.contains("good"));
        assert!(s.len() > 100);
    }
}
