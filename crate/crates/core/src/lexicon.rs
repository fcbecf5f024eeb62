//! Word lexicon backed by a character trie, and the lexicon-match fraction
//! of a segmentation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{word_ends, Tag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<char, usize>,
    terminal: bool,
}

#[derive(Clone, Debug)]
pub struct Lexicon {
    nodes: Vec<TrieNode>,
    max_len: usize,
    count: usize,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            nodes: vec![TrieNode::default()],
            max_len: 0,
            count: 0,
        }
    }
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Self::new();
        for w in words {
            lex.insert(w.as_ref());
        }
        lex
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::Format(format!("{}: invalid UTF-8: {e}", path.display())))?;
        Ok(Self::parse(&text))
    }

    /// Adds a word; returns false if it was already present or empty.
    pub fn insert(&mut self, word: &str) -> bool {
        if word.is_empty() {
            return false;
        }
        let mut node = 0;
        let mut len = 0;
        for c in word.chars() {
            len += 1;
            node = match self.nodes[node].children.get(&c) {
                Some(&next) => next,
                None => {
                    let next = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(c, next);
                    next
                }
            };
        }
        if self.nodes[node].terminal {
            return false;
        }
        self.nodes[node].terminal = true;
        self.count += 1;
        self.max_len = self.max_len.max(len);
        true
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Length in characters of the longest stored word.
    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn walk<I: IntoIterator<Item = char>>(&self, chars: I) -> Option<usize> {
        let mut node = 0;
        for c in chars {
            node = *self.nodes[node].children.get(&c)?;
        }
        Some(node)
    }

    pub fn contains(&self, word: &str) -> bool {
        !word.is_empty() && self.walk(word.chars()).is_some_and(|n| self.nodes[n].terminal)
    }

    pub fn contains_chars(&self, word: &[char]) -> bool {
        !word.is_empty()
            && self
                .walk(word.iter().copied())
                .is_some_and(|n| self.nodes[n].terminal)
    }

    /// Lengths of all lexicon words that start at `chars[start]`, ascending.
    pub fn matches_at(&self, chars: &[char], start: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut node = 0;
        for (k, c) in chars[start..].iter().enumerate() {
            match self.nodes[node].children.get(c) {
                Some(&next) => node = next,
                None => break,
            }
            if self.nodes[node].terminal {
                out.push(k + 1);
            }
        }
        out
    }

    /// Share of the words in the segmentation `(chars, tags)` that are in the
    /// lexicon. Every word token counts; 0 for an empty sentence.
    pub fn fraction(&self, chars: &[char], tags: &[Tag]) -> Result<f64> {
        if chars.len() != tags.len() {
            return Err(Error::Format(format!(
                "{} characters but {} tags",
                chars.len(),
                tags.len()
            )));
        }
        let mut total = 0usize;
        let mut found = 0usize;
        let mut start = 0;
        for end in word_ends(tags) {
            total += 1;
            if end - start <= self.max_len && self.contains_chars(&chars[start..end]) {
                found += 1;
            }
            start = end;
        }
        Ok(if total == 0 {
            0.0
        } else {
            found as f64 / total as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::words_to_tags;
    use proptest::prelude::*;

    fn seg(words: &[&str]) -> (Vec<char>, Vec<Tag>) {
        let chars = words.iter().flat_map(|w| w.chars()).collect();
        (chars, words_to_tags(words).unwrap())
    }

    #[test]
    fn load_and_query() {
        let lex = Lexicon::parse("特朗普\n电话\n");
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.max_len(), 3);
        assert!(lex.contains("电话"));
        assert!(!lex.contains("电"));
        assert!(!lex.contains(""));
        assert!(!lex.contains("电话机"));
    }

    #[test]
    fn duplicates_blanks_and_comments() {
        let lex = Lexicon::parse("电话\n\n# comment\n电话\n  通  \n");
        assert_eq!(lex.len(), 2);
        assert!(lex.contains("通"));
        assert!(!lex.contains("# comment"));
        assert!(Lexicon::parse("").is_empty());
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Lexicon::load(dir.path().join("missing.txt")),
            Err(Error::Io { .. })
        ));
        let bad = dir.path().join("bad.txt");
        fs::write(&bad, [0xff, 0xfe, b'\n']).unwrap();
        assert!(matches!(Lexicon::load(&bad), Err(Error::Format(_))));
        let empty = dir.path().join("empty.txt");
        fs::write(&empty, "").unwrap();
        assert_eq!(Lexicon::load(&empty).unwrap().len(), 0);
    }

    #[test]
    fn fraction_counts_tokens() {
        let lex = Lexicon::from_words(["习近平", "电话"]);
        let (c, t) = seg(&["习近平", "常", "电话"]);
        assert!((lex.fraction(&c, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(Lexicon::new().fraction(&c, &t).unwrap(), 0.0);
        let all = Lexicon::from_words(["习近平", "常", "电话"]);
        assert_eq!(all.fraction(&c, &t).unwrap(), 1.0);
        // repeated token counted each time
        let (c, t) = seg(&["电话", "电话", "常"]);
        assert!((lex.fraction(&c, &t).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(lex.fraction(&c, &t[..2]).is_err());
    }

    #[test]
    fn prefix_matches() {
        let lex = Lexicon::from_words(["电", "电话", "电话机", "话"]);
        let chars: Vec<char> = "打电话机".chars().collect();
        assert_eq!(lex.matches_at(&chars, 1), [1, 2, 3]);
        assert_eq!(lex.matches_at(&chars, 0), Vec::<usize>::new());
    }

    fn segmentation() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[abc]{1,3}", 1..8)
    }

    proptest! {
        #[test]
        fn fraction_bounded_and_monotone(
            words in segmentation(),
            lex_words in prop::collection::vec("[abc]{1,3}", 0..10),
            extra in "[abc]{1,3}",
        ) {
            let chars: Vec<char> = words.iter().flat_map(|w| w.chars()).collect();
            let tags = words_to_tags(&words).unwrap();
            let mut lex = Lexicon::from_words(&lex_words);
            let before = lex.fraction(&chars, &tags).unwrap();
            prop_assert!((0.0..=1.0).contains(&before));
            lex.insert(&extra);
            prop_assert!(lex.fraction(&chars, &tags).unwrap() >= before);
            // entries longer than the sentence never match
            lex.insert(&"a".repeat(chars.len() + 1));
            let after = lex.fraction(&chars, &tags).unwrap();
            let mut lex2 = Lexicon::from_words(&lex_words);
            lex2.insert(&extra);
            prop_assert_eq!(after, lex2.fraction(&chars, &tags).unwrap());
        }

        #[test]
        fn membership_agrees_with_set(words in prop::collection::vec("[ab]{1,4}", 0..12), probe in "[ab]{0,5}") {
            let lex = Lexicon::from_words(&words);
            let set: std::collections::HashSet<_> = words.iter().cloned().collect();
            prop_assert_eq!(lex.len(), set.len());
            prop_assert_eq!(lex.contains(&probe), set.contains(&probe));
            prop_assert_eq!(lex.max_len(), set.iter().map(|w| w.chars().count()).max().unwrap_or(0));
        }
    }
}
