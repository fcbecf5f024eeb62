//! Synthetic segmented corpora: a random word vocabulary over a small
//! character alphabet, Zipf-distributed word choice, and a lexicon holding
//! the most frequent share of the vocabulary.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::corpus::{self, LabeledSentence, UnlabeledSentence};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    /// Probability of word length `i + 1`.
    pub length_probs: Vec<f64>,
    pub alphabet_size: usize,
    /// First code point of the alphabet.
    pub alphabet_start: char,
    pub zipf_exponent: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub coverage: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            length_probs: vec![0.3, 0.4, 0.2, 0.1],
            alphabet_size: 50,
            alphabet_start: '\u{4e00}',
            zipf_exponent: 1.0,
            min_words: 5,
            max_words: 15,
            labeled: 100,
            unlabeled: 2000,
            test: 1000,
            coverage: 0.8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.vocab_size == 0 || self.alphabet_size == 0 {
            return bad("vocabulary and alphabet sizes must be at least 1");
        }
        if self.labeled == 0 || self.unlabeled == 0 || self.test == 0 {
            return bad("corpus sizes must be at least 1");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("sentence length range must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return bad("lexicon coverage must be in [0, 1]");
        }
        if self.length_probs.is_empty()
            || self.length_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || self.length_probs.iter().sum::<f64>() <= 0.0
        {
            return bad("word-length probabilities must be nonnegative with a positive sum");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("Zipf exponent must be finite and nonnegative");
        }
        let last = self.alphabet_start as u32 + self.alphabet_size as u32 - 1;
        if (0..self.alphabet_size as u32)
            .any(|i| char::from_u32(self.alphabet_start as u32 + i).is_none())
            || char::from_u32(last).is_none()
        {
            return bad("alphabet range contains invalid code points");
        }
        if (self.vocab_size as f64) > self.capacity() {
            return Err(Error::Config(format!(
                "cannot draw {} distinct words: only {} exist over the alphabet",
                self.vocab_size,
                self.capacity()
            )));
        }
        Ok(())
    }

    /// Number of distinct words the length distribution can produce.
    pub fn capacity(&self) -> f64 {
        self.length_probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| (self.alphabet_size as f64).powi(i as i32 + 1))
            .sum()
    }

    pub fn alphabet(&self) -> Vec<char> {
        (0..self.alphabet_size as u32)
            .map(|i| char::from_u32(self.alphabet_start as u32 + i).expect("validated"))
            .collect()
    }

    pub fn lexicon_size(&self) -> usize {
        (self.coverage * self.vocab_size as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    /// Vocabulary in rank order (rank 1 first).
    pub words: Vec<String>,
    pub labeled: Vec<LabeledSentence>,
    pub unlabeled: Vec<UnlabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub lexicon: Vec<String>,
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

impl SyntheticCorpus {
    pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Self> {
        Self::generate_excluding(spec, seed, &HashSet::new())
    }

    /// Like [`SyntheticCorpus::generate`] but never uses a word in `exclude`.
    pub fn generate_excluding(spec: &SyntheticSpec, seed: u64, exclude: &HashSet<String>) -> Result<Self> {
        spec.validate()?;
        if (spec.vocab_size + exclude.len()) as f64 > spec.capacity() {
            return Err(Error::Config(
                "vocabulary plus excluded words exceed the number of possible words".into(),
            ));
        }
        let root = Rng::new(seed);
        let words = sample_words(spec, &mut root.fork(0), exclude)?;
        let zipf = cumulative((1..=words.len()).map(|r| (r as f64).powf(-spec.zipf_exponent)));
        let draw = |rng: &mut Rng, n: usize| -> Result<Vec<LabeledSentence>> {
            (0..n)
                .map(|_| {
                    let len = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
                    let ws: Vec<&str> = (0..len)
                        .map(|_| words[rng.weighted_index(&zipf)].as_str())
                        .collect();
                    LabeledSentence::from_words(&ws)
                })
                .collect()
        };
        let labeled = draw(&mut root.fork(1), spec.labeled)?;
        let unlabeled = draw(&mut root.fork(2), spec.unlabeled)?
            .iter()
            .map(LabeledSentence::unlabeled)
            .collect();
        let test = draw(&mut root.fork(3), spec.test)?;
        let lexicon = words[..spec.lexicon_size()].to_vec();
        Ok(Self {
            words,
            labeled,
            unlabeled,
            test,
            lexicon,
        })
    }

    /// Writes `labeled.txt`, `unlabeled.txt`, `test.txt`, `lexicon.txt` and
    /// the full vocabulary as `words.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SyntheticFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SyntheticFiles::in_dir(dir);
        corpus::write_labeled(&files.labeled, &self.labeled)?;
        corpus::write_unlabeled(&files.unlabeled, &self.unlabeled)?;
        corpus::write_labeled(&files.test, &self.test)?;
        let lex: String = self.lexicon.iter().map(|w| format!("{w}\n")).collect();
        corpus::write_text(&files.lexicon, &lex)?;
        let words: String = self.words.iter().map(|w| format!("{w}\n")).collect();
        corpus::write_text(&files.words, &words)?;
        Ok(files)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFiles {
    pub labeled: PathBuf,
    pub unlabeled: PathBuf,
    pub test: PathBuf,
    pub lexicon: PathBuf,
    pub words: PathBuf,
}

impl SyntheticFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            labeled: dir.join("labeled.txt"),
            unlabeled: dir.join("unlabeled.txt"),
            test: dir.join("test.txt"),
            lexicon: dir.join("lexicon.txt"),
            words: dir.join("words.txt"),
        }
    }
}

fn sample_words(spec: &SyntheticSpec, rng: &mut Rng, exclude: &HashSet<String>) -> Result<Vec<String>> {
    let alphabet = spec.alphabet();
    let lengths = cumulative(spec.length_probs.iter().copied());
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(spec.vocab_size);
    let budget = 1000 * spec.vocab_size + 10_000;
    let mut attempts = 0;
    while words.len() < spec.vocab_size {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Config(
                "could not draw enough distinct words; length distribution too narrow".into(),
            ));
        }
        let len = rng.weighted_index(&lengths) + 1;
        let word: String = (0..len).map(|_| alphabet[rng.below(alphabet.len())]).collect();
        if !exclude.contains(&word) && seen.insert(word.clone()) {
            words.push(word);
        }
    }
    Ok(words)
}
