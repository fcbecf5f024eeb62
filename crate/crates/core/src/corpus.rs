//! Segmented and raw text, BMES tagging, the character vocabulary and
//! corpus splits.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Character position inside a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    B = 0,
    M = 1,
    E = 2,
    S = 3,
}

/// Size of the tag set.
pub const NUM_TAGS: usize = 4;

impl Tag {
    pub const ALL: [Tag; NUM_TAGS] = [Tag::B, Tag::M, Tag::E, Tag::S];

    #[inline]
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Tag> {
        Tag::ALL.get(code).copied()
    }

    /// Whether a word can end at this tag.
    #[inline]
    pub fn ends_word(self) -> bool {
        matches!(self, Tag::E | Tag::S)
    }

    pub fn can_start(self) -> bool {
        matches!(self, Tag::B | Tag::S)
    }

    pub fn can_end(self) -> bool {
        self.ends_word()
    }

    /// BMES bigram legality.
    pub fn can_precede(self, next: Tag) -> bool {
        match self {
            Tag::B | Tag::M => matches!(next, Tag::M | Tag::E),
            Tag::E | Tag::S => matches!(next, Tag::B | Tag::S),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::B => "B",
            Tag::M => "M",
            Tag::E => "E",
            Tag::S => "S",
        };
        f.write_str(s)
    }
}

/// True for nonempty sequences obeying the BMES grammar.
pub fn is_valid_tags(tags: &[Tag]) -> bool {
    match (tags.first(), tags.last()) {
        (Some(first), Some(last)) => {
            first.can_start()
                && last.can_end()
                && tags.windows(2).all(|w| w[0].can_precede(w[1]))
        }
        _ => false,
    }
}

/// Whitespace-delimited tokens of one segmented line.
pub fn parse_segmented_line(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

pub fn words_to_tags<S: AsRef<str>>(words: &[S]) -> Result<Vec<Tag>> {
    let mut tags = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let len = w.as_ref().chars().count();
        match len {
            0 => return Err(Error::Format(format!("word {i} is empty"))),
            1 => tags.push(Tag::S),
            _ => {
                tags.push(Tag::B);
                tags.extend(std::iter::repeat(Tag::M).take(len - 2));
                tags.push(Tag::E);
            }
        }
    }
    Ok(tags)
}

/// Word end positions (exclusive) implied by `tags`.
///
/// A boundary follows position `i` iff `tags[i]` is `E` or `S`, or `i` is
/// the last position. Invalid sequences are repaired by this same rule.
pub fn word_ends(tags: &[Tag]) -> impl Iterator<Item = usize> + '_ {
    let n = tags.len();
    tags.iter()
        .enumerate()
        .filter(move |(i, t)| t.ends_word() || *i + 1 == n)
        .map(|(i, _)| i + 1)
}

pub fn tags_to_words(chars: &[char], tags: &[Tag]) -> Result<Vec<String>> {
    if chars.len() != tags.len() {
        return Err(Error::Format(format!(
            "{} characters but {} tags",
            chars.len(),
            tags.len()
        )));
    }
    let mut words = Vec::new();
    let mut start = 0;
    for end in word_ends(tags) {
        words.push(chars[start..end].iter().collect());
        start = end;
    }
    Ok(words)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    pub chars: Vec<char>,
    pub tags: Vec<Tag>,
}

impl LabeledSentence {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Format("sentence has no words".into()));
        }
        let tags = words_to_tags(words)?;
        let chars = words.iter().flat_map(|w| w.as_ref().chars()).collect();
        Ok(Self { chars, tags })
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Self::from_words(&parse_segmented_line(line))
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        tags_to_words(&self.chars, &self.tags).expect("lengths agree by construction")
    }

    pub fn to_line(&self) -> String {
        self.words().join(" ")
    }

    pub fn unlabeled(&self) -> UnlabeledSentence {
        UnlabeledSentence {
            chars: self.chars.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnlabeledSentence {
    pub chars: Vec<char>,
}

impl UnlabeledSentence {
    /// Characters of `text` with whitespace removed.
    pub fn new(text: &str) -> Result<Self> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        if chars.is_empty() {
            return Err(Error::Format("unlabeled sentence is empty".into()));
        }
        Ok(Self { chars })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes)
        .map_err(|e| Error::Format(format!("{}: invalid UTF-8: {e}", path.display())))
}

/// Labeled corpus: one sentence per line, words separated by whitespace.
/// Blank lines are skipped.
pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s = LabeledSentence::from_line(line)
            .map_err(|e| e.at(format!("{}:{}", path.display(), i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

/// Raw corpus: one sentence per line. Blank lines are skipped.
pub fn read_unlabeled(path: impl AsRef<Path>) -> Result<Vec<UnlabeledSentence>> {
    let text = read_text(path.as_ref())?;
    Ok(text
        .lines()
        .filter_map(|l| UnlabeledSentence::new(l).ok())
        .collect())
}

/// Every line of a file, blank ones included, for line-aligned processing.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(read_text(path.as_ref())?.lines().map(str::to_owned).collect())
}

pub fn write_labeled(path: impl AsRef<Path>, sentences: &[LabeledSentence]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.to_line());
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}

pub fn write_unlabeled(path: impl AsRef<Path>, sentences: &[UnlabeledSentence]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.extend(s.chars.iter());
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const VOCAB_HEADER: &str = "#segpr-vocab v1";

/// Character vocabulary with reserved `PAD = 0` and `UNK = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<char, usize>,
    chars: Vec<Option<char>>,
    counts: Vec<u64>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            ids: HashMap::new(),
            chars: vec![None, None],
            counts: vec![0, 0],
        }
    }
}

impl Vocab {
    /// Characters seen at least `min_count` times, ordered by descending
    /// frequency then code point.
    pub fn build<'a, I>(sentences: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [char]>,
    {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut freq: HashMap<char, u64> = HashMap::new();
        for s in sentences {
            for &c in s {
                *freq.entry(c).or_default() += 1;
            }
        }
        let mut entries: Vec<(char, u64)> = freq
            .into_iter()
            .filter(|&(_, n)| n >= min_count as u64)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut vocab = Vocab::default();
        for (c, n) in entries {
            vocab.insert(c, n);
        }
        Ok(vocab)
    }

    fn insert(&mut self, c: char, count: u64) {
        self.ids.insert(c, self.chars.len());
        self.chars.push(Some(c));
        self.counts.push(count);
    }

    /// Number of ids including `PAD` and `UNK`.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.len() == 2
    }

    pub fn contains(&self, c: char) -> bool {
        self.ids.contains_key(&c)
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn ids(&self, chars: &[char]) -> Vec<usize> {
        chars.iter().map(|&c| self.id(c)).collect()
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied().flatten()
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    /// `(char, id, count)` for every non-reserved entry, in id order.
    pub fn entries(&self) -> impl Iterator<Item = (char, usize, u64)> + '_ {
        self.chars
            .iter()
            .enumerate()
            .filter_map(|(id, c)| c.map(|c| (c, id, self.counts[id])))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(VOCAB_HEADER);
        out.push('\n');
        for (c, id, n) in self.entries() {
            out.push_str(&format!("{c}\t{id}\t{n}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(VOCAB_HEADER) {
            return Err(Error::Format(format!("vocab must start with `{VOCAB_HEADER}`")));
        }
        let mut vocab = Vocab::default();
        for (i, line) in lines.enumerate() {
            let ctx = |m: &str| Error::Format(format!("vocab line {}: {m}", i + 2));
            let fields: Vec<&str> = line.split('\t').collect();
            let [c, id, n] = fields[..] else {
                return Err(ctx("expected char<TAB>id<TAB>count"));
            };
            let mut cs = c.chars();
            let (Some(ch), None) = (cs.next(), cs.next()) else {
                return Err(ctx("first field must be a single character"));
            };
            let id: usize = id.parse().map_err(|_| ctx("bad id"))?;
            let n: u64 = n.parse().map_err(|_| ctx("bad count"))?;
            if id != vocab.len() || vocab.contains(ch) {
                return Err(ctx("ids must be dense, ascending and unique"));
            }
            vocab.insert(ch, n);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&read_text(path.as_ref())?)
    }
}

/// Last `⌊n/10⌋` sentences become validation data, in file order.
pub fn split_train_valid<T: Clone>(sentences: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let n = sentences.len();
    if n < 10 {
        return Err(Error::Config(format!(
            "need at least 10 sentences to split off validation data, got {n}"
        )));
    }
    let cut = n - n / 10;
    Ok((sentences[..cut].to_vec(), sentences[cut..].to_vec()))
}

/// Uniform sample of `⌊ratio·n⌋` items without replacement, kept in input order.
pub fn sample_fraction<T: Clone>(items: &[T], ratio: f64, rng: &mut Rng) -> Result<Vec<T>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("sampling ratio {ratio} not in (0, 1]")));
    }
    let m = (ratio * items.len() as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    rng.shuffle(&mut idx);
    let mut chosen = idx[..m].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}

/// Samples labeled sentences and strips their tags.
pub fn sample_unlabeled(
    sentences: &[LabeledSentence],
    ratio: f64,
    rng: &mut Rng,
) -> Result<Vec<UnlabeledSentence>> {
    Ok(sample_fraction(sentences, ratio, rng)?
        .iter()
        .map(LabeledSentence::unlabeled)
        .collect())
}
