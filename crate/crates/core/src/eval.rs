//! Word-level precision, recall and F-score between segmentations,
//! micro-averaged over a corpus.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use crate::corpus::{word_ends, Tag};
use crate::error::{Error, Result};

/// Half-open character range `[start, end)` of one word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

pub fn to_spans(tags: &[Tag]) -> Vec<Span> {
    let mut start = 0;
    word_ends(tags)
        .map(|end| {
            let s = Span { start, end };
            start = end;
            s
        })
        .collect()
}

pub fn spans_of_words<S: AsRef<str>>(words: &[S]) -> Vec<Span> {
    let mut start = 0;
    words
        .iter()
        .map(|w| {
            let end = start + w.as_ref().chars().count();
            let s = Span { start, end };
            start = end;
            s
        })
        .collect()
}

/// Matching spans of two sorted tilings.
fn count_matches(gold: &[Span], pred: &[Span]) -> usize {
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < gold.len() && j < pred.len() {
        match gold[i].cmp(&pred[j]) {
            std::cmp::Ordering::Equal => {
                hits += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    hits
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SentenceCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub oov_recall: Option<f64>,
}

impl EvalResult {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let fscore = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            fscore,
            gold,
            predicted,
            correct,
            oov_recall: None,
        }
    }

    /// `P=<..> R=<..> F=<..>` with values in `[0, 1]`.
    pub fn machine_line(&self) -> String {
        format!("P={:.6} R={:.6} F={:.6}", self.precision, self.recall, self.fscore)
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.2} R={:.2} F={:.2} (gold={} pred={} correct={})",
            self.precision, self.recall, self.fscore, self.gold, self.predicted, self.correct
        )?;
        if let Some(oov) = self.oov_recall {
            write!(f, " OOV-R={oov:.2}")?;
        }
        Ok(())
    }
}

fn sentence_len(spans: &[Span]) -> usize {
    spans.last().map_or(0, |s| s.end)
}

/// Per-sentence gold/predicted/correct counts. An empty side (no words) is
/// accepted against any sentence; otherwise lengths must agree.
pub fn sentence_counts(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<Vec<SentenceCounts>> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    gold.iter()
        .zip(pred)
        .enumerate()
        .map(|(i, (g, p))| {
            let (gl, pl) = (sentence_len(g), sentence_len(p));
            if gl != pl && gl != 0 && pl != 0 {
                return Err(Error::Input(format!(
                    "sentence {}: gold has {gl} characters, prediction {pl}",
                    i + 1
                )));
            }
            Ok(SentenceCounts {
                gold: g.len(),
                predicted: p.len(),
                correct: count_matches(g, p),
            })
        })
        .collect()
}

pub fn score(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> Result<EvalResult> {
    let counts = sentence_counts(gold, pred)?;
    let (g, p, c) = counts.iter().fold((0, 0, 0), |acc, s| {
        (acc.0 + s.gold, acc.1 + s.predicted, acc.2 + s.correct)
    });
    Ok(EvalResult::from_counts(g, p, c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OovRecall {
    /// 1.0 when there are no OOV gold words.
    pub recall: f64,
    pub oov_gold: usize,
    pub correct: usize,
}

impl OovRecall {
    /// True when the denominator was zero.
    pub fn vacuous(&self) -> bool {
        self.oov_gold == 0
    }
}

/// Recall over gold words absent from `reference`.
pub fn oov_recall<S: AsRef<str>>(
    gold_words: &[Vec<S>],
    pred: &[Vec<Span>],
    reference: &HashSet<String>,
) -> Result<OovRecall> {
    if gold_words.len() != pred.len() {
        return Err(Error::Input("gold and predicted sentence counts differ".into()));
    }
    let (mut oov, mut correct) = (0, 0);
    for (words, p) in gold_words.iter().zip(pred) {
        let predicted: HashSet<Span> = p.iter().copied().collect();
        for (w, span) in words.iter().zip(spans_of_words(words)) {
            if reference.contains(w.as_ref()) {
                continue;
            }
            oov += 1;
            if predicted.contains(&span) {
                correct += 1;
            }
        }
    }
    Ok(OovRecall {
        recall: if oov == 0 { 1.0 } else { correct as f64 / oov as f64 },
        oov_gold: oov,
        correct,
    })
}

/// Scores word lists directly, optionally with OOV recall against `reference`.
pub fn evaluate_words<S: AsRef<str>, T: AsRef<str>>(
    gold: &[Vec<S>],
    pred: &[Vec<T>],
    reference: Option<&HashSet<String>>,
) -> Result<EvalResult> {
    let gold_spans: Vec<Vec<Span>> = gold.iter().map(|w| spans_of_words(w)).collect();
    let pred_spans: Vec<Vec<Span>> = pred.iter().map(|w| spans_of_words(w)).collect();
    let mut result = score(&gold_spans, &pred_spans)?;
    if let Some(reference) = reference {
        result.oov_recall = Some(oov_recall(gold, &pred_spans, reference)?.recall);
    }
    Ok(result)
}

/// `sentence_id,gold_count,pred_count,correct` rows, ids starting at 1.
pub fn write_csv<W: Write>(out: &mut W, counts: &[SentenceCounts]) -> std::io::Result<()> {
    writeln!(out, "sentence_id,gold_count,pred_count,correct")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(out, "{},{},{},{}", i + 1, c.gold, c.predicted, c.correct)?;
    }
    Ok(())
}
