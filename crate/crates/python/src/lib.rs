//! Python bindings: models, training, segmentation, evaluation and the
//! synthetic corpus generator.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use segpr::config::Config;
use segpr::corpus::{self, LabeledSentence, Tag, UnlabeledSentence};
use segpr::crf::Lattice;
use segpr::eval;
use segpr::lexicon::Lexicon;
use segpr::model::Model;
use segpr::numerics::Matrix;
use segpr::synth::{SyntheticCorpus, SyntheticSpec};
use segpr::train;

fn py_err(e: segpr::Error) -> PyErr {
    match e {
        segpr::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        segpr::Error::Training(_) | segpr::Error::Dimension(_) | segpr::Error::Index(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config_from(overrides: Option<HashMap<String, String>>) -> PyResult<Config> {
    let mut config = Config::default();
    let mut pairs: Vec<_> = overrides.unwrap_or_default().into_iter().collect();
    pairs.sort();
    for (k, v) in pairs {
        config.set(&k, &v).map_err(py_err)?;
    }
    Ok(config)
}

fn labeled(lines: &[String]) -> PyResult<Vec<LabeledSentence>> {
    lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| LabeledSentence::from_line(l).map_err(py_err))
        .collect()
}

fn tag_string(tags: &[Tag]) -> String {
    tags.iter().map(|t| t.to_string()).collect()
}

fn parse_tags(text: &str) -> PyResult<Vec<Tag>> {
    text.chars()
        .map(|c| match c {
            'B' => Ok(Tag::B),
            'M' => Ok(Tag::M),
            'E' => Ok(Tag::E),
            'S' => Ok(Tag::S),
            other => Err(PyValueError::new_err(format!("unknown tag `{other}`"))),
        })
        .collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

/// A trained segmenter.
#[pyclass(name = "Model", module = "segpr")]
pub struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    /// Words of `text` (whitespace is ignored).
    fn segment(&self, text: &str) -> PyResult<Vec<String>> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        self.inner.segment(&chars).map_err(py_err)
    }

    /// BMES tag string of the best segmentation.
    fn tags(&self, text: &str) -> PyResult<String> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        Ok(tag_string(&self.inner.decode(&chars).map_err(py_err)?))
    }

    /// `(tags, score)` pairs of the `k` best well-formed segmentations.
    fn kbest(&self, text: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        Ok(self
            .inner
            .kbest(&chars, k)
            .map_err(py_err)?
            .into_iter()
            .map(|s| (tag_string(&s.tags), s.score))
            .collect())
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    /// Configuration echo as `key=value` text.
    fn config_text(&self) -> String {
        self.inner.config.to_text()
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: Model::from_bytes(&data).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(vocab_size={}, embedding_dim={}, features={})",
            self.inner.vocab.len(),
            self.inner.params.encoder.embedding_dim(),
            self.inner.params.encoder.features()
        )
    }
}

/// Supervised training. Lines are whitespace-segmented sentences; `config`
/// maps keys such as `train.epochs` to values. Returns `(model, log_lines)`.
#[pyfunction]
#[pyo3(signature = (train_lines, valid_lines, config=None))]
fn train_supervised(
    py: Python<'_>,
    train_lines: Vec<String>,
    valid_lines: Vec<String>,
    config: Option<HashMap<String, String>>,
) -> PyResult<(PyModel, Vec<String>)> {
    let config = config_from(config)?;
    let (tr, va) = (labeled(&train_lines)?, labeled(&valid_lines)?);
    let (model, report) = py
        .detach(|| train::train_supervised(&tr, &va, &config))
        .map_err(py_err)?;
    Ok((PyModel { inner: model }, report.log_text().lines().map(String::from).collect()))
}

/// Supervised model followed by lexicon/unlabeled-text refinement.
#[pyfunction]
#[pyo3(signature = (train_lines, valid_lines, unlabeled_lines, lexicon_words, config=None))]
fn train_lupr(
    py: Python<'_>,
    train_lines: Vec<String>,
    valid_lines: Vec<String>,
    unlabeled_lines: Vec<String>,
    lexicon_words: Vec<String>,
    config: Option<HashMap<String, String>>,
) -> PyResult<(PyModel, Vec<String>)> {
    let config = config_from(config)?;
    let (tr, va) = (labeled(&train_lines)?, labeled(&valid_lines)?);
    let unl: Vec<UnlabeledSentence> = unlabeled_lines
        .iter()
        .filter_map(|l| UnlabeledSentence::new(l).ok())
        .collect();
    let lexicon = Lexicon::from_words(&lexicon_words);
    let (model, report) = py
        .detach(|| train::train_lupr(&tr, &va, &unl, &lexicon, &config))
        .map_err(py_err)?;
    Ok((PyModel { inner: model }, report.log_text().lines().map(String::from).collect()))
}

/// Word-level scores of aligned segmented lines: `{"P", "R", "F", ...}`.
#[pyfunction]
fn evaluate(gold: Vec<String>, pred: Vec<String>) -> PyResult<HashMap<String, f64>> {
    let g: Vec<Vec<&str>> = gold.iter().map(|l| corpus::parse_segmented_line(l)).collect();
    let p: Vec<Vec<&str>> = pred.iter().map(|l| corpus::parse_segmented_line(l)).collect();
    let r = eval::evaluate_words(&g, &p, None).map_err(py_err)?;
    Ok(HashMap::from([
        ("P".to_owned(), r.precision),
        ("R".to_owned(), r.recall),
        ("F".to_owned(), r.fscore),
        ("gold".to_owned(), r.gold as f64),
        ("predicted".to_owned(), r.predicted as f64),
        ("correct".to_owned(), r.correct as f64),
    ]))
}

#[pyfunction]
fn words_to_tags(words: Vec<String>) -> PyResult<String> {
    Ok(tag_string(&corpus::words_to_tags(&words).map_err(py_err)?))
}

#[pyfunction]
fn tags_to_words(text: &str, tags: &str) -> PyResult<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    corpus::tags_to_words(&chars, &parse_tags(tags)?).map_err(py_err)
}

/// Max-shifted softmax over candidate potentials.
#[pyfunction]
fn q_tilde(phis: Vec<f64>) -> PyResult<Vec<f64>> {
    train::q_tilde(&phis).map_err(py_err)
}

/// Best tag string and score of an `N×4` unary / `4×4` transition lattice.
#[pyfunction]
#[pyo3(signature = (unary, transitions, constrained=true))]
fn viterbi(unary: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>, constrained: bool) -> PyResult<(String, f64)> {
    let (u, a) = (matrix(unary)?, matrix(transitions)?);
    let best = Lattice::new(&u, &a).map_err(py_err)?.viterbi(constrained);
    Ok((tag_string(&best.tags), best.score))
}

#[pyfunction]
#[pyo3(signature = (unary, transitions, constrained=false))]
fn log_partition(unary: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>, constrained: bool) -> PyResult<f64> {
    let (u, a) = (matrix(unary)?, matrix(transitions)?);
    Ok(Lattice::new(&u, &a).map_err(py_err)?.log_partition(constrained))
}

/// Synthetic corpus as a dict of line lists: `labeled`, `unlabeled`,
/// `test`, `lexicon`, `words`.
#[pyfunction]
#[pyo3(signature = (seed, labeled=100, unlabeled=2000, test=1000, coverage=0.8))]
fn synthesize(
    seed: u64,
    labeled: usize,
    unlabeled: usize,
    test: usize,
    coverage: f64,
) -> PyResult<HashMap<String, Vec<String>>> {
    let spec = SyntheticSpec {
        labeled,
        unlabeled,
        test,
        coverage,
        ..SyntheticSpec::default()
    };
    let c = SyntheticCorpus::generate(&spec, seed).map_err(py_err)?;
    Ok(HashMap::from([
        ("labeled".to_owned(), c.labeled.iter().map(LabeledSentence::to_line).collect()),
        (
            "unlabeled".to_owned(),
            c.unlabeled.iter().map(|s| s.chars.iter().collect()).collect(),
        ),
        ("test".to_owned(), c.test.iter().map(LabeledSentence::to_line).collect()),
        ("lexicon".to_owned(), c.lexicon),
        ("words".to_owned(), c.words),
    ]))
}

#[pymodule(name = "segpr")]
fn segpr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_supervised, m)?)?;
    m.add_function(wrap_pyfunction!(train_lupr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(words_to_tags, m)?)?;
    m.add_function(wrap_pyfunction!(tags_to_words, m)?)?;
    m.add_function(wrap_pyfunction!(q_tilde, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_strings_round_trip() {
        let tags = parse_tags("BMESBE").unwrap();
        assert_eq!(tag_string(&tags), "BMESBE");
    }

    #[test]
    fn config_overrides_apply() {
        let overrides = HashMap::from([("train.epochs".to_owned(), "3".to_owned())]);
        assert_eq!(config_from(Some(overrides)).unwrap().epochs, 3);
        assert_eq!(config_from(None).unwrap(), Config::default());
    }
}
