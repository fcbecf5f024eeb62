//! Supervised training of the initial model and the iterative
//! posterior-regularization refinement driven by a lexicon and unlabeled text.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::config::Config;
use crate::corpus::{LabeledSentence, Tag, UnlabeledSentence, Vocab};
use crate::crf::{self, ScoredSequence};
use crate::error::{Error, Result};
use crate::eval::{self, EvalResult};
use crate::lexicon::Lexicon;
use crate::model::{Model, ModelParams};
use crate::numerics::{clip_global_norm, Graph, Matrix, RmsProp, Rng};

const STREAM_INIT: u64 = 0;
const STREAM_LABELED: u64 = 1;
const STREAM_DROPOUT: u64 = 3;
const STREAM_PR_LABELED: u64 = 11;
const STREAM_PR_UNLABELED: u64 = 12;
const STREAM_PR_DROPOUT: u64 = 13;

/// `n(x,y;D)/n(x,y) + α·s(x,y;θ)` with dropout off.
pub fn phi(chars: &[char], tags: &[Tag], lexicon: &Lexicon, model: &Model, alpha: f64) -> Result<f64> {
    Ok(lexicon.fraction(chars, tags)? + alpha * model.sequence_score(chars, tags)?)
}

/// The `s_size` best BMES-valid sequences under `model`.
pub fn build_candidates(chars: &[char], model: &Model, s_size: usize) -> Result<Vec<ScoredSequence>> {
    if s_size == 0 {
        return Err(Error::Config("candidate set size must be at least 1".into()));
    }
    model.kbest(chars, s_size)
}

/// Max-shifted softmax.
pub fn q_tilde(phis: &[f64]) -> Result<Vec<f64>> {
    if phis.is_empty() {
        return Err(Error::Input("softmax over an empty candidate set".into()));
    }
    if phis.iter().any(|p| !p.is_finite()) {
        return Err(Error::Training("non-finite candidate potential".into()));
    }
    let max = phis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = phis.iter().map(|p| (p - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct QCandidate {
    pub tags: Vec<Tag>,
    pub phi: f64,
    pub prob: f64,
}

/// Target distribution over the candidate segmentations of one unlabeled
/// sentence, fixed while the model is updated.
#[derive(Clone, Debug, PartialEq)]
pub struct QDistribution {
    /// Index of the sentence in the unlabeled set.
    pub sentence: usize,
    pub candidates: Vec<QCandidate>,
    /// Outer iteration whose model produced the candidates.
    pub iteration: usize,
    /// Vocabulary size of the producing model.
    pub vocab_size: usize,
}

impl QDistribution {
    pub fn build(
        sentence: usize,
        chars: &[char],
        model: &Model,
        lexicon: &Lexicon,
        alpha: f64,
        s_size: usize,
        iteration: usize,
    ) -> Result<Self> {
        let cands = build_candidates(chars, model, s_size)?;
        let phis = cands
            .iter()
            .map(|c| Ok(lexicon.fraction(chars, &c.tags)? + alpha * c.score))
            .collect::<Result<Vec<f64>>>()?;
        let probs = q_tilde(&phis)?;
        Ok(Self {
            sentence,
            candidates: cands
                .into_iter()
                .zip(phis.into_iter().zip(probs))
                .map(|(c, (phi, prob))| QCandidate {
                    tags: c.tags,
                    phi,
                    prob,
                })
                .collect(),
            iteration,
            vocab_size: model.vocab.len(),
        })
    }

    pub fn targets(&self) -> Vec<(&[Tag], f64)> {
        self.candidates
            .iter()
            .map(|c| (c.tags.as_slice(), c.prob))
            .collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.prob).collect()
    }

    fn check(&self, ids: &[usize], params: &ModelParams) -> Result<()> {
        if self.vocab_size != params.encoder.embeddings.rows() {
            return Err(Error::Config(format!(
                "target distribution built with a {}-entry vocabulary, model has {}",
                self.vocab_size,
                params.encoder.embeddings.rows()
            )));
        }
        if self.candidates.iter().any(|c| c.tags.len() != ids.len()) {
            return Err(Error::Config(format!(
                "target distribution for sentence {} does not match its length",
                self.sentence
            )));
        }
        Ok(())
    }
}

/// Builds the target distribution of every unlabeled sentence under `model`.
pub fn build_targets(
    unlabeled: &[UnlabeledSentence],
    model: &Model,
    lexicon: &Lexicon,
    alpha: f64,
    s_size: usize,
    iteration: usize,
) -> Result<Vec<QDistribution>> {
    unlabeled
        .par_iter()
        .enumerate()
        .map(|(i, s)| QDistribution::build(i, &s.chars, model, lexicon, alpha, s_size, iteration))
        .collect()
}

/// Loss settings shared by every sentence of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub lambda: f64,
    pub constrained: bool,
    pub dropout: f64,
}

/// Value of `Σ NLL(labeled) + λ·Σ E_Q̃[NLL(unlabeled)]` and its two parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Objective {
    pub supervised: f64,
    pub pr: f64,
    pub total: f64,
}

pub type LabeledRef<'a> = (&'a [usize], &'a [Tag]);
pub type UnlabeledRef<'a> = (&'a [usize], &'a QDistribution);

/// Objective and its gradient, in [`ModelParams::tensors`] order. With
/// `training` off, dropout is inactive and `rng` is untouched. Unlabeled
/// sentences are skipped entirely when `λ = 0`.
pub fn objective(
    params: &ModelParams,
    labeled: &[LabeledRef<'_>],
    unlabeled: &[UnlabeledRef<'_>],
    spec: LossSpec,
    training: bool,
    rng: &mut Rng,
) -> Result<(Objective, Vec<Matrix>)> {
    let mut graph = Graph::new();
    let nodes = params.insert(&mut graph);
    let mut sup_terms = Vec::with_capacity(labeled.len());
    for &(ids, tags) in labeled {
        let u = params
            .encoder
            .encode(&mut graph, &nodes.encoder, ids, spec.dropout, training, rng)?;
        let nll = crf::nll_node(&mut graph, u, nodes.transitions, &[(tags, 1.0)], spec.constrained)?;
        sup_terms.push(nll);
    }
    let mut pr_terms = Vec::new();
    if spec.lambda != 0.0 {
        for &(ids, q) in unlabeled {
            q.check(ids, params)?;
            let u = params
                .encoder
                .encode(&mut graph, &nodes.encoder, ids, spec.dropout, training, rng)?;
            let nll = crf::nll_node(&mut graph, u, nodes.transitions, &q.targets(), spec.constrained)?;
            pr_terms.push(nll);
        }
    }
    let supervised: f64 = sup_terms.iter().map(|&n| graph.value(n).get(0, 0)).sum();
    let pr: f64 = pr_terms.iter().map(|&n| graph.value(n).get(0, 0)).sum();
    let terms: Vec<_> = sup_terms
        .iter()
        .map(|&n| (n, 1.0))
        .chain(pr_terms.iter().map(|&n| (n, spec.lambda)))
        .collect();
    let root = graph.weighted_sum(&terms)?;
    let total = graph.value(root).get(0, 0);
    if !total.is_finite() {
        return Err(Error::Training(format!("objective became non-finite ({total})")));
    }
    graph.backward(root)?;
    let grads = nodes.ids().into_iter().map(|id| graph.take_grad(id)).collect();
    Ok((Objective { supervised, pr, total }, grads))
}

/// Expected negative log-likelihood under the target distributions, with
/// its gradient; dropout off.
pub fn pr_loss(
    params: &ModelParams,
    unlabeled: &[UnlabeledRef<'_>],
    constrained: bool,
) -> Result<(f64, Vec<Matrix>)> {
    let spec = LossSpec {
        lambda: 1.0,
        constrained,
        dropout: 0.0,
    };
    let (obj, grads) = objective(params, &[], unlabeled, spec, false, &mut Rng::new(0))?;
    Ok((obj.pr, grads))
}

/// Parameters plus optimizer state; one call to [`Trainer::step`] is one
/// clipped RMSProp update.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: ModelParams,
    optimizer: RmsProp,
    dropout_rng: Rng,
    clip_norm: f64,
    spec: LossSpec,
}

impl Trainer {
    pub fn new(params: ModelParams, config: &Config, dropout_rng: Rng) -> Self {
        Self {
            params,
            optimizer: RmsProp::new(config.learning_rate, config.rms_decay, config.rms_epsilon),
            dropout_rng,
            clip_norm: config.clip_norm,
            spec: LossSpec {
                lambda: config.lambda,
                constrained: config.constrained_training,
                dropout: config.dropout,
            },
        }
    }

    pub fn spec(&self) -> LossSpec {
        self.spec
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.spec.lambda = lambda;
    }

    pub fn step(&mut self, labeled: &[LabeledRef<'_>], unlabeled: &[UnlabeledRef<'_>]) -> Result<Objective> {
        let (obj, mut grads) = objective(
            &self.params,
            labeled,
            unlabeled,
            self.spec,
            true,
            &mut self.dropout_rng,
        )?;
        if self.clip_norm > 0.0 {
            clip_global_norm(&mut grads, self.clip_norm);
        }
        self.optimizer.step(&mut self.params.tensors_mut(), &grads)?;
        Ok(obj)
    }
}

/// One completed outer iteration (iteration 0 is the supervised model).
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean labeled loss per step.
    pub loss: f64,
    /// Mean unweighted PR loss per step.
    pub pr_loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} loss={:.6} pr_loss={:.6} P={:.6} R={:.6} F={:.6}",
            self.iteration, self.loss, self.pr_loss, self.precision, self.recall, self.fscore
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f64,
    pub pr_loss: f64,
    pub fscore: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Iteration of the returned model.
    pub best_iteration: usize,
    pub wall_time: Duration,
}

impl TrainReport {
    /// One `iter=..` line per completed iteration.
    pub fn log_text(&self) -> String {
        self.iterations.iter().map(|r| format!("{r}\n")).collect()
    }

    pub fn best(&self) -> Option<&IterationRecord> {
        self.iterations.iter().find(|r| r.iteration == self.best_iteration)
    }
}

/// Validation scores of `model` on gold sentences.
pub fn validate(model: &Model, sentences: &[LabeledSentence]) -> Result<EvalResult> {
    let pred = sentences
        .par_iter()
        .map(|s| model.decode(&s.chars).map(|t| eval::to_spans(&t)))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<_> = sentences.iter().map(|s| eval::to_spans(&s.tags)).collect();
    eval::score(&gold, &pred)
}

struct LabeledData {
    ids: Vec<Vec<usize>>,
    tags: Vec<Vec<Tag>>,
}

impl LabeledData {
    fn new(vocab: &Vocab, sentences: &[LabeledSentence]) -> Self {
        Self {
            ids: sentences.iter().map(|s| vocab.ids(&s.chars)).collect(),
            tags: sentences.iter().map(|s| s.tags.clone()).collect(),
        }
    }

    fn batch(&self, idx: &[usize]) -> Vec<LabeledRef<'_>> {
        idx.iter()
            .map(|&i| (self.ids[i].as_slice(), self.tags[i].as_slice()))
            .collect()
    }
}

/// Reshuffled pass after pass; a batch never spans two passes.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl BatchStream {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> &[usize] {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos = (start + size).min(self.order.len());
        &self.order[start..self.pos]
    }
}

#[derive(Default)]
struct LossMeter {
    supervised: f64,
    pr: f64,
    steps: usize,
}

impl LossMeter {
    fn add(&mut self, o: Objective) {
        self.supervised += o.supervised;
        self.pr += o.pr;
        self.steps += 1;
    }

    fn means(&self) -> (f64, f64) {
        let n = self.steps.max(1) as f64;
        (self.supervised / n, self.pr / n)
    }
}

fn record(iteration: usize, meter: &LossMeter, scores: &EvalResult) -> IterationRecord {
    let (loss, pr_loss) = meter.means();
    IterationRecord {
        iteration,
        loss,
        pr_loss,
        precision: scores.precision,
        recall: scores.recall,
        fscore: scores.fscore,
    }
}

/// Trains the initial model on labeled data, keeping the parameters with the
/// best validation F over epochs (later epochs win ties).
pub fn train_supervised(
    train: &[LabeledSentence],
    valid: &[LabeledSentence],
    config: &Config,
) -> Result<(Model, TrainReport)> {
    let started = Instant::now();
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let root = Rng::new(config.seed);
    let vocab = Vocab::build(train.iter().map(|s| s.chars.as_slice()), config.min_count)?;
    let mut model = Model::init(config, vocab, &mut root.fork(STREAM_INIT))?;
    let data = LabeledData::new(&model.vocab, train);
    let mut trainer = Trainer::new(model.params.clone(), config, root.fork(STREAM_DROPOUT));
    let mut stream = BatchStream::new(train.len(), root.fork(STREAM_LABELED));
    let steps = train.len().div_ceil(config.batch_size);

    let mut best_scores = validate(&model, valid)?;
    let mut best_params = model.params.clone();
    let mut meter = LossMeter::default();
    let mut report = TrainReport::default();
    for epoch in 1..=config.epochs {
        let mut epoch_meter = LossMeter::default();
        for _ in 0..steps {
            let idx = stream.next(config.batch_size).to_vec();
            let o = trainer.step(&data.batch(&idx), &[])?;
            epoch_meter.add(o);
            meter.add(o);
        }
        model.params = trainer.params.clone();
        let scores = validate(&model, valid)?;
        report.epochs.push(EpochRecord {
            iteration: 0,
            epoch,
            loss: epoch_meter.means().0,
            pr_loss: 0.0,
            fscore: scores.fscore,
        });
        if scores.fscore >= best_scores.fscore {
            best_scores = scores;
            best_params = trainer.params.clone();
        }
    }
    model.params = best_params;
    report.iterations.push(record(0, &meter, &best_scores));
    report.wall_time = started.elapsed();
    Ok((model, report))
}

/// Full pipeline: supervised initial model, then refinement.
pub fn train_lupr(
    train: &[LabeledSentence],
    valid: &[LabeledSentence],
    unlabeled: &[UnlabeledSentence],
    lexicon: &Lexicon,
    config: &Config,
) -> Result<(Model, TrainReport)> {
    check_lupr_inputs(unlabeled, config)?;
    let (base, report) = train_supervised(train, valid, config)?;
    refine(base, report, train, valid, unlabeled, lexicon, config)
}

fn check_lupr_inputs(unlabeled: &[UnlabeledSentence], config: &Config) -> Result<()> {
    config.validate()?;
    if config.lambda > 0.0 && unlabeled.is_empty() {
        return Err(Error::Config("lambda > 0 requires unlabeled sentences".into()));
    }
    Ok(())
}

/// Refinement starting from an already trained initial model `base` (and
/// its report). Each outer iteration freezes the current model, rebuilds
/// the target distributions, and runs `epochs_per_iteration` epochs of
/// mixed labeled/unlabeled steps; the best epoch becomes the next frozen
/// model. Returns the best model over all iterations including `base`, later
/// iterations winning ties; only strict improvements reset early stopping.
pub fn refine(
    base: Model,
    mut report: TrainReport,
    train: &[LabeledSentence],
    valid: &[LabeledSentence],
    unlabeled: &[UnlabeledSentence],
    lexicon: &Lexicon,
    config: &Config,
) -> Result<(Model, TrainReport)> {
    let started = Instant::now();
    check_lupr_inputs(unlabeled, config)?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if base.config.embedding_dim != config.embedding_dim
        || base.config.kernels() != config.kernels()
    {
        return Err(Error::Config(
            "initial model was trained with a different encoder configuration".into(),
        ));
    }
    let root = Rng::new(config.seed);
    let data = LabeledData::new(&base.vocab, train);
    let unl_ids: Vec<Vec<usize>> = unlabeled.iter().map(|s| base.vocab.ids(&s.chars)).collect();
    let mut trainer = Trainer::new(base.params.clone(), config, root.fork(STREAM_PR_DROPOUT));
    let mut lab_stream = BatchStream::new(train.len(), root.fork(STREAM_PR_LABELED));
    let mut unl_rng = root.fork(STREAM_PR_UNLABELED);
    let b = config.batch_size;
    let use_unlabeled = config.lambda > 0.0;

    let mut frozen = base;
    frozen.config = config.clone();
    let mut best_scores = validate(&frozen, valid)?;
    report.best_iteration = 0;
    let mut best_model = frozen.clone();
    let mut stale = 0;
    for t in 1..=config.iterations {
        let targets = if use_unlabeled {
            build_targets(unlabeled, &frozen, lexicon, config.alpha, config.s_size, t)?
        } else {
            Vec::new()
        };
        trainer.params = frozen.params.clone();
        let mut candidate = frozen.clone();
        let mut iter_best: Option<(EvalResult, ModelParams)> = None;
        let mut meter = LossMeter::default();
        for epoch in 1..=config.epochs_per_iteration {
            let mut epoch_meter = LossMeter::default();
            if unlabeled.is_empty() {
                for _ in 0..train.len().div_ceil(b) {
                    let idx = lab_stream.next(b).to_vec();
                    let o = trainer.step(&data.batch(&idx), &[])?;
                    epoch_meter.add(o);
                    meter.add(o);
                }
            } else {
                let mut order: Vec<usize> = (0..unlabeled.len()).collect();
                unl_rng.shuffle(&mut order);
                for chunk in order.chunks(b) {
                    let idx = lab_stream.next(b).to_vec();
                    let unl: Vec<UnlabeledRef<'_>> = if use_unlabeled {
                        chunk
                            .iter()
                            .map(|&i| (unl_ids[i].as_slice(), &targets[i]))
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let o = trainer.step(&data.batch(&idx), &unl)?;
                    epoch_meter.add(o);
                    meter.add(o);
                }
            }
            candidate.params = trainer.params.clone();
            let scores = validate(&candidate, valid)?;
            let (loss, pr_loss) = epoch_meter.means();
            report.epochs.push(EpochRecord {
                iteration: t,
                epoch,
                loss,
                pr_loss,
                fscore: scores.fscore,
            });
            if iter_best.as_ref().is_none_or(|(s, _)| scores.fscore >= s.fscore) {
                iter_best = Some((scores, trainer.params.clone()));
            }
        }
        let scores = match iter_best {
            Some((scores, params)) => {
                frozen.params = params;
                scores
            }
            None => validate(&frozen, valid)?,
        };
        report.iterations.push(record(t, &meter, &scores));
        let improved = scores.fscore > best_scores.fscore;
        if scores.fscore >= best_scores.fscore {
            best_scores = scores;
            best_model = frozen.clone();
            report.best_iteration = t;
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    report.wall_time += started.elapsed();
    Ok((best_model, report))
}
