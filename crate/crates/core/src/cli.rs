//! Command-line interface: `train`, `pr-train`, `segment`, `eval`, `synth`.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::corpus::{self, parse_segmented_line, split_train_valid};
use crate::error::{Error, Result};
use crate::eval::{self, Span};
use crate::lexicon::Lexicon;
use crate::model::Model;
use crate::synth::{SyntheticCorpus, SyntheticSpec};
use crate::train::{self, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "segpr", version, about = "CNN-CRF word segmentation with lexicon-driven posterior regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a supervised model on a labeled corpus.
    Train(TrainArgs),
    /// Train with labeled data, unlabeled text and a lexicon.
    PrTrain(PrTrainArgs),
    /// Segment raw text, one sentence per line.
    Segment(SegmentArgs),
    /// Score a predicted segmentation against gold.
    Eval(EvalArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Segmented corpus; the last tenth is held out for validation.
    #[arg(long)]
    pub labeled: PathBuf,
    /// Output model; `.vocab` and `.log` files are written next to it.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrTrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "s-size")]
    pub s_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Segmented training corpus defining in-vocabulary words for OOV recall.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Per-sentence counts as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub labeled_sentences: Option<usize>,
    #[arg(long)]
    pub unlabeled_sentences: Option<usize>,
    #[arg(long)]
    pub test_sentences: Option<usize>,
    #[arg(long)]
    pub coverage: Option<f64>,
    /// Word list (one per line) whose words must not be generated.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::PrTrain(a) => cmd_pr_train(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::Eval(a) => cmd_eval(&a).map(|out| print!("{out}")),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn sidecar(model: &Path, ext: &str) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_outputs(path: &Path, model: &Model, report: &TrainReport) -> Result<()> {
    model.save(path)?;
    model.vocab.save(sidecar(path, "vocab"))?;
    let log = sidecar(path, "log");
    std::fs::write(&log, report.log_text()).map_err(|e| Error::io(&log, e))?;
    if let Some(best) = report.best() {
        eprintln!(
            "wrote {} (iteration {}, validation F={:.4}, {:.1}s)",
            path.display(),
            best.iteration,
            best.fscore,
            report.wall_time.as_secs_f64()
        );
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    config.validate()?;
    let labeled = corpus::read_labeled(&args.labeled)?;
    let (train, valid) = split_train_valid(&labeled).map_err(|e| e.at(args.labeled.display()))?;
    let (model, report) = train::train_supervised(&train, &valid, &config)?;
    write_outputs(&args.model, &model, &report)
}

pub fn cmd_pr_train(args: &PrTrainArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(v) = args.lambda {
        config.lambda = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.s_size {
        config.s_size = v;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    config.validate()?;
    if config.lambda > 0.0 && (args.unlabeled.is_none() || args.lexicon.is_none()) {
        return Err(Error::Config(
            "lambda > 0 requires both --unlabeled and --lexicon".into(),
        ));
    }
    let labeled = corpus::read_labeled(&args.labeled)?;
    let (train, valid) = split_train_valid(&labeled).map_err(|e| e.at(args.labeled.display()))?;
    let unlabeled = match &args.unlabeled {
        Some(p) => corpus::read_unlabeled(p)?,
        None => Vec::new(),
    };
    let lexicon = match &args.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::new(),
    };
    let (model, report) = train::train_lupr(&train, &valid, &unlabeled, &lexicon, &config)?;
    write_outputs(&args.model, &model, &report)
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let lines = corpus::read_lines(&args.input)?;
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let seg = model
            .segment_line(line)
            .map_err(|e| e.at(format!("{}:{}", args.input.display(), i + 1)))?;
        out.push_str(&seg);
        out.push('\n');
    }
    match &args.output {
        Some(path) => corpus::write_text(path, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

/// Returns the report text: a human line and a machine-readable line.
pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let gold = corpus::read_lines(&args.gold)?;
    let pred = corpus::read_lines(&args.pred)?;
    if gold.len() != pred.len() {
        let first = gold.len().min(pred.len()) + 1;
        return Err(Error::Input(format!(
            "{} has {} lines but {} has {}; first divergent line is {first}",
            args.gold.display(),
            gold.len(),
            args.pred.display(),
            pred.len()
        )));
    }
    let gold_words: Vec<Vec<&str>> = gold.iter().map(|l| parse_segmented_line(l)).collect();
    let pred_words: Vec<Vec<&str>> = pred.iter().map(|l| parse_segmented_line(l)).collect();
    for (i, (g, p)) in gold_words.iter().zip(&pred_words).enumerate() {
        if !g.is_empty() && !p.is_empty() && g.concat() != p.concat() {
            return Err(Error::Input(format!(
                "line {}: predicted characters differ from gold",
                i + 1
            )));
        }
    }
    let reference = match &args.train {
        Some(path) => Some(
            corpus::read_labeled(path)?
                .iter()
                .flat_map(|s| s.words())
                .collect::<HashSet<String>>(),
        ),
        None => None,
    };
    let result = eval::evaluate_words(&gold_words, &pred_words, reference.as_ref())?;
    if let Some(path) = &args.csv {
        let g: Vec<Vec<Span>> = gold_words.iter().map(|w| eval::spans_of_words(w)).collect();
        let p: Vec<Vec<Span>> = pred_words.iter().map(|w| eval::spans_of_words(w)).collect();
        let mut buf = Vec::new();
        eval::write_csv(&mut buf, &eval::sentence_counts(&g, &p)?).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    }
    let mut out = format!("{result}\n{}", result.machine_line());
    if let Some(oov) = result.oov_recall {
        write!(out, " OOV_R={oov:.6}").expect("string write");
    }
    out.push('\n');
    Ok(out)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec::default();
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut spec.vocab_size, args.vocab_size);
    set(&mut spec.alphabet_size, args.alphabet_size);
    set(&mut spec.labeled, args.labeled_sentences);
    set(&mut spec.unlabeled, args.unlabeled_sentences);
    set(&mut spec.test, args.test_sentences);
    if let Some(z) = args.zipf {
        spec.zipf_exponent = z;
    }
    if let Some(c) = args.coverage {
        spec.coverage = c;
    }
    let exclude: HashSet<String> = match &args.exclude {
        Some(path) => corpus::read_lines(path)?
            .into_iter()
            .map(|l| l.trim().to_owned())
            .filter(|l| !l.is_empty())
            .collect(),
        None => HashSet::new(),
    };
    let corpus = SyntheticCorpus::generate_excluding(&spec, args.seed, &exclude)?;
    corpus.write(&args.output)?;
    Ok(())
}
