//! Hyperparameters with flat `key=value` text serialization.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub embedding_dim: usize,
    pub kernel_sizes: Vec<usize>,
    pub kernels_per_size: usize,
    pub dropout: f64,
    pub min_count: usize,
    pub pretrained: Option<String>,

    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Supervised epochs for the initial model.
    pub epochs: usize,
    pub constrained_training: bool,

    pub lambda: f64,
    pub alpha: f64,
    pub s_size: usize,
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    /// Outer iterations without validation improvement before stopping.
    pub patience: usize,

    pub seed: u64,
}

impl Default for Config {
    /// Desk-scale settings: small encoder, runs in seconds on one core.
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            kernel_sizes: vec![2, 3, 4, 5],
            kernels_per_size: 16,
            dropout: 0.3,
            min_count: 1,
            pretrained: None,
            learning_rate: 0.005,
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
            clip_norm: 5.0,
            batch_size: 16,
            epochs: 400,
            constrained_training: false,
            lambda: 0.5,
            alpha: 1.0,
            s_size: 2,
            iterations: 4,
            epochs_per_iteration: 5,
            patience: 2,
            seed: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "encoder.embedding_dim",
    "encoder.kernel_sizes",
    "encoder.kernels_per_size",
    "encoder.dropout",
    "encoder.min_count",
    "encoder.pretrained",
    "optim.learning_rate",
    "optim.rms_decay",
    "optim.rms_epsilon",
    "optim.clip_norm",
    "train.batch_size",
    "train.epochs",
    "crf.constrained_training",
    "pr.lambda",
    "pr.alpha",
    "pr.s_size",
    "pr.iterations",
    "pr.epochs_per_iteration",
    "pr.patience",
    "seed",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl Config {
    /// Full-size settings: 200-dimensional embeddings, 400 kernels of
    /// widths 2–5, learning rate 0.001, batch size 64.
    pub fn paper_scale() -> Self {
        Self {
            embedding_dim: 200,
            kernels_per_size: 100,
            learning_rate: 0.001,
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn kernels(&self) -> Vec<(usize, usize)> {
        self.kernel_sizes
            .iter()
            .map(|&k| (k, self.kernels_per_size))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.embedding_dim == 0 || self.kernels_per_size == 0 {
            return fail("embedding_dim and kernels_per_size must be positive");
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return fail("kernel sizes must be a nonempty list of positive widths");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if self.min_count == 0 {
            return fail("min_count must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rms_decay) {
            return fail("learning_rate must be positive and rms_decay in [0, 1)");
        }
        if !(self.rms_epsilon > 0.0) || !(self.clip_norm >= 0.0) {
            return fail("rms_epsilon must be positive and clip_norm nonnegative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lambda >= 0.0) || !(self.alpha >= 0.0) {
            return fail("lambda and alpha must be nonnegative");
        }
        if self.s_size == 0 {
            return fail("s_size must be at least 1");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "encoder.embedding_dim" => self.embedding_dim = parse_value(key, v)?,
            "encoder.kernel_sizes" => {
                self.kernel_sizes = v
                    .split(',')
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "encoder.kernels_per_size" => self.kernels_per_size = parse_value(key, v)?,
            "encoder.dropout" => self.dropout = parse_value(key, v)?,
            "encoder.min_count" => self.min_count = parse_value(key, v)?,
            "encoder.pretrained" => {
                self.pretrained = (!v.is_empty()).then(|| v.to_owned());
            }
            "optim.learning_rate" => self.learning_rate = parse_value(key, v)?,
            "optim.rms_decay" => self.rms_decay = parse_value(key, v)?,
            "optim.rms_epsilon" => self.rms_epsilon = parse_value(key, v)?,
            "optim.clip_norm" => self.clip_norm = parse_value(key, v)?,
            "train.batch_size" => self.batch_size = parse_value(key, v)?,
            "train.epochs" => self.epochs = parse_value(key, v)?,
            "crf.constrained_training" => self.constrained_training = parse_value(key, v)?,
            "pr.lambda" => self.lambda = parse_value(key, v)?,
            "pr.alpha" => self.alpha = parse_value(key, v)?,
            "pr.s_size" => self.s_size = parse_value(key, v)?,
            "pr.iterations" => self.iterations = parse_value(key, v)?,
            "pr.epochs_per_iteration" => self.epochs_per_iteration = parse_value(key, v)?,
            "pr.patience" => self.patience = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v).map_err(|e| e.at(format!("line {}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| e.at(path.display()))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "encoder.embedding_dim" => self.embedding_dim.to_string(),
            "encoder.kernel_sizes" => self
                .kernel_sizes
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "encoder.kernels_per_size" => self.kernels_per_size.to_string(),
            "encoder.dropout" => self.dropout.to_string(),
            "encoder.min_count" => self.min_count.to_string(),
            "encoder.pretrained" => self.pretrained.clone().unwrap_or_default(),
            "optim.learning_rate" => self.learning_rate.to_string(),
            "optim.rms_decay" => self.rms_decay.to_string(),
            "optim.rms_epsilon" => self.rms_epsilon.to_string(),
            "optim.clip_norm" => self.clip_norm.to_string(),
            "train.batch_size" => self.batch_size.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "crf.constrained_training" => self.constrained_training.to_string(),
            "pr.lambda" => self.lambda.to_string(),
            "pr.alpha" => self.alpha.to_string(),
            "pr.s_size" => self.s_size.to_string(),
            "pr.iterations" => self.iterations.to_string(),
            "pr.epochs_per_iteration" => self.epochs_per_iteration.to_string(),
            "pr.patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }
}
