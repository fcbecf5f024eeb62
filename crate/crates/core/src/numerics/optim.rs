use super::matrix::Matrix;
use crate::error::{Error, Result};

/// RMSProp state: one squared-gradient accumulator per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    accumulators: Vec<Matrix>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon,
            accumulators: Vec::new(),
        }
    }

    pub fn accumulators(&self) -> &[Matrix] {
        &self.accumulators
    }

    /// `acc ← decay·acc + (1−decay)·g²`, `p ← p − lr·g/√(acc+ε)`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.check_same_shape(g)?;
            if !g.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {i} ({}x{})",
                    g.rows(),
                    g.cols()
                )));
            }
        }
        if self.accumulators.is_empty() {
            self.accumulators = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
        } else if self.accumulators.len() != grads.len()
            || self
                .accumulators
                .iter()
                .zip(grads)
                .any(|(a, g)| a.shape() != g.shape())
        {
            return Err(Error::Dimension(
                "optimizer state does not match parameter shapes".into(),
            ));
        }
        let (lr, decay, eps) = (self.learning_rate, self.decay, self.epsilon);
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            for ((pv, &gv), av) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(acc.data_mut())
            {
                *av = decay * *av + (1.0 - decay) * gv * gv;
                *pv -= lr * gv / (*av + eps).sqrt();
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// A non-positive `max_norm` disables clipping. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let factor = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(factor));
    }
    norm
}
