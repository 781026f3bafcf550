use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NumericsError;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and the output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| kind.apply(v)).collect()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptySoftmax);
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<(), NumericsError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumericsError::InvalidDropoutRate(rate));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<f64>, NumericsError> {
    check_dropout_rate(rate)?;
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

pub fn dropout<R: Rng + ?Sized>(
    x: &[f64],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Vec<f64>, NumericsError> {
    check_dropout_rate(rate)?;
    if !training {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    Ok(x.iter().zip(mask).map(|(v, m)| v * m).collect())
}

#[inline]
pub(crate) fn bce_term(score: f64, label: f64) -> f64 {
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

/// Mean binary cross-entropy over all components.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64, NumericsError> {
    if scores.len() != labels.len() {
        return Err(NumericsError::LengthMismatch {
            context: "bce_loss",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = scores.iter().zip(labels).map(|(&s, &y)| bce_term(s, y)).sum();
    Ok(total / scores.len() as f64)
}
