use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log sum exp(xs)` with max subtraction. Empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `log softmax(logits)[index]`.
pub fn categorical_logprob(logits: &[f64], index: usize) -> Result<f64> {
    if index >= logits.len() {
        return Err(Error::Argument(format!(
            "category {index} out of range for {} logits",
            logits.len()
        )));
    }
    Ok(logits[index] - log_sum_exp(logits))
}

/// d log softmax(logits)[index] / d logits, scaled by `coeff`, added to `out`.
pub fn categorical_logprob_grad(logits: &[f64], index: usize, coeff: f64, out: &mut [f64]) {
    let probs = softmax(logits);
    for (o, p) in out.iter_mut().zip(&probs) {
        *o -= coeff * p;
    }
    out[index] += coeff;
}

/// Diagonal Gaussian log-density summed over dimensions.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], action: &[f64]) -> Result<f64> {
    if mean.len() != log_std.len() || mean.len() != action.len() {
        return Err(Error::Argument(format!(
            "length mismatch: mean {}, log_std {}, action {}",
            mean.len(),
            log_std.len(),
            action.len()
        )));
    }
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum())
}

/// Adds `coeff` times the gradient of [`gaussian_logprob`] w.r.t. mean and
/// log-std into `d_mean` and `d_log_std`.
pub fn gaussian_logprob_grad(
    mean: &[f64],
    log_std: &[f64],
    action: &[f64],
    coeff: f64,
    d_mean: &mut [f64],
    d_log_std: &mut [f64],
) {
    for i in 0..mean.len() {
        let inv_var = (-2.0 * log_std[i]).exp();
        let diff = action[i] - mean[i];
        d_mean[i] += coeff * diff * inv_var;
        d_log_std[i] += coeff * (diff * diff * inv_var - 1.0);
    }
}

/// Categorical distribution held as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self {
            log_probs: log_softmax(logits),
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_prob(&self, index: usize) -> Result<f64> {
        self.log_probs
            .get(index)
            .copied()
            .ok_or_else(|| Error::Argument(format!("category {index} out of range")))
    }

    /// Inverse-CDF draw from a single uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, lp) in self.log_probs.iter().enumerate() {
            let p = lp.exp();
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last_positive
    }
}

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        gaussian_logprob(&self.mean, &self.log_std, action)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s.exp() * e
            })
            .collect()
    }
}
