use serde::{Deserialize, Serialize};

use super::params::{GradientVector, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (or plain SGD) over a flat parameter vector. Steps *descend* the
/// supplied gradient; pass the gradient of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn adam(lr: f64, n: usize) -> Self {
        Self::new(OptimizerKind::Adam, lr, n)
    }

    /// Applies one update. Entries whose `mask` is false are left untouched
    /// (their moments are not advanced either).
    pub fn step(&mut self, params: &mut ParamVector, grad: &GradientVector, mask: Option<&[bool]>) -> Result<()> {
        if grad.values.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Internal("optimizer / parameter size mismatch".into()));
        }
        grad.check_finite()?;
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let vals = params.values_mut();
        for i in 0..vals.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grad.values[i];
            match self.kind {
                OptimizerKind::Sgd => vals[i] -= self.lr * g,
                OptimizerKind::Adam => {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mh = self.m[i] / bc1;
                    let vh = self.v[i] / bc2;
                    vals[i] -= self.lr * mh / (vh.sqrt() + self.eps);
                }
            }
        }
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                params.layout().segment_of(i).unwrap_or("?").to_string(),
                "parameter became non-finite after update",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::params::{Layout, SegmentSpec};

    #[test]
    fn adam_minimizes_quadratic_and_respects_mask() {
        let l = Layout::new(vec![SegmentSpec::new("x", vec![2])]).unwrap();
        let mut p = ParamVector::from_values(l.clone(), vec![3.0, -2.0]).unwrap();
        let mut opt = Optimizer::adam(0.05, 2);
        for _ in 0..2000 {
            let g = GradientVector {
                values: p.values().iter().map(|v| 2.0 * v).collect(),
                layout: l.clone(),
            };
            opt.step(&mut p, &g, Some(&[true, false])).unwrap();
        }
        assert!(p.values()[0].abs() < 1e-3);
        assert_eq!(p.values()[1], -2.0);
    }

    #[test]
    fn sgd_step() {
        let l = Layout::new(vec![SegmentSpec::new("x", vec![1])]).unwrap();
        let mut p = ParamVector::from_values(l.clone(), vec![1.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 1);
        opt.step(
            &mut p,
            &GradientVector {
                values: vec![2.0],
                layout: l,
            },
            None,
        )
        .unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
    }
}
