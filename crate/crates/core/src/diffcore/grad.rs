use super::params::{GradientVector, ParamVector};
use crate::{Error, Result};

/// A scalar function of a parameter vector with an analytic gradient.
///
/// Every policy loss in the crate implements this with hand-derived
/// reverse-mode gradients through the MLPs.
pub trait Loss {
    fn value(&self, params: &ParamVector) -> Result<f64>;
    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, GradientVector)>;
}

/// Gradient of `loss` at `params`, checked for finiteness.
pub fn grad<L: Loss + ?Sized>(loss: &L, params: &ParamVector) -> Result<GradientVector> {
    let (v, g) = loss.value_and_grad(params)?;
    if !v.is_finite() {
        return Err(Error::numerical("loss", format!("non-finite loss value {v}")));
    }
    g.check_finite()?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Flat index and segment name of the worst entry.
    pub worst_index: usize,
    pub worst_segment: String,
    pub pass: bool,
}

/// Compares the analytic gradient of `loss` with central differences.
///
/// Relative error per entry is `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn finite_diff_check<L: Loss + ?Sized>(loss: &L, params: &ParamVector, step: f64, tol: f64) -> Result<FdReport> {
    if !(step > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let analytic = grad(loss, params)?;
    let mut probe = params.values().to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss.value(&params.with_values(probe.clone())?)?;
        probe[i] = orig - step;
        let down = loss.value(&params.with_values(probe.clone())?)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.values[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        if rel > worst.0 || !rel.is_finite() {
            worst = (if rel.is_finite() { rel } else { f64::INFINITY }, i);
        }
    }
    Ok(FdReport {
        max_rel_err: worst.0,
        worst_index: worst.1,
        worst_segment: params.layout().segment_of(worst.1).unwrap_or("").to_string(),
        pass: worst.0 < tol,
    })
}

/// Wraps a loss and multiplies one entry of its analytic gradient; used as
/// a negative control for [`finite_diff_check`].
pub struct CorruptedGradient<'a, L: Loss + ?Sized> {
    pub inner: &'a L,
    pub index: usize,
    pub factor: f64,
}

impl<L: Loss + ?Sized> Loss for CorruptedGradient<'_, L> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        self.inner.value(params)
    }

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, GradientVector)> {
        let (v, mut g) = self.inner.value_and_grad(params)?;
        g.values[self.index] *= self.factor;
        Ok((v, g))
    }
}
