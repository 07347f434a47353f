//! Measurement tools: skill diversity and gradient-approximation
//! diagnostics, zero-shot transfer tables, estimator variance and
//! sensitivity sweeps.

mod sweep;
mod transfer;
mod unbiased;
mod variance;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepRow};
pub use transfer::{zero_shot_eval, EvalPolicy, TransferCell, TransferTable};
pub use unbiased::{baseline_zero_mean, ZeroMeanStat};
pub use variance::{
    estimator_variance, single_trajectory_gradients, trace_of_covariance, VarianceRow, VarianceSettings,
};

use crate::diffcore::GradientVector;
use crate::envs::{Action, EnvConfig};
use crate::grads::{approx_logprob_grad, exact_logprob_grad};
use crate::hierpolicy::{ActionDist, HierPolicy, LatentCode};
use crate::rollout::{collect_batch, mean_std, Batch, BatchSize, Sampler};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        Self { mean, std }
    }
}

/// Cosine similarity, exactly 1 for bitwise-equal nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|x| *x != 0.0) {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `|exact - approx| / |exact|`.
pub fn relative_error(exact: &GradientVector, approx: &GradientVector) -> f64 {
    let d = exact
        .values
        .iter()
        .zip(&approx.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let n = exact.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        d / n
    }
}

/// Per-step probability the active skill gives the executed action, and the
/// largest probability any other skill gives it. For Gaussian skills both are
/// densities and the second is reported as a ratio to the first.
fn step_diversity(
    policy: &HierPolicy,
    obs: &[f64],
    z: LatentCode,
    tr: usize,
    a: &Action,
) -> Result<(f64, Option<f64>)> {
    let lp = |zz: usize| -> Result<f64> { policy.skill_dist(obs, LatentCode(zz), tr)?.log_prob(a) };
    let own = lp(z.0)?;
    let mut other: Option<f64> = None;
    for zz in (0..policy.n()).filter(|&zz| zz != z.0) {
        let v = lp(zz)?;
        other = Some(other.map_or(v, |o| o.max(v)));
    }
    let gaussian = matches!(policy.skill_dist(obs, z, tr)?, ActionDist::Gaussian(_));
    Ok(if gaussian {
        (own.exp(), other.map(|o| (o - own).exp()))
    } else {
        (own.exp(), other.map(f64::exp))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchDiversity {
    /// `None` when the policy has a single skill.
    pub eps_hat: Option<f64>,
    pub own_prob: f64,
}

/// Mean diversity statistics over every step of a hierarchical batch.
pub fn batch_diversity(policy: &HierPolicy, batch: &Batch) -> Result<BatchDiversity> {
    let (own, eps) = diversity_samples(policy, batch)?;
    Ok(BatchDiversity {
        eps_hat: (!eps.is_empty()).then(|| MeanStd::of(&eps).mean),
        own_prob: MeanStd::of(&own).mean,
    })
}

fn diversity_samples(policy: &HierPolicy, batch: &Batch) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut own = Vec::new();
    let mut eps = Vec::new();
    for traj in &batch.trajectories {
        for seg in &traj.segments {
            for t in seg.steps() {
                let (o, e) = step_diversity(policy, &traj.obs[t], seg.z, traj.time_remaining[t], &traj.actions[t])?;
                own.push(o);
                eps.extend(e);
            }
        }
    }
    Ok((own, eps))
}

/// Probe episodes used for the diversity diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityProbe {
    pub horizon: usize,
    pub p_min: usize,
    pub p_max: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for DiversityProbe {
    fn default() -> Self {
        Self {
            horizon: 32,
            p_min: 5,
            p_max: 15,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub tag: String,
    pub trajectories: usize,
    pub cos_sim: MeanStd,
    pub rel_err: MeanStd,
    /// Empty (`None`) for single-skill policies.
    pub eps_hat: Option<MeanStd>,
    pub own_prob: MeanStd,
    /// Gaussian skills: `eps_hat` holds density ratios, `own_prob` densities.
    pub density_ratio: bool,
    /// Some probe trajectories were refused by the exact oracle.
    pub partial: bool,
}

/// Collects `n_traj` short probe episodes and compares the exact and
/// approximate log-likelihood gradients on each.
pub fn diversity_report(
    policy: &HierPolicy,
    env: &EnvConfig,
    n_traj: usize,
    tag: &str,
    probe: &DiversityProbe,
) -> Result<DiversityReport> {
    if n_traj == 0 {
        return Err(Error::Argument("diversity report needs at least one trajectory".into()));
    }
    let sampler = Sampler::Hier {
        policy,
        p_min: probe.p_min,
        p_max: probe.p_max,
    };
    let batch = collect_batch(
        env,
        sampler,
        BatchSize::trajectories(n_traj),
        probe.horizon,
        probe.workers,
        probe.seed,
        0,
    )?;
    let mut cos = Vec::new();
    let mut rel = Vec::new();
    let mut partial = false;
    for traj in &batch.trajectories {
        match exact_logprob_grad(policy, traj) {
            Ok(exact) => {
                let approx = approx_logprob_grad(policy, traj)?;
                cos.push(cosine(&exact.values, &approx.values));
                rel.push(relative_error(&exact, &approx));
            }
            Err(Error::Budget(_)) => partial = true,
            Err(e) => return Err(e),
        }
    }
    let (own, eps) = diversity_samples(policy, &batch)?;
    Ok(DiversityReport {
        tag: tag.to_string(),
        trajectories: cos.len(),
        cos_sim: MeanStd::of(&cos),
        rel_err: MeanStd::of(&rel),
        eps_hat: (!eps.is_empty()).then(|| MeanStd::of(&eps)),
        own_prob: MeanStd::of(&own),
        density_ratio: matches!(policy.spec.action_space, crate::envs::ActionSpace::Gaussian(_)),
        partial,
    })
}

#[derive(Serialize)]
struct DiversityCsvRow<'a> {
    tag: &'a str,
    cos_sim_mean: f64,
    cos_sim_std: f64,
    eps_mean: Option<f64>,
    eps_std: Option<f64>,
    own_mean: f64,
    own_std: f64,
    rel_err_mean: f64,
    partial: bool,
}

pub fn write_diversity_csv(path: &Path, reports: &[DiversityReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in reports {
        w.serialize(DiversityCsvRow {
            tag: &r.tag,
            cos_sim_mean: r.cos_sim.mean,
            cos_sim_std: r.cos_sim.std,
            eps_mean: r.eps_hat.map(|e| e.mean),
            eps_std: r.eps_hat.map(|e| e.std),
            own_mean: r.own_prob.mean,
            own_std: r.own_prob.std,
            rel_err_mean: r.rel_err.mean,
            partial: r.partial,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests;
