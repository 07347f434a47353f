use serde::{Deserialize, Serialize};

use super::baselines::BaselineSet;
use crate::rollout::{mean_std, Batch, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-trajectory manager (per segment) and step advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub manager: Vec<Vec<f64>>,
    pub step: Vec<Vec<f64>>,
    pub manager_raw: Vec<Vec<f64>>,
    pub step_raw: Vec<Vec<f64>>,
    pub manager_stats: NormStats,
    pub step_stats: NormStats,
}

impl AdvantageSet {
    /// Uses the given values directly (no normalization).
    pub fn from_raw(manager: Vec<Vec<f64>>, step: Vec<Vec<f64>>) -> Self {
        Self {
            manager: manager.clone(),
            step: step.clone(),
            manager_raw: manager,
            step_raw: step,
            manager_stats: NormStats { mean: 0.0, std: 1.0 },
            step_stats: NormStats { mean: 0.0, std: 1.0 },
        }
    }

    pub fn check_shape(&self, batch: &Batch) -> Result<()> {
        let ok = self.manager.len() == batch.trajectories.len()
            && self.step.len() == batch.trajectories.len()
            && batch
                .trajectories
                .iter()
                .enumerate()
                .all(|(i, t)| self.manager[i].len() == t.segments.len() && self.step[i].len() == t.len());
        if !ok {
            return Err(Error::Argument("advantages do not match the batch".into()));
        }
        Ok(())
    }
}

/// GAE over step-level TD residuals of `b_l` (terminal value 0).
pub fn step_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// Semi-MDP GAE over segments: reward `sum gamma^(t-start) r_t`, discount
/// `gamma^len` between decisions.
pub fn segment_gae(traj: &Trajectory, values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    let m = traj.segments.len();
    let mut adv = vec![0.0; m];
    let mut acc = 0.0;
    for k in (0..m).rev() {
        let seg = &traj.segments[k];
        if seg.len == 0 {
            return Err(Error::Internal(format!("segment {k} is empty")));
        }
        let r: f64 = seg
            .steps()
            .enumerate()
            .map(|(i, t)| gamma.powi(i as i32) * traj.rewards[t])
            .sum();
        let disc = gamma.powi(seg.len as i32);
        let next = if k + 1 < m { values[k + 1] } else { 0.0 };
        let delta = r + disc * next - values[k];
        acc = delta + disc * lambda * acc;
        adv[k] = acc;
    }
    Ok(adv)
}

fn normalize(xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, NormStats) {
    let flat: Vec<f64> = xs.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&flat);
    let d = std.max(1e-8);
    (
        xs.iter().map(|v| v.iter().map(|x| (x - mean) / d).collect()).collect(),
        NormStats { mean, std },
    )
}

/// Manager and step advantages for every trajectory, each level normalized
/// to zero mean and unit std over the batch when `normalize_adv` is set.
pub fn estimate_advantages(
    batch: &Batch,
    baselines: &BaselineSet,
    gamma: f64,
    lambda: f64,
    normalize_adv: bool,
) -> Result<AdvantageSet> {
    let mut manager_raw = Vec::with_capacity(batch.trajectories.len());
    let mut step_raw = Vec::with_capacity(batch.trajectories.len());
    for traj in &batch.trajectories {
        manager_raw.push(segment_gae(traj, &baselines.high_values(traj)?, gamma, lambda)?);
        step_raw.push(step_gae(&traj.rewards, &baselines.low_values(traj)?, gamma, lambda));
    }
    if let Some(x) = manager_raw.iter().chain(&step_raw).flatten().find(|x| !x.is_finite()) {
        return Err(Error::numerical("advantages", format!("non-finite advantage {x}")));
    }
    if !normalize_adv {
        return Ok(AdvantageSet::from_raw(manager_raw, step_raw));
    }
    let (manager, manager_stats) = normalize(&manager_raw);
    let (step, step_stats) = normalize(&step_raw);
    Ok(AdvantageSet {
        manager,
        step,
        manager_raw,
        step_raw,
        manager_stats,
        step_stats,
    })
}
