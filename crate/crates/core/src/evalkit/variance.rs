use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::grads::{estimate_advantages, fit_baselines, hier_vpg_gradient, BaselineConfig, BaselineMode, BaselineSet};
use crate::hierpolicy::HierPolicy;
use crate::rollout::{collect_batch, Batch, BatchSize, Sampler};
use crate::seeding;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub mode: BaselineMode,
    pub samples: usize,
    /// Trace of the empirical covariance of the single-trajectory estimates.
    pub trace: f64,
    pub mean_norm: f64,
}

/// Settings shared by every mode of a variance study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSettings {
    pub p_min: usize,
    pub p_max: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Trajectories used to fit the baselines (disjoint from the measured ones).
    pub fit_trajectories: usize,
    pub baseline_fit: BaselineConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for VarianceSettings {
    fn default() -> Self {
        Self {
            p_min: 5,
            p_max: 15,
            horizon: 400,
            gamma: 0.999,
            fit_trajectories: 200,
            baseline_fit: BaselineConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

/// Sum over coordinates of the unbiased sample variance.
pub fn trace_of_covariance(samples: &[Vec<f64>]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n as f64;
        }
    }
    let mut tr = 0.0;
    for s in samples {
        tr += s.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    tr / (n - 1) as f64
}

/// One unclipped hierarchical gradient estimate per trajectory, with raw
/// (unnormalized) Monte Carlo advantages.
pub fn single_trajectory_gradients(
    policy: &HierPolicy,
    batch: &Batch,
    baselines: &BaselineSet,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    batch
        .trajectories
        .iter()
        .map(|traj| {
            let one = Batch {
                trajectories: vec![traj.clone()],
                iteration: batch.iteration,
                policy_hash: batch.policy_hash,
            };
            let adv = estimate_advantages(&one, baselines, gamma, 1.0, false)?;
            Ok(hier_vpg_gradient(&one, &adv, policy)?.values)
        })
        .collect()
}

/// Trace of the covariance of the single-trajectory gradient estimator under
/// each baseline mode. All modes see the same `n` trajectories.
pub fn estimator_variance(
    policy: &HierPolicy,
    env: &EnvConfig,
    modes: &[BaselineMode],
    n: usize,
    settings: &VarianceSettings,
) -> Result<Vec<VarianceRow>> {
    if n < 2 {
        return Err(Error::Argument("variance needs at least two samples".into()));
    }
    let sampler = Sampler::Hier {
        policy,
        p_min: settings.p_min,
        p_max: settings.p_max,
    };
    let collect = |count: usize, iteration: u64| {
        collect_batch(
            env,
            sampler,
            BatchSize::trajectories(count),
            settings.horizon,
            settings.workers,
            settings.seed,
            iteration,
        )
    };
    let measured = collect(n, 0)?;
    let fit_batch = collect(settings.fit_trajectories.max(1), 1)?;
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut baselines = BaselineSet::new(
            mode,
            policy.spec.obs_dim,
            policy.n(),
            policy.spec.time_scale,
            &settings.baseline_fit,
            seeding::derive(settings.seed, &[2]),
        )?;
        fit_baselines(&mut baselines, &fit_batch, settings.gamma, &settings.baseline_fit)?;
        let g = single_trajectory_gradients(policy, &measured, &baselines, settings.gamma)?;
        let mean_norm = g
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / g.len() as f64;
        rows.push(VarianceRow {
            mode,
            samples: g.len(),
            trace: trace_of_covariance(&g),
            mean_norm,
        });
    }
    Ok(rows)
}
