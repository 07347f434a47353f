use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::grads::{baseline_terms, BaselineSet};
use crate::hierpolicy::HierPolicy;
use crate::rollout::{collect_batch, mean_std, BatchSize, Sampler};
use crate::seeding;
use crate::{Error, Result};

use super::DiversityProbe;

/// Monte Carlo mean of one baseline-only gradient term, projected on a
/// fixed random unit direction inside one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroMeanStat {
    /// `manager` (b_h term) or `skills` (b_l term).
    pub term: String,
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl ZeroMeanStat {
    /// `|mean| / std_err`.
    pub fn z_score(&self) -> f64 {
        if self.std_err == 0.0 {
            if self.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.mean.abs() / self.std_err
        }
    }
}

fn unit_direction(len: usize, seed: u64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = seeding::derived_rng(seed, &[0xD1]);
    let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Checks that the baseline-only terms average to zero: each term is
/// restricted to the parameter block it acts on and projected on a random
/// direction, giving one scalar per trajectory.
pub fn baseline_zero_mean(
    policy: &HierPolicy,
    env: &EnvConfig,
    baselines: &BaselineSet,
    n_traj: usize,
    probe: &DiversityProbe,
) -> Result<Vec<ZeroMeanStat>> {
    if n_traj < 2 {
        return Err(Error::Argument("need at least two trajectories".into()));
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
    let (mr, sr) = (policy.manager_range(), policy.skill_range());
    let dm = unit_direction(mr.len(), probe.seed);
    let ds = unit_direction(sr.len(), seeding::derive(probe.seed, &[1]));
    let mut xm = Vec::with_capacity(n_traj);
    let mut xs = Vec::with_capacity(n_traj);
    for traj in &batch.trajectories {
        let (gh, gl) = baseline_terms(policy, traj, baselines)?;
        xm.push(gh.values[mr.clone()].iter().zip(&dm).map(|(g, d)| g * d).sum::<f64>());
        xs.push(gl.values[sr.clone()].iter().zip(&ds).map(|(g, d)| g * d).sum::<f64>());
    }
    let stat = |term: &str, x: &[f64]| {
        let (m, s) = mean_std(x);
        let n = x.len() as f64;
        // Sample std with Bessel's correction.
        let sd = s * (n / (n - 1.0)).sqrt();
        ZeroMeanStat {
            term: term.to_string(),
            mean: m,
            std_err: sd / n.sqrt(),
            samples: x.len(),
        }
    };
    Ok(vec![stat("manager", &xm), stat("skills", &xs)])
}
