use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csv_err;
use crate::envs::{perturb, EnvConfig, PerturbationSpec};
use crate::hierpolicy::AnyPolicy;
use crate::rollout::{mean_std, trajectory_seeds, Sampler};
use crate::seeding;
use crate::{Error, Result};

/// A trained policy together with the rollout rule it is evaluated under.
#[derive(Debug, Clone)]
pub struct EvalPolicy {
    pub name: String,
    pub policy: AnyPolicy,
    /// Time-commitment bounds (hierarchical policies).
    pub p_min: usize,
    pub p_max: usize,
    /// Action repeat (flat policies).
    pub repeat: usize,
}

impl EvalPolicy {
    fn sampler(&self) -> Sampler<'_> {
        match &self.policy {
            AnyPolicy::Hier(policy) => Sampler::Hier {
                policy,
                p_min: self.p_min,
                p_max: self.p_max,
            },
            AnyPolicy::Flat(policy) => Sampler::Flat {
                policy,
                repeat: self.repeat,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub algo: String,
    pub env: String,
    /// `initial` for the unperturbed environment.
    pub perturbation: String,
    pub return_mean: f64,
    pub return_std: f64,
    pub pct_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub cells: Vec<TransferCell>,
}

/// `(perturbed - initial) / |initial|`; 0 when the two are equal.
pub fn pct_change(initial: f64, perturbed: f64) -> f64 {
    if perturbed == initial {
        0.0
    } else {
        (perturbed - initial) / initial.abs()
    }
}

impl TransferTable {
    pub fn extend(&mut self, other: TransferTable) {
        self.cells.extend(other.cells);
    }

    fn perturbed(&self, algo: &str) -> impl Iterator<Item = &TransferCell> {
        let algo = algo.to_string();
        self.cells
            .iter()
            .filter(move |c| c.algo == algo && c.perturbation != "initial")
    }

    /// Cells (env, perturbation) where `a` degrades no more than `b`, and the
    /// number of cells compared.
    pub fn win_count(&self, a: &str, b: &str) -> (usize, usize) {
        let mut wins = 0;
        let mut total = 0;
        for ca in self.perturbed(a) {
            if let Some(cb) = self
                .perturbed(b)
                .find(|cb| cb.env == ca.env && cb.perturbation == ca.perturbation)
            {
                total += 1;
                if ca.pct_change >= cb.pct_change {
                    wins += 1;
                }
            }
        }
        (wins, total)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for c in &self.cells {
            w.serialize(c).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_return(p: &EvalPolicy, env: &EnvConfig, n_rollouts: usize, seed: u64) -> Result<(f64, f64)> {
    let sampler = p.sampler();
    let mut returns = Vec::with_capacity(n_rollouts);
    for j in 0..n_rollouts as u64 {
        let (env_seed, rng_seed) = trajectory_seeds(seed, 0, j);
        let traj = sampler.rollout(env, env_seed, env.horizon, &mut seeding::rng(rng_seed))?;
        returns.push(traj.total_return);
    }
    Ok(mean_std(&returns))
}

/// Evaluates every policy on `base_env` and on each perturbation of it, with
/// the same episode seeds in every cell. Parameters are never updated.
pub fn zero_shot_eval(
    policies: &[EvalPolicy],
    env_name: &str,
    base_env: &EnvConfig,
    suite: &[PerturbationSpec],
    n_rollouts: usize,
    seed: u64,
) -> Result<TransferTable> {
    if n_rollouts == 0 {
        return Err(Error::Argument("need at least one rollout per cell".into()));
    }
    for p in policies {
        if p.policy.obs_dim() != base_env.obs_dim() || p.policy.action_space() != base_env.action_space() {
            return Err(Error::Config(format!(
                "policy `{}` does not match environment `{env_name}` (obs {} vs {}, actions {:?} vs {:?})",
                p.name,
                p.policy.obs_dim(),
                base_env.obs_dim(),
                p.policy.action_space(),
                base_env.action_space()
            )));
        }
    }
    let envs: Vec<(String, EnvConfig)> = std::iter::once(Ok(("initial".to_string(), base_env.clone())))
        .chain(suite.iter().map(|s| Ok((s.name.to_string(), perturb(base_env, s)?))))
        .collect::<Result<_>>()?;
    let mut table = TransferTable::default();
    for p in policies {
        let mut initial = 0.0;
        for (label, env) in &envs {
            let (m, s) = mean_return(p, env, n_rollouts, seed)?;
            if label == "initial" {
                initial = m;
            }
            table.cells.push(TransferCell {
                algo: p.name.clone(),
                env: env_name.to_string(),
                perturbation: label.clone(),
                return_mean: m,
                return_std: s,
                pct_change: pct_change(initial, m),
            });
        }
    }
    Ok(table)
}
