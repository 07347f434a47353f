use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionDist, HierPolicy, HierSpec, LatentCode};
use crate::diffcore::dist::softmax;
use crate::diffcore::{Categorical, Checkpoint, GradientVector, Optimizer};
use crate::envs::{self, Action, ActionSpace, EnvConfig, EnvKind};
use crate::seeding;
use crate::{Error, Result};

/// Which behavioural rule each scripted skill follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillRule {
    /// Skill `k` keeps moving in compass direction `round(8k/n) mod 8`.
    GatherDirection,
    /// Skill `k` repeats discrete action `k`.
    BlocksAction,
}

/// Fixed state-independent skills: skill `k` puts logit `sharpness` on its
/// preferred action and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSkillSet {
    pub rule: SkillRule,
    pub n: usize,
    pub num_actions: usize,
    pub sharpness: f64,
}

impl ScriptedSkillSet {
    pub const DEFAULT_SHARPNESS: f64 = 4.5;

    pub fn gather(n: usize, sharpness: f64) -> Result<Self> {
        if !(1..=8).contains(&n) {
            return Err(Error::Config(format!(
                "gather scripted skills need 1 <= n <= 8, got {n}"
            )));
        }
        Ok(Self {
            rule: SkillRule::GatherDirection,
            n,
            num_actions: envs::GATHER_ACTIONS,
            sharpness,
        })
    }

    pub fn blocks(n: usize, num_actions: usize, sharpness: f64) -> Result<Self> {
        if n == 0 || n > num_actions {
            return Err(Error::Config(format!(
                "blocks scripted skills need 1 <= n <= {num_actions} actions, got {n}"
            )));
        }
        Ok(Self {
            rule: SkillRule::BlocksAction,
            n,
            num_actions,
            sharpness,
        })
    }

    pub fn for_env(env: &EnvConfig, n: usize, sharpness: f64) -> Result<Self> {
        match (env.kind, env.action_space()) {
            (EnvKind::DiscreteGather, _) => Self::gather(n, sharpness),
            (EnvKind::ChainBlocks, ActionSpace::Categorical(m)) => Self::blocks(n, m, sharpness),
            (EnvKind::ChainBlocks, ActionSpace::Gaussian(_)) => {
                Err(Error::Config("scripted skills require a discrete action space".into()))
            }
        }
    }

    pub fn preferred_action(&self, z: LatentCode) -> usize {
        match self.rule {
            SkillRule::GatherDirection => ((z.0 * 8) as f64 / self.n as f64).round() as usize % 8,
            SkillRule::BlocksAction => z.0,
        }
    }

    pub fn logits(&self, z: LatentCode) -> Vec<f64> {
        let mut l = vec![0.0; self.num_actions];
        l[self.preferred_action(z)] = self.sharpness;
        l
    }

    pub fn dist(&self, _obs: &[f64], z: LatentCode) -> Result<ActionDist> {
        if z.0 >= self.n {
            return Err(Error::Argument(format!(
                "latent {} out of range for n = {}",
                z.0, self.n
            )));
        }
        Ok(ActionDist::Categorical(Categorical::from_logits(&self.logits(z))))
    }

    /// Probability a skill assigns to its own preferred action.
    pub fn own_prob(&self) -> f64 {
        let e = self.sharpness.exp();
        e / (e + (self.num_actions - 1) as f64)
    }

    /// Probability any other skill assigns to that action.
    pub fn off_prob(&self) -> f64 {
        1.0 / (self.sharpness.exp() + (self.num_actions - 1) as f64)
    }

    /// Sharpness at which `off_prob` equals `eps_div`.
    pub fn sharpness_for(eps_div: f64, num_actions: usize) -> f64 {
        (1.0 / eps_div - (num_actions - 1) as f64).max(1e-12).ln()
    }
}

/// Total variation distance between two categorical distributions.
pub fn total_variation(a: &ActionDist, b: &ActionDist) -> Result<f64> {
    match (a, b) {
        (ActionDist::Categorical(p), ActionDist::Categorical(q)) if p.len() == q.len() => {
            Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(x, y)| (x - y).abs()).sum::<f64>())
        }
        _ => Err(Error::Argument(
            "total variation needs two categoricals of equal size".into(),
        )),
    }
}

/// Observations visited by a uniformly random policy, used as the
/// behaviour-cloning probe set.
pub fn probe_observations(env: &EnvConfig, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut rng = seeding::derived_rng(seed, &[0x9B0B]);
    let space = env.action_space();
    let mut episode = 0u64;
    while out.len() < count {
        let (mut state, mut obs) = envs::reset(env, seeding::derive(seed, &[episode]))?;
        episode += 1;
        loop {
            if rng.random::<f64>() < 0.25 {
                out.push(obs.flat());
                if out.len() == count {
                    break;
                }
            }
            let a = match space {
                ActionSpace::Categorical(m) => Action::Discrete(rng.random_range(0..m)),
                ActionSpace::Gaussian(d) => Action::Continuous((0..d).map(|_| rng.random_range(-1.0..3.0)).collect()),
            };
            let r = state.step(&a)?;
            obs = r.obs;
            if r.done {
                break;
            }
        }
    }
    Ok(out)
}

/// Where adapted skills come from.
#[derive(Debug, Clone)]
pub enum PretrainedSource {
    Scripted {
        skills: ScriptedSkillSet,
        probes: Vec<Vec<f64>>,
        tol: f64,
    },
    Checkpoint(Checkpoint),
}

/// Builds a policy whose skill network reproduces `source` and whose manager
/// is freshly initialized from `seed`.
pub fn load_pretrained(spec: HierSpec, source: &PretrainedSource, seed: u64) -> Result<HierPolicy> {
    let mut policy = HierPolicy::new(spec, seed)?;
    match source {
        PretrainedSource::Checkpoint(ck) => {
            let other = HierPolicy::from_checkpoint(ck)?;
            if other.spec.n != policy.spec.n {
                return Err(Error::Config(format!(
                    "checkpoint has n = {} skills, policy expects {}",
                    other.spec.n, policy.spec.n
                )));
            }
            if other.layout() != policy.layout() {
                return Err(Error::Config(
                    "checkpoint skill architecture differs from policy".into(),
                ));
            }
            let r = policy.skill_range();
            let mut vals = policy.params.values().to_vec();
            vals[r.clone()].copy_from_slice(&other.params.values()[r]);
            policy.params = policy.params.with_values(vals)?;
            Ok(policy)
        }
        PretrainedSource::Scripted { skills, probes, tol } => {
            clone_skills(&mut policy, skills, probes, *tol, seed)?;
            Ok(policy)
        }
    }
}

/// Worst total variation between policy skills and the script over the
/// probe inputs, with its (probe, z, time_remaining) location.
pub fn clone_residual(
    policy: &HierPolicy,
    skills: &ScriptedSkillSet,
    inputs: &[(usize, usize)],
    probes: &[Vec<f64>],
) -> Result<(f64, usize, usize, usize)> {
    let mut worst = (0.0, 0, 0, 0);
    for &(i, tr) in inputs {
        for z in 0..skills.n {
            let tv = total_variation(
                &policy.skill_dist(&probes[i], LatentCode(z), tr)?,
                &skills.dist(&probes[i], LatentCode(z))?,
            )?;
            if tv > worst.0 {
                worst = (tv, i, z, tr);
            }
        }
    }
    Ok(worst)
}

fn clone_skills(
    policy: &mut HierPolicy,
    skills: &ScriptedSkillSet,
    probes: &[Vec<f64>],
    tol: f64,
    seed: u64,
) -> Result<()> {
    if skills.n != policy.spec.n {
        return Err(Error::Config(format!(
            "scripted set has {} skills, policy expects n = {}",
            skills.n, policy.spec.n
        )));
    }
    if policy.spec.action_space != ActionSpace::Categorical(skills.num_actions) {
        return Err(Error::Config("scripted skills and policy action spaces differ".into()));
    }
    if probes.is_empty() {
        return Err(Error::Argument(
            "behaviour cloning needs at least one probe state".into(),
        ));
    }
    let mut rng = seeding::derived_rng(seed, &[0xC10E]);
    let p_max = policy.spec.time_scale.round().max(1.0) as usize;
    let inputs: Vec<(usize, usize)> = (0..probes.len())
        .flat_map(|i| [(i, 1), (i, p_max), (i, rng.random_range(1..=p_max))])
        .collect();
    let targets: Vec<Vec<f64>> = (0..skills.n).map(|z| softmax(&skills.logits(LatentCode(z)))).collect();
    let range = policy.skill_range();
    let mask: Vec<bool> = (0..policy.params.len()).map(|i| range.contains(&i)).collect();
    let mut opt = Optimizer::adam(1e-2, policy.params.len());
    let count = (inputs.len() * skills.n) as f64;
    let mut worst = (f64::INFINITY, 0, 0, 0);
    for it in 0..4000 {
        if it % 50 == 0 {
            worst = clone_residual(policy, skills, &inputs, probes)?;
            if worst.0 <= 0.25 * tol {
                break;
            }
        }
        // Cross-entropy to the scripted distribution, averaged over (probe, z).
        let theta = policy.params.values().to_vec();
        let mut g = GradientVector::zeros(policy.layout());
        for &(i, tr) in &inputs {
            for (z, target) in targets.iter().enumerate() {
                for (a, &q) in target.iter().enumerate() {
                    if q < 1e-300 {
                        continue;
                    }
                    policy.skill_logprob_at(
                        &theta,
                        &probes[i],
                        LatentCode(z),
                        tr,
                        &Action::Discrete(a),
                        Some((&mut g.values, -q / count)),
                    )?;
                }
            }
        }
        opt.step(&mut policy.params, &g, Some(&mask))?;
    }
    if worst.0 > 0.25 * tol {
        worst = clone_residual(policy, skills, &inputs, probes)?;
    }
    if worst.0 > tol {
        return Err(Error::Fit(format!(
            "behaviour cloning residual TV {:.4} > {tol} at probe state {} (z = {}, time_remaining = {})",
            worst.0, worst.1, worst.2, worst.3
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_env() -> EnvConfig {
        EnvConfig {
            size: 8,
            n_apples: 4,
            n_bombs: 4,
            ..EnvConfig::gather()
        }
    }

    #[test]
    fn gather_skill_puts_mass_on_its_direction() {
        let s = ScriptedSkillSet::gather(6, ScriptedSkillSet::DEFAULT_SHARPNESS).unwrap();
        let dirs: Vec<usize> = (0..6).map(|z| s.preferred_action(LatentCode(z))).collect();
        assert_eq!(dirs, vec![0, 1, 3, 4, 5, 7]);
        let obs = vec![0.0; 19];
        for z in 0..6 {
            let ActionDist::Categorical(c) = s.dist(&obs, LatentCode(z)).unwrap() else {
                unreachable!()
            };
            let p = c.probs();
            // Independent evaluation: e^b / (e^b + 8).
            let own = 4.5f64.exp() / (4.5f64.exp() + 8.0);
            assert!((p[dirs[z]] - own).abs() < 1e-12);
            assert!(p[dirs[z]] >= 0.9);
            for (zz, &d) in dirs.iter().enumerate() {
                if zz != z {
                    assert!(p[d] < 0.05);
                }
            }
        }
    }

    #[test]
    fn sharpness_for_inverts_off_prob() {
        let b = ScriptedSkillSet::sharpness_for(0.02, 9);
        let s = ScriptedSkillSet::gather(4, b).unwrap();
        assert!((s.off_prob() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn blocks_skill_count_bounded_by_actions() {
        assert!(ScriptedSkillSet::blocks(6, 5, 4.0).is_err());
        assert!(ScriptedSkillSet::blocks(5, 5, 4.0).is_ok());
        let cont = EnvConfig {
            continuous: true,
            ..EnvConfig::blocks()
        };
        assert!(ScriptedSkillSet::for_env(&cont, 2, 4.0).is_err());
    }

    fn spec(env: &EnvConfig, n: usize) -> HierSpec {
        HierSpec::for_env(env, n, true, 15.0)
    }

    #[test]
    fn cloned_skills_within_tolerance() {
        let env = small_env();
        let skills = ScriptedSkillSet::gather(4, 4.5).unwrap();
        let probes = probe_observations(&env, 48, 1).unwrap();
        let src = PretrainedSource::Scripted {
            skills: skills.clone(),
            probes: probes.clone(),
            tol: 0.05,
        };
        let p = load_pretrained(spec(&env, 4), &src, 3).unwrap();
        for obs in &probes {
            for z in 0..4 {
                for tr in 1..=15 {
                    let tv = total_variation(
                        &p.skill_dist(obs, LatentCode(z), tr).unwrap(),
                        &skills.dist(obs, LatentCode(z)).unwrap(),
                    )
                    .unwrap();
                    assert!(tv <= 0.05, "tv {tv} z {z} tr {tr}");
                }
            }
        }
        // Held-out states are looser: the fit only sees the probe set.
        for obs in probe_observations(&env, 10, 99).unwrap() {
            for z in 0..4 {
                let tv = total_variation(
                    &p.skill_dist(&obs, LatentCode(z), 7).unwrap(),
                    &skills.dist(&obs, LatentCode(z)).unwrap(),
                )
                .unwrap();
                assert!(tv <= 0.15, "held-out tv {tv}");
            }
        }
        // Manager is the fresh initialization for the seed.
        let fresh = HierPolicy::new(spec(&env, 4), 3).unwrap();
        let r = p.manager_range();
        assert_eq!(&p.params.values()[r.clone()], &fresh.params.values()[r]);
    }

    #[test]
    fn mismatched_skill_count_and_impossible_fit() {
        let env = small_env();
        let probes = probe_observations(&env, 4, 1).unwrap();
        let src = PretrainedSource::Scripted {
            skills: ScriptedSkillSet::gather(3, 4.5).unwrap(),
            probes: probes.clone(),
            tol: 0.05,
        };
        assert!(matches!(load_pretrained(spec(&env, 4), &src, 0), Err(Error::Config(_))));
        let src = PretrainedSource::Scripted {
            skills: ScriptedSkillSet::gather(4, 4.5).unwrap(),
            probes,
            tol: 0.0,
        };
        match load_pretrained(spec(&env, 4), &src, 0) {
            Err(Error::Fit(msg)) => assert!(msg.contains("probe state")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_source_copies_skills_bit_exact() {
        let env = small_env();
        let donor = HierPolicy::new(spec(&env, 4), 17).unwrap();
        let src = PretrainedSource::Checkpoint(donor.checkpoint(17));
        let p = load_pretrained(spec(&env, 4), &src, 5).unwrap();
        let obs = probe_observations(&env, 3, 2).unwrap();
        for o in &obs {
            assert_eq!(
                p.skill_dist(o, LatentCode(2), 4).unwrap(),
                donor.skill_dist(o, LatentCode(2), 4).unwrap()
            );
        }
        assert_ne!(
            p.manager_dist(&obs[0], 4).unwrap(),
            donor.manager_dist(&obs[0], 4).unwrap()
        );
        let other = PretrainedSource::Checkpoint(HierPolicy::new(spec(&env, 3), 1).unwrap().checkpoint(1));
        assert!(load_pretrained(spec(&env, 4), &other, 5).is_err());
    }
}
