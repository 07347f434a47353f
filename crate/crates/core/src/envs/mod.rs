//! Seeded toy environments: a grid Gather task (collect apples, avoid bombs,
//! lidar perception) and a chain Blocks task (jump walls of random height).
//! Every episode draws a fresh layout from its seed.

mod blocks;
mod gather;
mod perturb;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use blocks::BlocksState;
pub use gather::{GatherState, GATHER_ACTIONS, STAY};
pub use perturb::{perturb, standard_suite, PerturbName, PerturbationSpec, DEFAULT_MAGNITUDE};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    DiscreteGather,
    ChainBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dynamics {
    /// Probability that the chosen action is replaced by a no-op.
    pub action_fail_prob: f64,
    /// Movement progress per step (1 = one cell per move).
    pub effect_scale: f64,
    /// Std of Gaussian noise added to every observation feature.
    pub obs_noise_std: f64,
    /// Probability of an extra random one-cell displacement.
    pub drift_prob: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            action_fail_prob: 0.0,
            effect_scale: 1.0,
            obs_noise_std: 0.0,
            drift_prob: 0.0,
        }
    }
}

/// Subtracts `velocity_penalty_coeff * |velocity|` from every reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWrapper {
    pub velocity_penalty_coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Grid side (Gather) or chain length (Blocks).
    pub size: usize,
    pub horizon: usize,
    pub n_apples: usize,
    pub n_bombs: usize,
    /// Lidar sectors per object type.
    pub lidar_bins: usize,
    /// Lidar range in cells.
    pub lidar_range: f64,
    pub wall_spacing: usize,
    pub max_wall_height: usize,
    /// Blocks only: one real-valued action instead of discrete moves.
    pub continuous: bool,
    pub dynamics: Dynamics,
    pub reward: RewardWrapper,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::gather()
    }
}

impl EnvConfig {
    pub fn gather() -> Self {
        Self {
            kind: EnvKind::DiscreteGather,
            size: 12,
            horizon: 400,
            n_apples: 6,
            n_bombs: 6,
            lidar_bins: 8,
            lidar_range: 4.0,
            wall_spacing: 5,
            max_wall_height: 3,
            continuous: false,
            dynamics: Dynamics::default(),
            reward: RewardWrapper::default(),
        }
    }

    pub fn blocks() -> Self {
        Self {
            kind: EnvKind::ChainBlocks,
            size: 60,
            horizon: 200,
            ..Self::gather()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dynamics;
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0,1], got {p}")))
            }
        };
        prob("action_fail_prob", d.action_fail_prob)?;
        prob("drift_prob", d.drift_prob)?;
        if !(d.effect_scale > 0.0) || !d.effect_scale.is_finite() {
            return Err(Error::Config(format!(
                "effect_scale must be > 0, got {}",
                d.effect_scale
            )));
        }
        if !(d.obs_noise_std >= 0.0) {
            return Err(Error::Config("obs_noise_std must be >= 0".into()));
        }
        if !(self.reward.velocity_penalty_coeff >= 0.0) {
            return Err(Error::Config("velocity_penalty_coeff must be >= 0".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        match self.kind {
            EnvKind::DiscreteGather => {
                if self.size < 2 || self.lidar_bins == 0 || !(self.lidar_range > 0.0) {
                    return Err(Error::Config(
                        "gather needs size >= 2, lidar_bins >= 1, lidar_range > 0".into(),
                    ));
                }
                if self.continuous {
                    return Err(Error::Config("gather has no continuous-action variant".into()));
                }
                if self.n_apples + self.n_bombs + 1 > self.size * self.size {
                    return Err(Error::Config(format!(
                        "{} objects plus the agent do not fit in a {}x{} grid",
                        self.n_apples + self.n_bombs,
                        self.size,
                        self.size
                    )));
                }
            }
            EnvKind::ChainBlocks => {
                if self.wall_spacing < 2 || self.max_wall_height == 0 {
                    return Err(Error::Config(
                        "blocks needs wall_spacing >= 2 and max_wall_height >= 1".into(),
                    ));
                }
                if self.size < self.wall_spacing + 2 {
                    return Err(Error::Config("chain too short to hold a wall".into()));
                }
            }
        }
        Ok(())
    }

    pub fn action_space(&self) -> ActionSpace {
        match self.kind {
            EnvKind::DiscreteGather => ActionSpace::Categorical(GATHER_ACTIONS),
            EnvKind::ChainBlocks if self.continuous => ActionSpace::Gaussian(1),
            EnvKind::ChainBlocks => ActionSpace::Categorical(2 + self.max_wall_height),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            EnvKind::DiscreteGather => gather::PROPRIO_DIM + 2 * self.lidar_bins,
            EnvKind::ChainBlocks => blocks::PROPRIO_DIM,
        }
    }

    pub fn num_walls(&self) -> usize {
        blocks::wall_positions(self).len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "dim")]
pub enum ActionSpace {
    Categorical(usize),
    Gaussian(usize),
}

impl ActionSpace {
    /// Network output width for this space.
    pub fn dim(&self) -> usize {
        match *self {
            ActionSpace::Categorical(m) | ActionSpace::Gaussian(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub proprio: Vec<f64>,
    pub lidar: Vec<f64>,
}

impl Observation {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.proprio.len() + self.lidar.len());
        v.extend_from_slice(&self.proprio);
        v.extend_from_slice(&self.lidar);
        v
    }

    pub fn len(&self) -> usize {
        self.proprio.len() + self.lidar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: BTreeMap<String, f64>,
}

impl StepResult {
    pub fn velocity(&self) -> f64 {
        self.info.get("velocity").copied().unwrap_or(0.0)
    }
}

/// `reward - coeff * |velocity|`.
pub fn wrap_reward(result: StepResult, wrapper: &RewardWrapper, velocity: f64) -> StepResult {
    if wrapper.velocity_penalty_coeff == 0.0 {
        return result;
    }
    StepResult {
        reward: result.reward - wrapper.velocity_penalty_coeff * velocity.abs(),
        ..result
    }
}

/// Live episode state.
#[derive(Debug, Clone)]
pub enum EnvState {
    Gather(GatherState),
    Blocks(BlocksState),
}

/// Starts an episode. The layout and all later dynamics noise derive from `seed`.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<(EnvState, Observation)> {
    config.validate()?;
    match config.kind {
        EnvKind::DiscreteGather => {
            let (s, o) = GatherState::new(config.clone(), seed)?;
            Ok((EnvState::Gather(s), o))
        }
        EnvKind::ChainBlocks => {
            let (s, o) = BlocksState::new(config.clone(), seed)?;
            Ok((EnvState::Blocks(s), o))
        }
    }
}

impl EnvState {
    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let (raw, wrapper) = match self {
            EnvState::Gather(s) => (s.step(action)?, s.config().reward),
            EnvState::Blocks(s) => (s.step(action)?, s.config().reward),
        };
        let v = raw.velocity();
        Ok(wrap_reward(raw, &wrapper, v))
    }

    pub fn config(&self) -> &EnvConfig {
        match self {
            EnvState::Gather(s) => s.config(),
            EnvState::Blocks(s) => s.config(),
        }
    }

    pub fn t(&self) -> usize {
        match self {
            EnvState::Gather(s) => s.t(),
            EnvState::Blocks(s) => s.t(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            EnvState::Gather(s) => s.is_done(),
            EnvState::Blocks(s) => s.is_done(),
        }
    }
}

pub(crate) fn add_noise(values: &mut [f64], std: f64, rng: &mut crate::seeding::Rng) {
    use rand_distr::{Distribution, StandardNormal};
    if std > 0.0 {
        for v in values {
            let e: f64 = StandardNormal.sample(rng);
            *v += std * e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapper_arithmetic() {
        let r = StepResult {
            obs: Observation {
                proprio: vec![],
                lidar: vec![],
            },
            reward: 1.0,
            done: false,
            info: BTreeMap::new(),
        };
        let w = RewardWrapper {
            velocity_penalty_coeff: 0.1,
        };
        assert!((wrap_reward(r.clone(), &w, 2.0).reward - 0.8).abs() < 1e-12);
        assert_eq!(wrap_reward(r.clone(), &RewardWrapper::default(), 2.0), r);
        assert!((wrap_reward(r, &w, -2.0).reward - 0.8).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_dynamics() {
        let mut c = EnvConfig::gather();
        c.dynamics.action_fail_prob = 1.5;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::gather();
        c.dynamics.effect_scale = 0.0;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::gather();
        c.horizon = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn impossible_layout_is_config_error() {
        let mut c = EnvConfig::gather();
        c.size = 3;
        c.n_apples = 5;
        c.n_bombs = 4;
        assert!(matches!(reset(&c, 0), Err(Error::Config(_))));
    }
}
