//! Trajectory collection under the hierarchy with randomized
//! time-commitment, flat and action-repeat rollouts, and deterministic
//! batch assembly.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{self, Action, EnvConfig};
use crate::hierpolicy::{FlatPolicy, HierPolicy, LatentCode};
use crate::seeding::{self, Rng as SeededRng};
use crate::{Error, Result};

/// Uniform integer in `[p_min, p_max]`.
pub fn sample_time_commitment<R: Rng + ?Sized>(p_min: usize, p_max: usize, rng: &mut R) -> Result<usize> {
    if p_min < 1 || p_min > p_max {
        return Err(Error::Config(format!(
            "time-commitment bounds must satisfy 1 <= P_min <= P_max, got [{p_min}, {p_max}]"
        )));
    }
    Ok(rng.random_range(p_min..=p_max))
}

/// Span of steps sharing one latent (or, for flat trajectories, one
/// repeated action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub k: usize,
    pub start_t: usize,
    /// Steps actually executed (may be cut short by horizon or termination).
    pub len: usize,
    /// Sampled time-commitment.
    pub p: usize,
    pub z: LatentCode,
    /// `log pi_h(z | s_start)` for hierarchical trajectories, or the flat
    /// policy's log-probability of the held action.
    pub manager_logprob_old: f64,
}

impl Segment {
    pub fn steps(&self) -> std::ops::Range<usize> {
        self.start_t..self.start_t + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Hier,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Per-step `log pi_l(a_t | s_t, z)` for hierarchical trajectories; zero
    /// for flat ones (the decision log-prob lives on the segment).
    pub skill_logprob_old: Vec<f64>,
    pub time_remaining: Vec<usize>,
    pub segments: Vec<Segment>,
    pub total_return: f64,
    pub env_seed: u64,
    /// Whether the environment itself ended the episode.
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Segment index of every step.
    pub fn segment_of_step(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for s in &self.segments {
            out[s.steps()].iter_mut().for_each(|v| *v = s.k);
        }
        out
    }

    pub fn check_tiling(&self) -> Result<()> {
        let mut t = 0;
        for (k, s) in self.segments.iter().enumerate() {
            if s.k != k || s.start_t != t || s.len == 0 || s.len > s.p {
                return Err(Error::Internal(format!("segment {k} does not tile the trajectory")));
            }
            t += s.len;
        }
        if t != self.len() {
            return Err(Error::Internal("segments do not cover the trajectory".into()));
        }
        Ok(())
    }
}

struct Recorder {
    traj: Trajectory,
}

impl Recorder {
    fn new(kind: TrajectoryKind, env_seed: u64) -> Self {
        Self {
            traj: Trajectory {
                kind,
                obs: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
                skill_logprob_old: Vec::new(),
                time_remaining: Vec::new(),
                segments: Vec::new(),
                total_return: 0.0,
                env_seed,
                terminated: false,
            },
        }
    }
}

/// One hierarchical episode: every segment samples `p`, then `z` from the
/// manager, then runs the skill for `p` steps or until the episode ends.
pub fn hippo_rollout<R: Rng + ?Sized>(
    env: &EnvConfig,
    env_seed: u64,
    policy: &HierPolicy,
    p_min: usize,
    p_max: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if env.obs_dim() != policy.spec.obs_dim || env.action_space() != policy.spec.action_space {
        return Err(Error::Config("policy dimensions do not match environment".into()));
    }
    let (mut state, first) = envs::reset(env, env_seed)?;
    let mut obs = first.flat();
    let mut rec = Recorder::new(TrajectoryKind::Hier, env_seed);
    let mut t = 0;
    'episode: while t < horizon {
        let p = sample_time_commitment(p_min, p_max, rng)?;
        let mdist = policy.manager_dist(&obs, p)?;
        let z = LatentCode(mdist.sample(rng));
        let k = rec.traj.segments.len();
        rec.traj.segments.push(Segment {
            k,
            start_t: t,
            len: 0,
            p,
            z,
            manager_logprob_old: mdist.log_prob(z.0)?,
        });
        for i in 0..p {
            if t >= horizon {
                break 'episode;
            }
            let tr = p - i;
            let dist = policy.skill_dist(&obs, z, tr)?;
            let a = dist.sample(rng);
            let lp = dist.log_prob(&a)?;
            let step = state
                .step(&a)
                .map_err(|e| Error::Runtime(format!("env error at t = {t} (seed {env_seed}): {e}")))?;
            let tj = &mut rec.traj;
            tj.obs.push(std::mem::replace(&mut obs, step.obs.flat()));
            tj.actions.push(a);
            tj.rewards.push(step.reward);
            tj.skill_logprob_old.push(lp);
            tj.time_remaining.push(tr);
            tj.segments[k].len += 1;
            t += 1;
            if step.done {
                tj.terminated = true;
                break 'episode;
            }
        }
    }
    let mut traj = rec.traj;
    traj.total_return = traj.rewards.iter().sum();
    Ok(traj)
}

/// Flat policy sampled every `repeat` steps with the action held in between.
pub fn action_repeat_rollout<R: Rng + ?Sized>(
    env: &EnvConfig,
    env_seed: u64,
    policy: &FlatPolicy,
    repeat: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if repeat == 0 {
        return Err(Error::Config("action repeat must be >= 1".into()));
    }
    if env.obs_dim() != policy.obs_dim || env.action_space() != policy.action_space {
        return Err(Error::Config("policy dimensions do not match environment".into()));
    }
    let (mut state, first) = envs::reset(env, env_seed)?;
    let mut obs = first.flat();
    let mut rec = Recorder::new(TrajectoryKind::Flat, env_seed);
    let mut t = 0;
    'episode: while t < horizon {
        let dist = policy.dist(&obs)?;
        let a = dist.sample(rng);
        let k = rec.traj.segments.len();
        rec.traj.segments.push(Segment {
            k,
            start_t: t,
            len: 0,
            p: repeat,
            z: LatentCode(0),
            manager_logprob_old: dist.log_prob(&a)?,
        });
        for i in 0..repeat {
            if t >= horizon {
                break 'episode;
            }
            let step = state
                .step(&a)
                .map_err(|e| Error::Runtime(format!("env error at t = {t} (seed {env_seed}): {e}")))?;
            let tj = &mut rec.traj;
            tj.obs.push(std::mem::replace(&mut obs, step.obs.flat()));
            tj.actions.push(a.clone());
            tj.rewards.push(step.reward);
            tj.skill_logprob_old.push(0.0);
            tj.time_remaining.push(repeat - i);
            tj.segments[k].len += 1;
            t += 1;
            if step.done {
                tj.terminated = true;
                break 'episode;
            }
        }
    }
    let mut traj = rec.traj;
    traj.total_return = traj.rewards.iter().sum();
    Ok(traj)
}

pub fn flat_rollout<R: Rng + ?Sized>(
    env: &EnvConfig,
    env_seed: u64,
    policy: &FlatPolicy,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    action_repeat_rollout(env, env_seed, policy, 1, horizon, rng)
}

/// Policy snapshot plus its rollout rule.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    Hier {
        policy: &'a HierPolicy,
        p_min: usize,
        p_max: usize,
    },
    Flat {
        policy: &'a FlatPolicy,
        repeat: usize,
    },
}

impl Sampler<'_> {
    pub fn policy_hash(&self) -> u64 {
        match self {
            Sampler::Hier { policy, .. } => policy.params.checksum(),
            Sampler::Flat { policy, .. } => policy.params.checksum(),
        }
    }

    pub fn rollout(&self, env: &EnvConfig, env_seed: u64, horizon: usize, rng: &mut SeededRng) -> Result<Trajectory> {
        match *self {
            Sampler::Hier { policy, p_min, p_max } => hippo_rollout(env, env_seed, policy, p_min, p_max, horizon, rng),
            Sampler::Flat { policy, repeat } => action_repeat_rollout(env, env_seed, policy, repeat, horizon, rng),
        }
    }
}

/// How much to collect per batch. Collection stops at the shortest prefix of
/// trajectories meeting both limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSize {
    pub min_trajectories: usize,
    pub min_steps: usize,
}

impl BatchSize {
    pub fn steps(min_steps: usize) -> Self {
        Self {
            min_trajectories: 0,
            min_steps,
        }
    }

    pub fn trajectories(n: usize) -> Self {
        Self {
            min_trajectories: n,
            min_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub iteration: u64,
    /// Checksum of the parameters every old log-prob was recorded under.
    pub policy_hash: u64,
}

impl Batch {
    pub fn num_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    pub fn num_segments(&self) -> usize {
        self.trajectories.iter().map(|t| t.segments.len()).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.total_return).collect()
    }

    pub fn mean_return(&self) -> f64 {
        mean_std(&self.returns()).0
    }

    /// Writes one JSON record per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, tr) in self.trajectories.iter().enumerate() {
            let seg_of = tr.segment_of_step();
            for t in 0..tr.len() {
                let seg = &tr.segments[seg_of[t]];
                let rec = StepRecord {
                    traj: i,
                    t,
                    k: seg.k,
                    z: seg.z.0,
                    action: tr.actions[t].clone(),
                    reward: tr.rewards[t],
                    skill_logprob: tr.skill_logprob_old[t],
                    manager_logprob: (seg.start_t == t).then_some(seg.manager_logprob_old),
                    time_remaining: tr.time_remaining[t],
                };
                serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Line schema of [`Batch::write_jsonl`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub traj: usize,
    pub t: usize,
    pub k: usize,
    pub z: usize,
    pub action: Action,
    pub reward: f64,
    pub skill_logprob: f64,
    pub manager_logprob: Option<f64>,
    pub time_remaining: usize,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Seeds of trajectory `j` in iteration `iteration`: (env seed, sampler seed).
pub fn trajectory_seeds(seed: u64, iteration: u64, j: u64) -> (u64, u64) {
    (
        seeding::derive(seed, &[iteration, j, 0]),
        seeding::derive(seed, &[iteration, j, 1]),
    )
}

/// Collects trajectories on `workers` threads. Trajectory `j` depends only on
/// `(seed, iteration, j)`, so the batch is identical for any worker count.
pub fn collect_batch(
    env: &EnvConfig,
    sampler: Sampler<'_>,
    size: BatchSize,
    horizon: usize,
    workers: usize,
    seed: u64,
    iteration: u64,
) -> Result<Batch> {
    if workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    if size.min_steps == 0 && size.min_trajectories == 0 {
        return Err(Error::Runtime("batch request would collect zero trajectories".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Runtime(format!("cannot start rollout workers: {e}")))?;
    let horizon = horizon.min(env.horizon);
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut steps = 0;
    let enough = |n: usize, s: usize| n >= size.min_trajectories && s >= size.min_steps;
    while !enough(trajectories.len(), steps) {
        let need_by_steps = size.min_steps.saturating_sub(steps).div_ceil(horizon.max(1));
        let need = need_by_steps
            .max(size.min_trajectories.saturating_sub(trajectories.len()))
            .max(1);
        let chunk = need.max(workers);
        let start = trajectories.len() as u64;
        let got: Vec<Result<Trajectory>> = pool.install(|| {
            (start..start + chunk as u64)
                .into_par_iter()
                .map(|j| {
                    let (env_seed, rng_seed) = trajectory_seeds(seed, iteration, j);
                    sampler.rollout(env, env_seed, horizon, &mut seeding::rng(rng_seed))
                })
                .collect()
        });
        for tr in got {
            if enough(trajectories.len(), steps) {
                break;
            }
            let tr = tr?;
            steps += tr.len();
            trajectories.push(tr);
        }
    }
    Ok(Batch {
        trajectories,
        iteration,
        policy_hash: sampler.policy_hash(),
    })
}
