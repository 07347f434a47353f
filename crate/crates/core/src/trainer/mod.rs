//! The training loop: collect, fit baselines, estimate advantages, then a
//! fixed number of optimizer steps on the clipped surrogate. Variants cover
//! fixed and random time-commitment, the unclipped hierarchical gradient,
//! flat PPO with and without action repeat, manager-only training on frozen
//! skills and adaptation of pretrained skills.

mod io;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use io::{read_metrics_csv, write_metrics_csv, TRAIN_STATE_FILE};

use crate::diffcore::{checksum_values, Optimizer, OptimizerKind, ParamVector};
use crate::envs::EnvConfig;
use crate::evalkit;
use crate::grads::{
    estimate_advantages, fit_baselines, AdvantageSet, BaselineConfig, BaselineMode, BaselineSet, FlatPpoSurrogate,
    HierTerms, HippoSurrogate, SurrogateStats,
};
use crate::hierpolicy::{
    load_pretrained, probe_observations, AnyPolicy, FlatPolicy, HierPolicy, HierSpec, LatentCode, PretrainedSource,
    ScriptedSkillSet,
};
use crate::rollout::{collect_batch, mean_std, Batch, BatchSize, Sampler};
use crate::seeding;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hippo,
    HierVpg,
    FlatPpo,
    FlatPpoRepeat,
    ManagerOnly,
}

impl Algorithm {
    pub fn is_hierarchical(&self) -> bool {
        matches!(self, Self::Hippo | Self::HierVpg | Self::ManagerOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Scratch,
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub eps_clip: f64,
    pub epochs_per_iter: usize,
    /// Trajectories per gradient step; 0 means the full batch.
    pub minibatch_trajectories: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub normalize_advantages: bool,
    pub p_min: usize,
    pub p_max: usize,
    pub n: usize,
    /// Action repeat for `flat_ppo_repeat`.
    pub repeat: usize,
    pub iterations: usize,
    pub min_steps: usize,
    /// Rollout horizon; 0 uses the environment horizon.
    pub horizon: usize,
    pub seed: u64,
    pub workers: usize,
    pub env: EnvConfig,
    pub baseline: BaselineMode,
    pub baseline_fit: BaselineConfig,
    pub time_feature: bool,
    pub init: Init,
    /// Sharpness of the scripted skills used for pretrained initialization.
    pub skill_sharpness: f64,
    pub manager_hidden: Vec<usize>,
    pub skill_hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    /// Log skill-diversity statistics of every batch.
    pub diversity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Hippo,
            lr: 3e-3,
            eps_clip: 0.1,
            epochs_per_iter: 10,
            minibatch_trajectories: 0,
            gamma: 0.999,
            lambda: 0.95,
            normalize_advantages: true,
            p_min: 5,
            p_max: 15,
            n: 6,
            repeat: 10,
            iterations: 100,
            min_steps: 8000,
            horizon: 0,
            seed: 0,
            workers: 1,
            env: EnvConfig::gather(),
            baseline: BaselineMode::Latent,
            baseline_fit: BaselineConfig::default(),
            time_feature: true,
            init: Init::Scratch,
            skill_sharpness: ScriptedSkillSet::DEFAULT_SHARPNESS,
            manager_hidden: vec![16, 16],
            skill_hidden: vec![32, 32],
            optimizer: OptimizerKind::Adam,
            diversity: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return bad(format!("eps_clip must be in (0, 1), got {}", self.eps_clip));
        }
        if self.iterations == 0 || self.epochs_per_iter == 0 {
            return bad("iterations and epochs_per_iter must be >= 1".into());
        }
        if self.min_steps == 0 {
            return bad("min_steps must be >= 1".into());
        }
        if self.p_min < 1 || self.p_min > self.p_max {
            return bad(format!(
                "need 1 <= p_min <= p_max, got [{}, {}]",
                self.p_min, self.p_max
            ));
        }
        if self.n == 0 || self.repeat == 0 || self.workers == 0 {
            return bad("n, repeat and workers must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("need 0 < gamma <= 1 and 0 <= lambda <= 1".into());
        }
        if self.init == Init::Pretrained && !self.algorithm.is_hierarchical() {
            return bad("pretrained initialization needs a hierarchical algorithm".into());
        }
        self.env.validate()
    }

    pub fn rollout_horizon(&self) -> usize {
        if self.horizon == 0 {
            self.env.horizon
        } else {
            self.horizon.min(self.env.horizon)
        }
    }

    pub fn hier_spec(&self) -> HierSpec {
        HierSpec {
            manager_hidden: self.manager_hidden.clone(),
            skill_hidden: self.skill_hidden.clone(),
            ..HierSpec::for_env(&self.env, self.n, self.time_feature, self.p_max as f64)
        }
    }

    pub fn policy_seed(&self) -> u64 {
        seeding::derive(self.seed, &[1])
    }

    /// Root seed of batch collection; shared by every algorithm with the same `seed`.
    pub fn collect_seed(&self) -> u64 {
        seeding::derive(self.seed, &[3])
    }
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub trajectories: usize,
    pub steps: usize,
    /// Surrogate loss before the first update of the iteration.
    pub surrogate_loss: f64,
    /// Mean over epochs of the fraction of ratio terms on the clipped branch.
    pub clip_fraction: f64,
    pub baseline_loss: f64,
    pub eps_hat: Option<f64>,
    pub own_prob: Option<f64>,
    /// Mean total variation of the skills from their scripted originals.
    pub skill_tv: Option<f64>,
    pub policy_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub iteration: u64,
    pub epoch: usize,
    pub loss: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub rows: Vec<IterationRow>,
    pub epochs: Vec<EpochRow>,
    /// Where the skills came from, for pretrained runs.
    pub pretrained_from: Option<String>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    /// Mean of the per-iteration mean returns over the last `window` iterations.
    pub fn final_return(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.rows.len().max(1));
        let tail = &self.rows[self.rows.len().saturating_sub(w)..];
        tail.iter().map(|r| r.mean_return).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn summary(&self) -> Summary {
        let last = self.rows.last();
        Summary {
            final_return_mean: last.map_or(0.0, |r| r.mean_return),
            final_return_std: last.map_or(0.0, |r| r.std_return),
            final_return_window5: self.final_return(5),
            iterations: self.rows.len(),
            pretrained_from: self.pretrained_from.clone(),
            config: self.config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_return_mean: f64,
    pub final_return_std: f64,
    pub final_return_window5: f64,
    pub iterations: usize,
    pub pretrained_from: Option<String>,
    pub config: TrainConfig,
}

/// Output and checkpoint behaviour of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Save the training state every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Continue from the training state in `out_dir`.
    pub resume: bool,
}

impl RunOptions {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: Some(dir.into()),
            ..Self::default()
        }
    }
}

pub struct TrainResult {
    pub report: TrainReport,
    pub policy: AnyPolicy,
}

/// How the policy is initialized.
#[derive(Debug, Clone)]
pub enum Start {
    Scratch,
    Pretrained(PretrainedSource),
}

pub fn train(config: &TrainConfig) -> Result<TrainResult> {
    train_with(config, &RunOptions::default(), &Start::Scratch)
}

/// Trains only the manager on top of frozen skills.
pub fn train_manager_only(config: &TrainConfig, frozen_skills: &PretrainedSource) -> Result<TrainResult> {
    let cfg = TrainConfig {
        algorithm: Algorithm::ManagerOnly,
        ..config.clone()
    };
    train_with(&cfg, &RunOptions::default(), &Start::Pretrained(frozen_skills.clone()))
}

/// Trains both levels starting from pretrained skills.
pub fn adapt_pretrained(config: &TrainConfig, skills: &PretrainedSource) -> Result<TrainResult> {
    if config.algorithm == Algorithm::ManagerOnly || !config.algorithm.is_hierarchical() {
        return Err(Error::Config(
            "adaptation trains both levels of a hierarchical policy".into(),
        ));
    }
    train_with(config, &RunOptions::default(), &Start::Pretrained(skills.clone()))
}

/// Scripted skills for `config.env`, cloned on probe states drawn from it.
pub fn scripted_source(config: &TrainConfig) -> Result<PretrainedSource> {
    Ok(PretrainedSource::Scripted {
        skills: ScriptedSkillSet::for_env(&config.env, config.n, config.skill_sharpness)?,
        probes: probe_observations(&config.env, 64, seeding::derive(config.seed, &[4]))?,
        tol: 0.05,
    })
}

enum Learner {
    Hier(HierPolicy),
    Flat(FlatPolicy),
}

impl Learner {
    fn params(&self) -> &ParamVector {
        match self {
            Learner::Hier(p) => &p.params,
            Learner::Flat(p) => &p.params,
        }
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        match self {
            Learner::Hier(p) => &mut p.params,
            Learner::Flat(p) => &mut p.params,
        }
    }

    fn into_any(self) -> AnyPolicy {
        match self {
            Learner::Hier(p) => AnyPolicy::Hier(p),
            Learner::Flat(p) => AnyPolicy::Flat(p),
        }
    }

    fn checkpoint(&self, seed: u64) -> crate::diffcore::Checkpoint {
        match self {
            Learner::Hier(p) => p.checkpoint(seed),
            Learner::Flat(p) => p.checkpoint(seed),
        }
    }
}

fn build_learner(config: &TrainConfig, start: &Start) -> Result<(Learner, Option<String>)> {
    let spec = config.hier_spec();
    let seed = config.policy_seed();
    match (config.algorithm.is_hierarchical(), start) {
        (true, Start::Scratch) => {
            if config.algorithm == Algorithm::ManagerOnly {
                return Err(Error::Config("manager-only training needs pretrained skills".into()));
            }
            Ok((Learner::Hier(HierPolicy::new(spec, seed)?), None))
        }
        (true, Start::Pretrained(src)) => {
            let from = match src {
                PretrainedSource::Scripted { skills, .. } => {
                    format!("scripted {:?} skills, sharpness {}", skills.rule, skills.sharpness)
                }
                PretrainedSource::Checkpoint(_) => "checkpoint".to_string(),
            };
            Ok((Learner::Hier(load_pretrained(spec, src, seed)?), Some(from)))
        }
        (false, Start::Scratch) => Ok((Learner::Flat(FlatPolicy::parity_with(&spec, seed)?), None)),
        (false, Start::Pretrained(_)) => Err(Error::Config("flat policies cannot start from skills".into())),
    }
}

fn subsets(batch: &Batch, adv: &AdvantageSet, size: usize, iteration: u64, seed: u64) -> Vec<(Batch, AdvantageSet)> {
    let n = batch.trajectories.len();
    if size == 0 || size >= n {
        return vec![(batch.clone(), adv.clone())];
    }
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut seeding::derived_rng(seed, &[iteration, 5]));
    order
        .chunks(size)
        .map(|idx| {
            let pick = |v: &Vec<Vec<f64>>| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
            (
                Batch {
                    trajectories: idx.iter().map(|&i| batch.trajectories[i].clone()).collect(),
                    iteration: batch.iteration,
                    policy_hash: batch.policy_hash,
                },
                AdvantageSet {
                    manager: pick(&adv.manager),
                    step: pick(&adv.step),
                    manager_raw: pick(&adv.manager_raw),
                    step_raw: pick(&adv.step_raw),
                    manager_stats: adv.manager_stats,
                    step_stats: adv.step_stats,
                },
            )
        })
        .collect()
}

fn surrogate_eval(
    config: &TrainConfig,
    snapshot: &Learner,
    batch: &Batch,
    adv: &AdvantageSet,
    theta: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<SurrogateStats> {
    let eps = match config.algorithm {
        Algorithm::HierVpg => None,
        _ => Some(config.eps_clip),
    };
    match snapshot {
        Learner::Hier(policy) => HippoSurrogate {
            policy,
            batch,
            adv,
            eps_clip: eps,
            terms: if config.algorithm == Algorithm::ManagerOnly {
                HierTerms::ManagerOnly
            } else {
                HierTerms::Both
            },
        }
        .evaluate(theta, grad),
        Learner::Flat(policy) => FlatPpoSurrogate {
            policy,
            batch,
            adv,
            eps_clip: eps,
        }
        .evaluate(theta, grad),
    }
}

fn skill_checksum(l: &Learner) -> Option<u64> {
    match l {
        Learner::Hier(p) => Some(checksum_values(&p.params.values()[p.skill_range()])),
        Learner::Flat(_) => None,
    }
}

fn mean_skill_tv(policy: &HierPolicy, skills: &ScriptedSkillSet, probes: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    let mut c = 0;
    for o in probes {
        for z in 0..skills.n {
            let tr = policy.spec.time_scale.round() as usize;
            s += crate::hierpolicy::total_variation(
                &policy.skill_dist(o, LatentCode(z), tr)?,
                &skills.dist(o, LatentCode(z))?,
            )?;
            c += 1;
        }
    }
    Ok(s / c.max(1) as f64)
}

/// Runs the configured algorithm. With `opts.out_dir` set, writes
/// `metrics.csv`, `epochs.csv`, `summary.json`, `policy.ckpt` and the
/// resumable training state.
pub fn train_with(config: &TrainConfig, opts: &RunOptions, start: &Start) -> Result<TrainResult> {
    config.validate()?;
    let (mut learner, pretrained_from) = build_learner(config, start)?;
    let obs_dim = config.env.obs_dim();
    let (n_low, time_scale) = match learner {
        Learner::Hier(_) => (config.n, config.p_max as f64),
        Learner::Flat(_) => (1, config.repeat as f64),
    };
    let bcfg = &config.baseline_fit;
    let mut baselines = BaselineSet::new(
        config.baseline,
        obs_dim,
        n_low,
        time_scale,
        bcfg,
        seeding::derive(config.seed, &[2]),
    )?;
    let mut opt = Optimizer::new(config.optimizer, config.lr, learner.params().len());
    let mask: Option<Vec<bool>> = match (&learner, config.algorithm) {
        (Learner::Hier(p), Algorithm::ManagerOnly) => {
            let r = p.manager_range();
            Some((0..p.params.len()).map(|i| r.contains(&i)).collect())
        }
        _ => None,
    };
    let drift_probe = match (start, &learner) {
        (Start::Pretrained(PretrainedSource::Scripted { skills, probes, .. }), Learner::Hier(_)) => {
            Some((skills.clone(), probes.iter().take(16).cloned().collect::<Vec<_>>()))
        }
        _ => None,
    };
    let mut report = TrainReport {
        config: config.clone(),
        rows: Vec::new(),
        epochs: Vec::new(),
        pretrained_from,
        final_checkpoint: None,
    };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        if opts.resume {
            io::restore(dir, config, learner.params_mut(), &mut opt, &mut baselines, &mut report)?;
        }
    }
    let frozen = skill_checksum(&learner).filter(|_| config.algorithm == Algorithm::ManagerOnly);
    let horizon = config.rollout_horizon();
    let start_iter = report.rows.len();
    for it in start_iter..config.iterations {
        let iteration = it as u64;
        let outcome = (|| -> Result<()> {
            let batch = {
                let sampler = match &learner {
                    Learner::Hier(policy) => Sampler::Hier {
                        policy,
                        p_min: config.p_min,
                        p_max: config.p_max,
                    },
                    Learner::Flat(policy) => Sampler::Flat {
                        policy,
                        repeat: if config.algorithm == Algorithm::FlatPpoRepeat {
                            config.repeat
                        } else {
                            1
                        },
                    },
                };
                collect_batch(
                    &config.env,
                    sampler,
                    BatchSize::steps(config.min_steps),
                    horizon,
                    config.workers,
                    config.collect_seed(),
                    iteration,
                )?
            };
            fit_baselines(&mut baselines, &batch, config.gamma, bcfg)?;
            let adv = estimate_advantages(
                &batch,
                &baselines,
                config.gamma,
                config.lambda,
                config.normalize_advantages,
            )?;
            let (eps_hat, own_prob) = match (&learner, config.diversity) {
                (Learner::Hier(p), true) => {
                    let d = evalkit::batch_diversity(p, &batch)?;
                    (d.eps_hat, Some(d.own_prob))
                }
                _ => (None, None),
            };
            let snapshot = match &learner {
                Learner::Hier(p) => Learner::Hier(p.clone()),
                Learner::Flat(p) => Learner::Flat(p.clone()),
            };
            let parts = subsets(&batch, &adv, config.minibatch_trajectories, iteration, config.seed);
            let first = surrogate_eval(config, &snapshot, &batch, &adv, snapshot.params().values(), None)?;
            let mut clip_sum = 0.0;
            for epoch in 0..config.epochs_per_iter {
                let (mut loss, mut clip) = (0.0, 0.0);
                for (b, a) in &parts {
                    let mut g = crate::diffcore::GradientVector::zeros(learner.params().layout());
                    let st = surrogate_eval(config, &snapshot, b, a, learner.params().values(), Some(&mut g.values))?;
                    if !st.loss.is_finite() {
                        return Err(Error::numerical(
                            "surrogate",
                            format!("non-finite loss at epoch {epoch}"),
                        ));
                    }
                    opt.step(learner.params_mut(), &g, mask.as_deref())?;
                    loss += st.loss / parts.len() as f64;
                    clip += st.clip_fraction / parts.len() as f64;
                }
                clip_sum += clip;
                report.epochs.push(EpochRow {
                    iteration,
                    epoch,
                    loss,
                    clip_fraction: clip,
                });
            }
            if let Some(before) = frozen {
                if skill_checksum(&learner) != Some(before) {
                    return Err(Error::Internal(format!(
                        "frozen skill parameters changed in iteration {it}"
                    )));
                }
            }
            let skill_tv = match (&learner, &drift_probe) {
                (Learner::Hier(p), Some((skills, probes))) => Some(mean_skill_tv(p, skills, probes)?),
                _ => None,
            };
            let (mean_return, std_return) = mean_std(&batch.returns());
            report.rows.push(IterationRow {
                iteration,
                mean_return,
                std_return,
                trajectories: batch.trajectories.len(),
                steps: batch.num_steps(),
                surrogate_loss: first.loss,
                clip_fraction: clip_sum / config.epochs_per_iter as f64,
                baseline_loss: baselines.fit_l.1.max(baselines.fit_h.1),
                eps_hat,
                own_prob,
                skill_tv,
                policy_hash: batch.policy_hash,
            });
            Ok(())
        })();
        if let Err(e) = outcome {
            if let Some(dir) = &opts.out_dir {
                // The state saved last is the last good one; refresh the policy file too.
                io::write_outputs(dir, &report, &learner.checkpoint(config.seed))?;
            }
            return Err(e);
        }
        if let Some(dir) = &opts.out_dir {
            let every = opts.checkpoint_every;
            if every > 0 && (it + 1) % every == 0 {
                io::save_state(dir, config, learner.params(), &opt, &baselines, &report)?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        io::save_state(dir, config, learner.params(), &opt, &baselines, &report)?;
        io::write_outputs(dir, &report, &learner.checkpoint(config.seed))?;
        report.final_checkpoint = Some(dir.join(io::POLICY_FILE));
    }
    Ok(TrainResult {
        report,
        policy: learner.into_any(),
    })
}

/// The seven ablation variants, as (label, config) pairs sharing `base.seed`.
pub fn ablation_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let v = |label: &str, f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        c.init = Init::Scratch;
        f(&mut c);
        (label.to_string(), c)
    };
    vec![
        v("hippo_random_p", &|c| {
            c.algorithm = Algorithm::Hippo;
            (c.p_min, c.p_max) = (5, 15);
        }),
        v("hippo_p10", &|c| {
            c.algorithm = Algorithm::Hippo;
            (c.p_min, c.p_max) = (10, 10);
        }),
        v("hippo_p1", &|c| {
            c.algorithm = Algorithm::Hippo;
            (c.p_min, c.p_max) = (1, 1);
        }),
        v("flat_ppo", &|c| c.algorithm = Algorithm::FlatPpo),
        v("flat_ppo_repeat", &|c| {
            c.algorithm = Algorithm::FlatPpoRepeat;
            c.repeat = 10;
        }),
        v("hippo_state_baseline", &|c| {
            c.algorithm = Algorithm::Hippo;
            c.baseline = BaselineMode::StateOnly;
        }),
        v("hier_vpg", &|c| c.algorithm = Algorithm::HierVpg),
    ]
}

/// Runs every ablation variant; failures are recorded and the suite goes on.
/// Each run writes into `out_dir/<label>` when a directory is given.
pub fn ablation_suite(base: &TrainConfig, out_dir: Option<&Path>) -> Vec<(String, Result<TrainReport>)> {
    ablation_configs(base)
        .into_iter()
        .map(|(label, cfg)| {
            let opts = RunOptions {
                out_dir: out_dir.map(|d| d.join(&label)),
                ..RunOptions::default()
            };
            let r = train_with(&cfg, &opts, &Start::Scratch).map(|r| r.report);
            (label, r)
        })
        .collect()
}

#[cfg(test)]
mod tests;
