//! Two-level policy: a categorical manager over `n` latent codes and one
//! shared sub-policy network conditioned on the one-hot latent, plus a flat
//! baseline policy and scripted diverse skills.

mod scripted;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use scripted::{
    clone_residual, load_pretrained, probe_observations, total_variation, PretrainedSource, ScriptedSkillSet, SkillRule,
};

use crate::diffcore::dist::{categorical_logprob_grad, gaussian_logprob_grad};
use crate::diffcore::{Categorical, Checkpoint, DiagGaussian, Layout, Mlp, MlpArch, ParamVector, SegmentSpec};
use crate::envs::{Action, ActionSpace, EnvConfig};
use crate::seeding;
use crate::{Error, Result};

/// Latent skill index in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatentCode(pub usize);

/// Action distribution produced by a sub-policy or flat policy.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Categorical(Categorical),
    Gaussian(DiagGaussian),
}

impl ActionDist {
    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (ActionDist::Categorical(c), Action::Discrete(i)) => c.log_prob(*i),
            (ActionDist::Gaussian(g), Action::Continuous(a)) => g.log_prob(a),
            _ => Err(Error::Argument(format!(
                "action {action:?} does not match distribution"
            ))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionDist::Categorical(c) => Action::Discrete(c.sample(rng)),
            ActionDist::Gaussian(g) => Action::Continuous(g.sample(rng)),
        }
    }
}

pub fn sample_latent<R: Rng + ?Sized>(dist: &Categorical, rng: &mut R) -> LatentCode {
    LatentCode(dist.sample(rng))
}

pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDist, rng: &mut R) -> Action {
    dist.sample(rng)
}

/// Construction parameters for [`HierPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierSpec {
    pub n: usize,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub time_feature: bool,
    /// Divisor applied to the time-remaining count before it enters the networks.
    pub time_scale: f64,
    pub manager_hidden: Vec<usize>,
    pub skill_hidden: Vec<usize>,
    pub output_gain: f64,
    pub init_log_std: f64,
}

impl HierSpec {
    pub fn for_env(env: &EnvConfig, n: usize, time_feature: bool, time_scale: f64) -> Self {
        Self {
            n,
            obs_dim: env.obs_dim(),
            action_space: env.action_space(),
            time_feature,
            time_scale: time_scale.max(1.0),
            manager_hidden: vec![16, 16],
            skill_hidden: vec![32, 32],
            output_gain: 1.0,
            init_log_std: -0.5,
        }
    }

    fn manager_arch(&self) -> Result<MlpArch> {
        MlpArch::new(
            self.obs_dim + self.time_feature as usize,
            self.manager_hidden.clone(),
            self.n,
        )
    }

    fn skill_arch(&self) -> Result<MlpArch> {
        MlpArch::new(
            self.obs_dim + self.n + self.time_feature as usize,
            self.skill_hidden.clone(),
            self.action_space.dim(),
        )
    }

    pub fn num_params(&self) -> Result<usize> {
        let log_std = match self.action_space {
            ActionSpace::Gaussian(d) => d,
            ActionSpace::Categorical(_) => 0,
        };
        Ok(self.manager_arch()?.num_params() + self.skill_arch()?.num_params() + log_std)
    }
}

/// Manager `pi_h(z | s)` and shared sub-policy `pi_l(a | s, z)` over one
/// flat parameter vector laid out as `manager/*` then `skills/*`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierPolicy {
    pub spec: HierSpec,
    pub params: ParamVector,
    manager: Mlp,
    skills: Mlp,
    log_std: Option<Range<usize>>,
}

impl HierPolicy {
    pub fn new(spec: HierSpec, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let mut rng = seeding::derived_rng(seed, &[0x90_11C7]);
        let gain = p.spec.output_gain;
        let vals = p.params.values_mut();
        p.manager.init(vals, gain, &mut rng);
        p.skills.init(vals, gain, &mut rng);
        if let Some(r) = p.log_std.clone() {
            vals[r].iter_mut().for_each(|v| *v = p.spec.init_log_std);
        }
        Ok(p)
    }

    /// All-zero weights: uniform manager and uniform / zero-mean skills.
    pub fn zeros(spec: HierSpec) -> Result<Self> {
        if spec.n == 0 {
            return Err(Error::Config("skill count n must be >= 1".into()));
        }
        let m_arch = spec.manager_arch()?;
        let s_arch = spec.skill_arch()?;
        let mut segs: Vec<SegmentSpec> = m_arch
            .segments()
            .into_iter()
            .map(|s| SegmentSpec::new(format!("manager/{}", s.name), s.shape))
            .collect();
        segs.extend(
            s_arch
                .segments()
                .into_iter()
                .map(|s| SegmentSpec::new(format!("skills/{}", s.name), s.shape)),
        );
        if let ActionSpace::Gaussian(d) = spec.action_space {
            segs.push(SegmentSpec::new("skills/log_std", vec![d]));
        }
        let layout = Layout::new(segs)?;
        let manager = Mlp::new(m_arch.clone(), 0);
        let skills = Mlp::new(s_arch, m_arch.num_params());
        let log_std = layout.range("skills/log_std");
        Ok(Self {
            spec,
            params: ParamVector::zeros(layout),
            manager,
            skills,
            log_std,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn layout(&self) -> &Layout {
        self.params.layout()
    }

    pub fn manager_range(&self) -> Range<usize> {
        self.manager.offset..self.manager.end()
    }

    /// Skill network plus log-std (if any).
    pub fn skill_range(&self) -> Range<usize> {
        self.skills.offset..self.params.len()
    }

    /// Replaces the parameter values (same layout).
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.layout() != self.params.layout() {
            return Err(Error::Config("parameter layout mismatch".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.params = self.params.with_values(values)?;
        Ok(out)
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.spec.obs_dim {
            return Err(Error::Config(format!(
                "observation length {} != policy obs_dim {}",
                obs.len(),
                self.spec.obs_dim
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: LatentCode) -> Result<()> {
        if z.0 >= self.spec.n {
            return Err(Error::Argument(format!(
                "latent {} out of range for n = {}",
                z.0, self.spec.n
            )));
        }
        Ok(())
    }

    pub fn manager_input(&self, obs: &[f64], time_remaining: usize) -> Vec<f64> {
        let mut x = obs.to_vec();
        if self.spec.time_feature {
            x.push(time_remaining as f64 / self.spec.time_scale);
        }
        x
    }

    pub fn skill_input(&self, obs: &[f64], z: LatentCode, time_remaining: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.skills.arch.input_dim);
        x.extend_from_slice(obs);
        x.extend((0..self.spec.n).map(|j| if j == z.0 { 1.0 } else { 0.0 }));
        if self.spec.time_feature {
            x.push(time_remaining as f64 / self.spec.time_scale);
        }
        x
    }

    pub fn manager_logits_at(&self, theta: &[f64], obs: &[f64], time_remaining: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        self.manager.forward(theta, &self.manager_input(obs, time_remaining))
    }

    pub fn manager_dist(&self, obs: &[f64], time_remaining: usize) -> Result<Categorical> {
        Ok(Categorical::from_logits(&self.manager_logits_at(
            self.params.values(),
            obs,
            time_remaining,
        )?))
    }

    pub fn skill_dist_at(
        &self,
        theta: &[f64],
        obs: &[f64],
        z: LatentCode,
        time_remaining: usize,
    ) -> Result<ActionDist> {
        self.check_obs(obs)?;
        self.check_latent(z)?;
        let out = self.skills.forward(theta, &self.skill_input(obs, z, time_remaining))?;
        Ok(self.to_dist(theta, out))
    }

    pub fn skill_dist(&self, obs: &[f64], z: LatentCode, time_remaining: usize) -> Result<ActionDist> {
        self.skill_dist_at(self.params.values(), obs, z, time_remaining)
    }

    fn to_dist(&self, theta: &[f64], out: Vec<f64>) -> ActionDist {
        match self.spec.action_space {
            ActionSpace::Categorical(_) => ActionDist::Categorical(Categorical::from_logits(&out)),
            ActionSpace::Gaussian(_) => ActionDist::Gaussian(DiagGaussian {
                mean: out,
                log_std: theta[self.log_std.clone().expect("gaussian policy has log_std")].to_vec(),
            }),
        }
    }

    /// `log pi_h(z | s)` at `theta`, adding `coeff * grad` into `grad` when given.
    pub fn manager_logprob_at(
        &self,
        theta: &[f64],
        obs: &[f64],
        time_remaining: usize,
        z: LatentCode,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        match grad {
            None => self.manager_logprob_impl(theta, obs, time_remaining, z, None),
            Some((g, c)) => self.manager_logprob_impl(theta, obs, time_remaining, z, Some((g, &mut |_| c))),
        }
    }

    /// Like [`Self::manager_logprob_at`] with the gradient coefficient
    /// computed from the log-probability itself.
    pub fn manager_logprob_with(
        &self,
        theta: &[f64],
        obs: &[f64],
        time_remaining: usize,
        z: LatentCode,
        grad: &mut [f64],
        coeff: &mut dyn FnMut(f64) -> f64,
    ) -> Result<f64> {
        self.manager_logprob_impl(theta, obs, time_remaining, z, Some((grad, coeff)))
    }

    fn manager_logprob_impl(
        &self,
        theta: &[f64],
        obs: &[f64],
        time_remaining: usize,
        z: LatentCode,
        grad: GradSink<'_>,
    ) -> Result<f64> {
        self.check_obs(obs)?;
        self.check_latent(z)?;
        let input = self.manager_input(obs, time_remaining);
        match grad {
            None => {
                let logits = self.manager.forward(theta, &input)?;
                crate::diffcore::categorical_logprob(&logits, z.0)
            }
            Some((g, coeff)) => {
                let trace = self.manager.forward_trace(theta, &input)?;
                let lp = crate::diffcore::categorical_logprob(trace.output(), z.0)?;
                let c = coeff(lp);
                if c != 0.0 {
                    let mut d = vec![0.0; self.spec.n];
                    categorical_logprob_grad(trace.output(), z.0, c, &mut d);
                    self.manager.backward(theta, &trace, &d, g);
                }
                Ok(lp)
            }
        }
    }

    /// `log pi_l(a | s, z)` at `theta`, adding `coeff * grad` into `grad` when given.
    pub fn skill_logprob_at(
        &self,
        theta: &[f64],
        obs: &[f64],
        z: LatentCode,
        time_remaining: usize,
        action: &Action,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        match grad {
            None => self.skill_logprob_impl(theta, obs, z, time_remaining, action, None),
            Some((g, c)) => self.skill_logprob_impl(theta, obs, z, time_remaining, action, Some((g, &mut |_| c))),
        }
    }

    pub fn skill_logprob_with(
        &self,
        theta: &[f64],
        obs: &[f64],
        z: LatentCode,
        time_remaining: usize,
        action: &Action,
        grad: &mut [f64],
        coeff: &mut dyn FnMut(f64) -> f64,
    ) -> Result<f64> {
        self.skill_logprob_impl(theta, obs, z, time_remaining, action, Some((grad, coeff)))
    }

    fn skill_logprob_impl(
        &self,
        theta: &[f64],
        obs: &[f64],
        z: LatentCode,
        time_remaining: usize,
        action: &Action,
        grad: GradSink<'_>,
    ) -> Result<f64> {
        self.check_obs(obs)?;
        self.check_latent(z)?;
        let input = self.skill_input(obs, z, time_remaining);
        action_logprob(
            &self.skills,
            self.log_std.clone(),
            self.spec.action_space,
            theta,
            &input,
            action,
            grad,
        )
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let header = serde_json::json!({ "policy": "hier", "spec": self.spec });
        let mut ck = Checkpoint::new(seed, header);
        ck.push_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: HierSpec = serde_json::from_value(ck.header["spec"].clone())
            .map_err(|e| Error::Format(format!("bad hierarchical policy header: {e}")))?;
        let mut p = Self::zeros(spec)?;
        p.params = ck.params("", p.params.layout())?;
        Ok(p)
    }
}

/// Gradient buffer plus a coefficient computed from the log-probability.
type GradSink<'a> = Option<(&'a mut [f64], &'a mut dyn FnMut(f64) -> f64)>;

/// Log-probability of `action` under the head of `net` at `theta`, with
/// optional gradient accumulation.
fn action_logprob(
    net: &Mlp,
    log_std: Option<Range<usize>>,
    space: ActionSpace,
    theta: &[f64],
    input: &[f64],
    action: &Action,
    grad: GradSink<'_>,
) -> Result<f64> {
    match (space, action) {
        (ActionSpace::Categorical(m), Action::Discrete(a)) => {
            if *a >= m {
                return Err(Error::Argument(format!("action {a} out of range for {m} actions")));
            }
            match grad {
                None => crate::diffcore::categorical_logprob(&net.forward(theta, input)?, *a),
                Some((g, coeff)) => {
                    let trace = net.forward_trace(theta, input)?;
                    let lp = crate::diffcore::categorical_logprob(trace.output(), *a)?;
                    let c = coeff(lp);
                    if c != 0.0 {
                        let mut d = vec![0.0; m];
                        categorical_logprob_grad(trace.output(), *a, c, &mut d);
                        net.backward(theta, &trace, &d, g);
                    }
                    Ok(lp)
                }
            }
        }
        (ActionSpace::Gaussian(d), Action::Continuous(a)) => {
            let r = log_std.expect("gaussian head has log_std");
            let ls = &theta[r.clone()];
            match grad {
                None => crate::diffcore::gaussian_logprob(&net.forward(theta, input)?, ls, a),
                Some((g, coeff)) => {
                    let trace = net.forward_trace(theta, input)?;
                    let lp = crate::diffcore::gaussian_logprob(trace.output(), ls, a)?;
                    let c = coeff(lp);
                    if c != 0.0 {
                        let mut dm = vec![0.0; d];
                        let mut dl = vec![0.0; d];
                        gaussian_logprob_grad(trace.output(), ls, a, c, &mut dm, &mut dl);
                        net.backward(theta, &trace, &dm, g);
                        for (gi, di) in g[r].iter_mut().zip(&dl) {
                            *gi += di;
                        }
                    }
                    Ok(lp)
                }
            }
        }
        _ => Err(Error::Argument(format!("action {action:?} does not match {space:?}"))),
    }
}

/// Flat (non-hierarchical) policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPolicy {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub params: ParamVector,
    net: Mlp,
    log_std: Option<Range<usize>>,
}

impl FlatPolicy {
    pub fn new(
        obs_dim: usize,
        action_space: ActionSpace,
        hidden: Vec<usize>,
        output_gain: f64,
        seed: u64,
    ) -> Result<Self> {
        let arch = MlpArch::new(obs_dim, hidden, action_space.dim())?;
        let mut segs = arch.segments();
        if let ActionSpace::Gaussian(d) = action_space {
            segs.push(SegmentSpec::new("log_std", vec![d]));
        }
        let layout = Layout::new(segs)?;
        let log_std = layout.range("log_std");
        let mut p = Self {
            obs_dim,
            action_space,
            params: ParamVector::zeros(layout),
            net: Mlp::new(arch, 0),
            log_std,
        };
        let mut rng = seeding::derived_rng(seed, &[0xF1A7]);
        p.net.init(p.params.values_mut(), output_gain, &mut rng);
        if let Some(r) = p.log_std.clone() {
            p.params.values_mut()[r].iter_mut().for_each(|v| *v = -0.5);
        }
        Ok(p)
    }

    /// Two hidden layers in a 4:1 width ratio, sized so the total parameter
    /// count is as close as possible to `target`.
    pub fn parity_hidden(obs_dim: usize, action_space: ActionSpace, target: usize) -> Vec<usize> {
        let out = action_space.dim();
        let extra = matches!(action_space, ActionSpace::Gaussian(_)) as usize * out;
        let count = |k: usize| {
            let (a, b) = (4 * k, k);
            obs_dim * a + a + a * b + b + b * out + out + extra
        };
        let k = (1..=512)
            .min_by_key(|&k| (count(k) as i64 - target as i64).unsigned_abs())
            .unwrap_or(1);
        vec![4 * k, k]
    }

    pub fn parity_with(spec: &HierSpec, seed: u64) -> Result<Self> {
        let hidden = Self::parity_hidden(spec.obs_dim, spec.action_space, spec.num_params()?);
        Self::new(spec.obs_dim, spec.action_space, hidden, spec.output_gain, seed)
    }

    pub fn arch(&self) -> &MlpArch {
        &self.net.arch
    }

    pub fn dist_at(&self, theta: &[f64], obs: &[f64]) -> Result<ActionDist> {
        let out = self.net.forward(theta, obs)?;
        Ok(match self.action_space {
            ActionSpace::Categorical(_) => ActionDist::Categorical(Categorical::from_logits(&out)),
            ActionSpace::Gaussian(_) => ActionDist::Gaussian(DiagGaussian {
                mean: out,
                log_std: theta[self.log_std.clone().unwrap()].to_vec(),
            }),
        })
    }

    pub fn dist(&self, obs: &[f64]) -> Result<ActionDist> {
        self.dist_at(self.params.values(), obs)
    }

    pub fn logprob_at(
        &self,
        theta: &[f64],
        obs: &[f64],
        action: &Action,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        match grad {
            None => action_logprob(
                &self.net,
                self.log_std.clone(),
                self.action_space,
                theta,
                obs,
                action,
                None,
            ),
            Some((g, c)) => self.logprob_with(theta, obs, action, g, &mut |_| c),
        }
    }

    pub fn logprob_with(
        &self,
        theta: &[f64],
        obs: &[f64],
        action: &Action,
        grad: &mut [f64],
        coeff: &mut dyn FnMut(f64) -> f64,
    ) -> Result<f64> {
        if obs.len() != self.obs_dim {
            return Err(Error::Config(format!(
                "observation length {} != policy obs_dim {}",
                obs.len(),
                self.obs_dim
            )));
        }
        action_logprob(
            &self.net,
            self.log_std.clone(),
            self.action_space,
            theta,
            obs,
            action,
            Some((grad, coeff)),
        )
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let header = serde_json::json!({
            "policy": "flat",
            "obs_dim": self.obs_dim,
            "action_space": self.action_space,
            "arch": self.net.arch,
        });
        let mut ck = Checkpoint::new(seed, header);
        ck.push_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Format(format!("bad flat policy header: {e}"));
        let arch: MlpArch = serde_json::from_value(ck.header["arch"].clone()).map_err(bad)?;
        let action_space: ActionSpace = serde_json::from_value(ck.header["action_space"].clone()).map_err(bad)?;
        let mut p = Self::new(arch.input_dim, action_space, arch.hidden.clone(), 1.0, 0)?;
        p.params = ck.params("", p.params.layout())?;
        Ok(p)
    }
}

/// Either policy family, as loaded from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyPolicy {
    Hier(HierPolicy),
    Flat(FlatPolicy),
}

impl AnyPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.header["policy"].as_str() {
            Some("hier") => Ok(Self::Hier(HierPolicy::from_checkpoint(ck)?)),
            Some("flat") => Ok(Self::Flat(FlatPolicy::from_checkpoint(ck)?)),
            other => Err(Error::Format(format!("unknown policy kind {other:?}"))),
        }
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            Self::Hier(p) => &p.params,
            Self::Flat(p) => &p.params,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Hier(p) => p.spec.obs_dim,
            Self::Flat(p) => p.obs_dim,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Self::Hier(p) => p.spec.action_space,
            Self::Flat(p) => p.action_space,
        }
    }
}
