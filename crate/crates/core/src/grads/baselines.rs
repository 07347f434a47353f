use serde::{Deserialize, Serialize};

use crate::diffcore::{GradientVector, Mlp, MlpArch, Optimizer, ParamVector};
use crate::hierpolicy::{HierPolicy, LatentCode};
use crate::rollout::{Batch, Trajectory};
use crate::seeding;
use crate::{Error, Result};

/// Which step-level baseline to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// `b_l(s, z, time_remaining)`.
    Latent,
    /// `b_l(s)`.
    StateOnly,
    /// No baseline at either level.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub hidden: Vec<usize>,
    /// Full-batch Adam steps per fit.
    pub epochs: usize,
    pub lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 30,
            lr: 1e-2,
        }
    }
}

/// Scalar MLP regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub params: ParamVector,
    net: Mlp,
}

impl ValueNet {
    pub fn new(input_dim: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let arch = MlpArch::new(input_dim, hidden, 1)?;
        let mut params = ParamVector::zeros(arch.layout());
        let net = Mlp::new(arch, 0);
        net.init(params.values_mut(), 1.0, &mut seeding::derived_rng(seed, &[0xB45E]));
        Ok(Self { params, net })
    }

    pub fn input_dim(&self) -> usize {
        self.net.arch.input_dim
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(self.params.values(), x)?[0])
    }

    /// Mean squared error over `(inputs, targets)`.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let e = self.predict(x)? - y;
            s += e * e;
        }
        Ok(s / inputs.len().max(1) as f64)
    }

    /// Full-batch Adam regression; returns (loss before, loss after).
    pub fn fit(&mut self, inputs: &[Vec<f64>], targets: &[f64], epochs: usize, lr: f64) -> Result<(f64, f64)> {
        if inputs.is_empty() {
            return Err(Error::Fit("empty regression set".into()));
        }
        let first = self.loss(inputs, targets)?;
        let mut opt = Optimizer::adam(lr, self.params.len());
        let scale = 2.0 / inputs.len() as f64;
        for _ in 0..epochs {
            let mut g = GradientVector::zeros(self.params.layout());
            let theta = self.params.values();
            for (x, y) in inputs.iter().zip(targets) {
                let tr = self.net.forward_trace(theta, x)?;
                let e = tr.output()[0] - y;
                self.net.backward(theta, &tr, &[scale * e], &mut g.values);
            }
            opt.step(&mut self.params, &g, None)?;
        }
        let last = self.loss(inputs, targets)?;
        if !last.is_finite() {
            return Err(Error::numerical("baseline", "regression loss diverged"));
        }
        Ok((first, last))
    }
}

/// Discounted returns-to-go within one trajectory.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Manager-level `b_h(s)` and step-level `b_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSet {
    pub mode: BaselineMode,
    pub n: usize,
    pub time_scale: f64,
    pub b_h: ValueNet,
    pub b_l: ValueNet,
    /// (before, after) regression losses of the last fit.
    pub fit_h: (f64, f64),
    pub fit_l: (f64, f64),
}

impl BaselineSet {
    pub fn new(
        mode: BaselineMode,
        obs_dim: usize,
        n: usize,
        time_scale: f64,
        cfg: &BaselineConfig,
        seed: u64,
    ) -> Result<Self> {
        let l_dim = match mode {
            BaselineMode::Latent => obs_dim + n + 1,
            _ => obs_dim,
        };
        Ok(Self {
            mode,
            n,
            time_scale,
            b_h: ValueNet::new(obs_dim, cfg.hidden.clone(), seeding::derive(seed, &[0]))?,
            b_l: ValueNet::new(l_dim, cfg.hidden.clone(), seeding::derive(seed, &[1]))?,
            fit_h: (0.0, 0.0),
            fit_l: (0.0, 0.0),
        })
    }

    pub fn low_input(&self, obs: &[f64], z: LatentCode, time_remaining: usize) -> Vec<f64> {
        let mut x = obs.to_vec();
        if self.mode == BaselineMode::Latent {
            x.extend((0..self.n).map(|j| if j == z.0 { 1.0 } else { 0.0 }));
            x.push(time_remaining as f64 / self.time_scale);
        }
        x
    }

    pub fn high(&self, obs: &[f64]) -> Result<f64> {
        match self.mode {
            BaselineMode::None => Ok(0.0),
            _ => self.b_h.predict(obs),
        }
    }

    pub fn low(&self, obs: &[f64], z: LatentCode, time_remaining: usize) -> Result<f64> {
        match self.mode {
            BaselineMode::None => Ok(0.0),
            _ => self.b_l.predict(&self.low_input(obs, z, time_remaining)),
        }
    }

    /// Step-level baseline values along one trajectory.
    pub fn low_values(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(traj.len());
        for seg in &traj.segments {
            for t in seg.steps() {
                out.push(self.low(&traj.obs[t], seg.z, traj.time_remaining[t])?);
            }
        }
        Ok(out)
    }

    pub fn high_values(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        traj.segments.iter().map(|s| self.high(&traj.obs[s.start_t])).collect()
    }
}

/// The baseline-only parts of the hierarchical gradient estimate for one
/// trajectory: `sum_k b_h(s_k) grad log pi_h(z_k | s_k)` and
/// `sum_t b_l(s_t, z, tr_t) grad log pi_l(a_t | s_t, z)`. Both have zero
/// expectation for any baseline functions.
pub fn baseline_terms(
    policy: &HierPolicy,
    traj: &Trajectory,
    set: &BaselineSet,
) -> Result<(GradientVector, GradientVector)> {
    let theta = policy.params.values();
    let mut gh = GradientVector::zeros(policy.layout());
    let mut gl = GradientVector::zeros(policy.layout());
    for seg in &traj.segments {
        let s0 = seg.start_t;
        let bh = set.high(&traj.obs[s0])?;
        policy.manager_logprob_at(theta, &traj.obs[s0], seg.p, seg.z, Some((&mut gh.values, bh)))?;
        for t in seg.steps() {
            let bl = set.low(&traj.obs[t], seg.z, traj.time_remaining[t])?;
            policy.skill_logprob_at(
                theta,
                &traj.obs[t],
                seg.z,
                traj.time_remaining[t],
                &traj.actions[t],
                Some((&mut gl.values, bl)),
            )?;
        }
    }
    Ok((gh, gl))
}

/// Regresses `b_h` on returns-to-go at segment starts and `b_l` on per-step
/// returns-to-go. Starts from `set`'s current weights.
pub fn fit_baselines(set: &mut BaselineSet, batch: &Batch, gamma: f64, cfg: &BaselineConfig) -> Result<()> {
    if batch.trajectories.is_empty() {
        return Err(Error::Fit("cannot fit baselines on an empty batch".into()));
    }
    if set.mode == BaselineMode::None {
        return Ok(());
    }
    let (mut xh, mut yh, mut xl, mut yl) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for traj in &batch.trajectories {
        let g = returns_to_go(&traj.rewards, gamma);
        for seg in &traj.segments {
            xh.push(traj.obs[seg.start_t].clone());
            yh.push(g[seg.start_t]);
            for t in seg.steps() {
                xl.push(set.low_input(&traj.obs[t], seg.z, traj.time_remaining[t]));
                yl.push(g[t]);
            }
        }
    }
    set.fit_h = set.b_h.fit(&xh, &yh, cfg.epochs, cfg.lr)?;
    set.fit_l = set.b_l.fit(&xl, &yl, cfg.epochs, cfg.lr)?;
    Ok(())
}
