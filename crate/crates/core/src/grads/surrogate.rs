use serde::{Deserialize, Serialize};

use super::advantages::AdvantageSet;
use crate::diffcore::{GradientVector, Loss, ParamVector};
use crate::hierpolicy::{FlatPolicy, HierPolicy};
use crate::rollout::{Batch, TrajectoryKind};
use crate::{Error, Result};

/// `min(w A, clip(w, 1 - eps, 1 + eps) A)`; `eps = None` disables clipping.
pub fn clipped_term(w: f64, a: f64, eps: Option<f64>) -> f64 {
    match eps {
        None => w * a,
        Some(e) => (w * a).min(w.clamp(1.0 - e, 1.0 + e) * a),
    }
}

/// Whether the unclipped branch is the active one (ties count as unclipped).
fn unclipped_active(w: f64, a: f64, eps: Option<f64>) -> bool {
    match eps {
        None => true,
        Some(e) => w * a <= w.clamp(1.0 - e, 1.0 + e) * a,
    }
}

/// Which ratio families contribute to the hierarchical surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierTerms {
    Both,
    ManagerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SurrogateStats {
    pub loss: f64,
    /// Fraction of ratio terms on the clipped branch.
    pub clip_fraction: f64,
    pub terms: usize,
}

fn ratio(lp: f64, old: f64, traj: usize, t: usize) -> Result<f64> {
    let w = (lp - old).exp();
    if !old.is_finite() || !w.is_finite() {
        return Err(Error::numerical(
            format!("trajectory {traj}, step {t}"),
            format!("non-finite probability ratio (log-prob {lp}, old {old})"),
        ));
    }
    Ok(w)
}

struct Acc {
    obj: f64,
    clipped: usize,
    terms: usize,
}

impl Acc {
    fn term(&mut self, w: f64, a: f64, eps: Option<f64>) -> bool {
        self.obj += clipped_term(w, a, eps);
        self.terms += 1;
        let active = unclipped_active(w, a, eps);
        if !active {
            self.clipped += 1;
        }
        active
    }

    fn stats(&self, n: f64) -> SurrogateStats {
        SurrogateStats {
            loss: -self.obj / n,
            clip_fraction: if self.terms == 0 {
                0.0
            } else {
                self.clipped as f64 / self.terms as f64
            },
            terms: self.terms,
        }
    }
}

/// Negative clipped hierarchical surrogate, averaged over trajectories.
/// With `eps_clip = None` its gradient at the collection parameters is the
/// hierarchical policy-gradient estimate.
pub struct HippoSurrogate<'a> {
    pub policy: &'a HierPolicy,
    pub batch: &'a Batch,
    pub adv: &'a AdvantageSet,
    pub eps_clip: Option<f64>,
    pub terms: HierTerms,
}

impl HippoSurrogate<'_> {
    pub fn evaluate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<SurrogateStats> {
        self.adv.check_shape(self.batch)?;
        let n = self.batch.trajectories.len() as f64;
        let eps = self.eps_clip;
        let mut acc = Acc {
            obj: 0.0,
            clipped: 0,
            terms: 0,
        };
        for (i, traj) in self.batch.trajectories.iter().enumerate() {
            if traj.kind != TrajectoryKind::Hier {
                return Err(Error::Argument(
                    "hierarchical surrogate needs hierarchical trajectories".into(),
                ));
            }
            for (k, seg) in traj.segments.iter().enumerate() {
                let s0 = seg.start_t;
                let a = self.adv.manager[i][k];
                let old = seg.manager_logprob_old;
                let mut err = None;
                let mut coeff = |lp: f64| match ratio(lp, old, i, s0) {
                    Ok(w) => {
                        if acc.term(w, a, eps) {
                            -a * w / n
                        } else {
                            0.0
                        }
                    }
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                };
                match grad.as_deref_mut() {
                    Some(g) => self
                        .policy
                        .manager_logprob_with(theta, &traj.obs[s0], seg.p, seg.z, g, &mut coeff)?,
                    None => {
                        let lp = self
                            .policy
                            .manager_logprob_at(theta, &traj.obs[s0], seg.p, seg.z, None)?;
                        coeff(lp);
                        lp
                    }
                };
                if let Some(e) = err {
                    return Err(e);
                }
                if self.terms == HierTerms::ManagerOnly {
                    continue;
                }
                for t in seg.steps() {
                    let a = self.adv.step[i][t];
                    let old = traj.skill_logprob_old[t];
                    let mut err = None;
                    let mut coeff = |lp: f64| match ratio(lp, old, i, t) {
                        Ok(w) => {
                            if acc.term(w, a, eps) {
                                -a * w / n
                            } else {
                                0.0
                            }
                        }
                        Err(e) => {
                            err = Some(e);
                            0.0
                        }
                    };
                    let (obs, tr, act) = (&traj.obs[t], traj.time_remaining[t], &traj.actions[t]);
                    match grad.as_deref_mut() {
                        Some(g) => self
                            .policy
                            .skill_logprob_with(theta, obs, seg.z, tr, act, g, &mut coeff)?,
                        None => {
                            let lp = self.policy.skill_logprob_at(theta, obs, seg.z, tr, act, None)?;
                            coeff(lp);
                            lp
                        }
                    };
                    if let Some(e) = err {
                        return Err(e);
                    }
                }
            }
        }
        Ok(acc.stats(n))
    }
}

impl Loss for HippoSurrogate<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params.values(), None)?.loss)
    }

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, GradientVector)> {
        let mut g = GradientVector::zeros(params.layout());
        let s = self.evaluate(params.values(), Some(&mut g.values))?;
        Ok((s.loss, g))
    }
}

/// Negative clipped PPO surrogate for a flat policy. One ratio per decision
/// (segment start), weighted by the decision-level advantage.
pub struct FlatPpoSurrogate<'a> {
    pub policy: &'a FlatPolicy,
    pub batch: &'a Batch,
    pub adv: &'a AdvantageSet,
    pub eps_clip: Option<f64>,
}

impl FlatPpoSurrogate<'_> {
    pub fn evaluate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<SurrogateStats> {
        self.adv.check_shape(self.batch)?;
        let n = self.batch.trajectories.len() as f64;
        let eps = self.eps_clip;
        let mut acc = Acc {
            obj: 0.0,
            clipped: 0,
            terms: 0,
        };
        for (i, traj) in self.batch.trajectories.iter().enumerate() {
            for (k, seg) in traj.segments.iter().enumerate() {
                let s0 = seg.start_t;
                let a = self.adv.manager[i][k];
                let old = seg.manager_logprob_old;
                let mut err = None;
                let mut coeff = |lp: f64| match ratio(lp, old, i, s0) {
                    Ok(w) => {
                        if acc.term(w, a, eps) {
                            -a * w / n
                        } else {
                            0.0
                        }
                    }
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                };
                match grad.as_deref_mut() {
                    Some(g) => self
                        .policy
                        .logprob_with(theta, &traj.obs[s0], &traj.actions[s0], g, &mut coeff)?,
                    None => {
                        let lp = self.policy.logprob_at(theta, &traj.obs[s0], &traj.actions[s0], None)?;
                        coeff(lp);
                        lp
                    }
                };
                if let Some(e) = err {
                    return Err(e);
                }
            }
        }
        Ok(acc.stats(n))
    }
}

impl Loss for FlatPpoSurrogate<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params.values(), None)?.loss)
    }

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, GradientVector)> {
        let mut g = GradientVector::zeros(params.layout());
        let s = self.evaluate(params.values(), Some(&mut g.values))?;
        Ok((s.loss, g))
    }
}

/// Mean over trajectories of `sum_k grad log pi_h * A_k + sum_t grad log pi_l * A_t`
/// at the policy's current parameters (an ascent direction).
pub fn hier_vpg_gradient(batch: &Batch, adv: &AdvantageSet, policy: &HierPolicy) -> Result<GradientVector> {
    let mut g = GradientVector::zeros(policy.layout());
    let n = batch.trajectories.len() as f64;
    let theta = policy.params.values();
    adv.check_shape(batch)?;
    for (i, traj) in batch.trajectories.iter().enumerate() {
        for (k, seg) in traj.segments.iter().enumerate() {
            let s0 = seg.start_t;
            policy.manager_logprob_at(
                theta,
                &traj.obs[s0],
                seg.p,
                seg.z,
                Some((&mut g.values, adv.manager[i][k] / n)),
            )?;
            for t in seg.steps() {
                policy.skill_logprob_at(
                    theta,
                    &traj.obs[t],
                    seg.z,
                    traj.time_remaining[t],
                    &traj.actions[t],
                    Some((&mut g.values, adv.step[i][t] / n)),
                )?;
            }
        }
    }
    g.check_finite()?;
    Ok(g)
}
