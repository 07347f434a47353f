use crate::diffcore::dist::softmax;
use crate::diffcore::{log_sum_exp, GradientVector, Loss, ParamVector};
use crate::hierpolicy::{HierPolicy, LatentCode};
use crate::rollout::{Segment, Trajectory, TrajectoryKind};
use crate::{Error, Result};

/// Longest trajectory and largest skill count the exact oracle accepts.
pub const ORACLE_MAX_STEPS: usize = 64;
pub const ORACLE_MAX_SKILLS: usize = 8;

fn check_hier(traj: &Trajectory) -> Result<()> {
    if traj.kind != TrajectoryKind::Hier {
        return Err(Error::Argument(
            "gradient oracles need a hierarchical trajectory".into(),
        ));
    }
    Ok(())
}

fn check_budget(policy: &HierPolicy, traj: &Trajectory) -> Result<()> {
    if traj.len() > ORACLE_MAX_STEPS || policy.n() > ORACLE_MAX_SKILLS {
        return Err(Error::Budget(format!(
            "exact oracle limited to H <= {ORACLE_MAX_STEPS}, n <= {ORACLE_MAX_SKILLS} (got H = {}, n = {}); \
             use approx_logprob_grad for longer trajectories",
            traj.len(),
            policy.n()
        )));
    }
    Ok(())
}

/// `log pi_h(z | s_k) + sum_t log pi_l(a_t | s_t, z)` over one segment,
/// accumulating `coeff * grad` when requested.
fn segment_logprob(
    policy: &HierPolicy,
    theta: &[f64],
    traj: &Trajectory,
    seg: &Segment,
    z: LatentCode,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    let s0 = seg.start_t;
    let mut lp = policy.manager_logprob_at(
        theta,
        &traj.obs[s0],
        seg.p,
        z,
        grad.as_mut().map(|(g, c)| (&mut **g, *c)),
    )?;
    for t in seg.steps() {
        lp += policy.skill_logprob_at(
            theta,
            &traj.obs[t],
            z,
            traj.time_remaining[t],
            &traj.actions[t],
            grad.as_mut().map(|(g, c)| (&mut **g, *c)),
        )?;
    }
    Ok(lp)
}

/// `sum_k log sum_j exp(L_kj)` with `L_kj` the segment log-probability under
/// latent `j`; adds `coeff * grad` into `grad` when given.
pub fn exact_logprob_at(
    policy: &HierPolicy,
    theta: &[f64],
    traj: &Trajectory,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    check_hier(traj)?;
    check_budget(policy, traj)?;
    let mut total = 0.0;
    for seg in &traj.segments {
        let ls: Vec<f64> = (0..policy.n())
            .map(|j| segment_logprob(policy, theta, traj, seg, LatentCode(j), None))
            .collect::<Result<_>>()?;
        total += log_sum_exp(&ls);
        if let Some((g, c)) = grad.as_mut() {
            // d/dtheta log sum_j e^{L_j} = sum_j softmax(L)_j dL_j.
            for (j, w) in softmax(&ls).into_iter().enumerate() {
                if w > 0.0 {
                    segment_logprob(policy, theta, traj, seg, LatentCode(j), Some((&mut **g, *c * w)))?;
                }
            }
        }
    }
    Ok(total)
}

/// Log-likelihood treating the sampled latents as observed.
pub fn approx_logprob_at(
    policy: &HierPolicy,
    theta: &[f64],
    traj: &Trajectory,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    check_hier(traj)?;
    let mut total = 0.0;
    for seg in &traj.segments {
        total += segment_logprob(
            policy,
            theta,
            traj,
            seg,
            seg.z,
            grad.as_mut().map(|(g, c)| (&mut **g, *c)),
        )?;
    }
    Ok(total)
}

/// Gradient of the latent-marginalized action log-likelihood.
pub fn exact_logprob_grad(policy: &HierPolicy, traj: &Trajectory) -> Result<GradientVector> {
    let mut g = GradientVector::zeros(policy.layout());
    exact_logprob_at(policy, policy.params.values(), traj, Some((&mut g.values, 1.0)))?;
    g.check_finite()?;
    Ok(g)
}

/// Gradient with the sampled latents treated as part of the observation.
pub fn approx_logprob_grad(policy: &HierPolicy, traj: &Trajectory) -> Result<GradientVector> {
    let mut g = GradientVector::zeros(policy.layout());
    approx_logprob_at(policy, policy.params.values(), traj, Some((&mut g.values, 1.0)))?;
    g.check_finite()?;
    Ok(g)
}

/// Either log-likelihood as a [`Loss`] (for finite-difference checks).
pub struct TrajectoryLogLik<'a> {
    pub policy: &'a HierPolicy,
    pub traj: &'a Trajectory,
    pub exact: bool,
}

impl Loss for TrajectoryLogLik<'_> {
    fn value(&self, params: &ParamVector) -> Result<f64> {
        if self.exact {
            exact_logprob_at(self.policy, params.values(), self.traj, None)
        } else {
            approx_logprob_at(self.policy, params.values(), self.traj, None)
        }
    }

    fn value_and_grad(&self, params: &ParamVector) -> Result<(f64, GradientVector)> {
        let mut g = GradientVector::zeros(params.layout());
        let v = if self.exact {
            exact_logprob_at(self.policy, params.values(), self.traj, Some((&mut g.values, 1.0)))?
        } else {
            approx_logprob_at(self.policy, params.values(), self.traj, Some((&mut g.values, 1.0)))?
        };
        Ok((v, g))
    }
}
