//! Policy-gradient machinery: the exact latent-marginalized log-likelihood
//! gradient, its latent-as-observation approximation, baselines, GAE at both
//! time scales, and the clipped surrogates.

mod advantages;
mod baselines;
mod oracle;
mod surrogate;

pub use advantages::{estimate_advantages, segment_gae, step_gae, AdvantageSet, NormStats};
pub use baselines::{
    baseline_terms, fit_baselines, returns_to_go, BaselineConfig, BaselineMode, BaselineSet, ValueNet,
};
pub use oracle::{
    approx_logprob_at, approx_logprob_grad, exact_logprob_at, exact_logprob_grad, TrajectoryLogLik, ORACLE_MAX_SKILLS,
    ORACLE_MAX_STEPS,
};
pub use surrogate::{clipped_term, hier_vpg_gradient, FlatPpoSurrogate, HierTerms, HippoSurrogate, SurrogateStats};
