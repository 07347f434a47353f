//! Minimal differentiable computation for the policy losses: flat parameter
//! vectors, tanh MLPs with hand-written backpropagation, categorical and
//! diagonal-Gaussian log-densities, and finite-difference verification.

pub mod checkpoint;
pub mod dist;
pub mod grad;
pub mod mlp;
pub mod optim;
pub mod params;

pub use checkpoint::Checkpoint;
pub use dist::{categorical_logprob, gaussian_logprob, log_sum_exp, Categorical, DiagGaussian};
pub use grad::{finite_diff_check, grad, CorruptedGradient, FdReport, Loss};
pub use mlp::{mlp_forward, Mlp, MlpArch, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{checksum_values, GradientVector, Layout, ParamVector, SegmentSpec};
