//! Models, DP-SGD, coupled training and stability bounds.

mod coupling;
mod dpsgd;
mod model;
mod stability;

pub use coupling::{coupled_train, CouplingOptions, CouplingTrace, ExtraInclusion};
pub use dpsgd::{
    clip_gradient, dp_sgd_train, dp_sgd_train_audited, poisson_sample, EmptyBatchPolicy,
    TrainConfig, TrainedModel,
};
pub use model::{loss_and_grad, ModelKind, ModelSpec};
pub use stability::{expected_inverse_batch, stability_bound_smooth, stability_bound_universal};
