//! Reverse-mode training through unrolled solver rollouts.

mod eval;
mod fit;
mod optim;
mod physics;
mod rollout;

pub use eval::{evaluate, rollout, Evaluation, Model, Rollout};
pub use fit::{batch_loss_grad, fit, fit_from, sample_windows, write_log, FitOptions, FitResult, LogRow, Sample, TrainConfig};
pub use optim::{learning_rate, optimizer_step, AdamConfig, AdamState};
pub use physics::{FlowPhysics, KsPhysics, Physics};
pub use rollout::{check_model, loss_and_grad, predict, predict_until_divergence, unrolled_loss, LossReport, Prediction};
