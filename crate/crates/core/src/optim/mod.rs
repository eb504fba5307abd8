//! Photometric loss, Adam with per-group learning rates, and the training loop.

mod adam;
mod config;
mod loss;
mod train;

pub use adam::{position_lr, Adam, LearningRates, BETA1, BETA2, EPSILON};
pub use config::{LrConfig, TrainConfig};
pub use loss::{photometric_loss, ssim, ssim_with_grad, DEFAULT_LAMBDA_SSIM, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use train::{read_ndjson, train, train_observed, write_ndjson, StepObservation, StepRecord, TrainOutput};
