//! Losses, step-size schedule and the training loop.

mod loss;
mod schedule;
mod trainer;

pub use loss::{batch_gradients, loss_pred, loss_sys, window_objective, BatchGradients, Objective};
pub use schedule::TturSchedule;
pub use trainer::{
    checkpoint_path, resume_run, train_run, write_csv_rows, write_metrics, LossRecord, TrainConfig, TrainState, Trainer,
};
