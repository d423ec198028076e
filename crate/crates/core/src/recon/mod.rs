//! Composite objective, optimizers and the training loop.

pub mod adam;
pub mod data;
pub mod losses;
pub mod train;

pub use adam::Adam;
pub use data::{DataProblem, StateData};
pub use losses::{phase_smoothness_loss, phase_weights, spatial_smoothness_loss, tv_loss};
pub use train::{
    init_cloud, init_model, init_motion, loss_history_csv, objective, state_volumes, train, train_with, write_checkpoint,
    write_outputs, Gradients, LossBreakdown, Optimizers, ReconModel, TrainOutput, Trainer,
};
