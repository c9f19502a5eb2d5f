//! Margin-loss training with negative sampling, the optional variance
//! penalty, an Adam optimiser and checkpoint files.

pub mod checkpoint;
mod optim;
mod trainer;

pub use optim::Adam;
pub use trainer::{
    loss_grad_check, qe_loss, qe_loss_value, sample_loss, sample_negatives, total_loss, Precision,
    SampleLoss, StepRecord, TrainConfig, Trainer, TrainingSample,
};
