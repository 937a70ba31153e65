//! Losses and the two-stage SGD schedule.

mod check;
mod loss;
mod trainer;

pub use check::{toy_batch, toy_grad_check, toy_profile_values, TOY_FLOOR, TOY_KEYS, TOY_VOCAB};
pub use loss::{loss_detector, loss_generation, total_loss, BatchItem, LossBreakdown};
pub use trainer::{
    assign_detected_anchors, assign_random_anchors, profile_value_ids, train_two_stage, train_two_stage_with,
    EpochRecord, GradReduction, LossTotals, TrainConfig, TrainReport, Trainer,
};
