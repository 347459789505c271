//! Training: source pretraining, the alternating alignment / classification
//! epochs, information-maximization stages, and the full run.

mod losses;
mod model;
mod train;

pub use losses::{ClsLoss, ImLoss, class_weights, classification_loss_n, im_losses, source_loss};
pub use model::{ModelCheckpoint, OstarModel, TrainConfig, load_model, save_model};
pub(crate) use model::argmax_rows;
pub use train::{
    AlignmentLosses, EpochMetrics, PretrainReport, RunReport, Stage, StageLosses, Trainer, pretrain_encoder, run_ostar,
    run_ostar_with,
};
