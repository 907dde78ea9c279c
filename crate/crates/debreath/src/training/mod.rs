//! Loss functions, Adam optimization, early stopping, and the training
//! loop that ties them to the network.

mod adam;
mod early_stopping;
mod loss;
mod trainer;

pub use adam::{adam_step, adam_update_slice, AdamState};
pub use early_stopping::{EarlyStopping, StopDecision};
pub use loss::{mae_loss, speech_loss, total_loss};
pub use trainer::{train, EpochRecord, TrainConfig, TrainHistory};
