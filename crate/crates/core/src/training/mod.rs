//! Loss, Adam, the early-stopping training loop and transfer fine-tuning.

mod optim;
mod trainer;
mod transfer;

pub use optim::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use trainer::{loss, train, EpochRecord, TrainConfig, TrainReport};
pub use transfer::{finetune, transfer_init, TransferScope};
