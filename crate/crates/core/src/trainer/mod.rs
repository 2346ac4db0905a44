//! Manual-backprop training of the host model on a mixture of in-context
//! tasks, plus the gradient check that gates it.

mod backprop;
mod gradcheck;
mod init;
mod recipe;
mod train;

pub use backprop::{batch_loss, loss_and_grad, PackedBatch};
pub use gradcheck::{grad_check, GradCheckReport, TensorError};
pub use init::{init_model, init_model_with_std, INIT_STD};
pub use recipe::{finetune_config, reference_recipe, Recipe};
pub use train::{
    probe_accuracy, sample_batch, train, write_loss_log, EvalProbe, LogRow, Mixture, MixtureEntry, TrainConfig,
    TrainOutput,
};
