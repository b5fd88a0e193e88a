//! Structural regularization and a small SGD stack for toy classifiers.

mod data;
mod model;
mod nn;
mod sr;
mod train;

pub use data::{evaluate, make_toy_dataset, Evaluation, Split, ToyDataset, TEST_SIZE, TRAIN_SIZE};
pub use model::{
    decompose_model, Classifier, DecomposedModel, Params, Stage, ToyLayer, ToyModel, ToyModelSpec,
};
pub use sr::{sr_grad, sr_loss, sr_residual, SrLoss, SR_EPSILON};
pub use train::{
    train, EpochRecord, TrainLog, TrainMode, TrainOutcome, TrainSummary, TrainingConfig,
    POST_TRAINING_TOLERANCE,
};
