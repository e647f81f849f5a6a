//! Two-head convolutional classifier and concentration regressor.

mod model;
mod training;

pub use model::{
    argmax, composite_loss, composite_loss_tape, stack_spectra, stack_targets, DiscriminatorArch,
    DiscriminatorModel, ForwardVars, Prediction, PROB_FLOOR,
};
pub use training::{check_class_coverage, train_discriminator, train_fold, train_kfold, FoldOutcome};
