//! Conditional variational autoencoder used to synthesise spectra.

mod model;
mod training;

pub use model::{
    cvae_loss, cvae_loss_tape, kl_divergence, reparameterize, reparameterize_tape, reparameterize_with, CvaeArch,
    CvaeModel,
};
pub use training::{train_cvae, train_cvae_fold, CvaeFold};
