//! Identification and quantification of volatile organic compounds from
//! infrared absorption spectra.
//!
//! The crate provides a small reverse-mode differentiation engine, a
//! two-head convolutional discriminator (class + per-compound
//! concentration), a conditional variational autoencoder used to generate
//! spectra for data augmentation, and the statistics used to compare
//! trained models.

pub mod autodiff;
pub mod error;
pub mod par;

pub use error::{Error, Result};
pub mod dataset;
pub mod seed;
pub mod train;
pub mod discriminator;
pub mod cvae;
pub mod analysis;
pub mod checkpoint;
pub mod augmentation;
pub mod gradcheck;
