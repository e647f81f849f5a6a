//! Dense arrays and a define-by-run reverse-mode differentiation tape with
//! the operators the discriminator and the conditional autoencoder need.

mod array;
pub(crate) mod kernels;
mod optim;
mod param;
mod tape;

pub use array::Array;
pub use optim::Adam;
pub use param::{fan_in_uniform, he_normal, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
