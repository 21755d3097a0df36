//! Numerical toolkit for the scattering picture of deep learning.
//!
//! Neurons are modelled as scatterers of an incident image wave. The crate
//! provides the pieces needed to check that picture numerically:
//!
//! - [`wavefield`]: complex fields on regular grids, plane waves and the
//!   translation operator (closed form and truncated Taylor series).
//! - [`scattering`]: outgoing Green function, first Born scattering,
//!   slit interference and the scattering-derived convolution kernel.
//! - [`neuralnet`]: a small real-valued CNN with exact backpropagation and
//!   the entropy family of loss functions.
//! - [`energymodel`]: restricted Boltzmann machine statistics, block Gibbs
//!   sampling, contrastive divergence, Markov chains and tempered sampling.
//! - [`optim`]: plain gradient descent and the momentum update.
//! - [`format`]: PGM, CSV and checkpoint text formats.
//!
//! Everything is deterministic: stochastic routines take explicit seeds and
//! use a portable ChaCha stream.

pub mod energymodel;
pub mod error;
pub mod format;
pub mod neuralnet;
pub mod optim;
pub mod scattering;
pub mod sum;
pub mod wavefield;

pub use error::{Error, Result};
pub use num_complex::Complex64;
