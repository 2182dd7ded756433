//! Learned belief tracking for a stochastic 2-D ball world.
//!
//! The crate bundles five layers that build on each other:
//!
//! - [`ballworld`]: the ground-truth simulator (dynamics, rendering,
//!   noisy position measurements, dataset generation).
//! - [`nnsub`]: a small reverse-mode differentiation substrate with the
//!   layers the learned tracker needs, plus Adam and checkpointing.
//! - [`paegan`]: the predictive autoencoder (encoder, GRU, decoder), the
//!   belief-state sampler and the discriminator, with their training loops.
//! - [`pfilter`]: a particle filter that is handed the true models and
//!   serves as the near-optimal reference tracker.
//! - [`evalharness`]: tracking protocols, MSE-versus-horizon curves and
//!   frame strips comparing both trackers.
//!
//! The `paegan` binary in this crate drives the whole pipeline; see
//! [`cli`].

pub mod ballworld;
pub mod cli;
pub mod container;
pub mod error;
pub mod evalharness;
pub mod nnsub;
pub mod paegan;
pub mod pfilter;
pub mod seed;

pub use error::{Error, Result};
