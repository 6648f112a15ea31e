//! Category-level pose estimation as navigation through the input space of a
//! differentiable pose-aware generator.
//!
//! The generator renders an image from a pose state (Euler angles,
//! image-plane translation with log-scale, and a latent appearance code).
//! Policies observe the current synthesis next to a target image and emit
//! additive state updates: gradient descent on an image loss, soft
//! actor-critic, behavior cloning, DAgger, and learned-then-GD hybrids.

pub mod autodiff;
pub mod generator;
pub mod geometry;
pub mod policy;
pub mod rl;
pub mod il;
pub mod eval;
pub mod error;

pub use error::{Error, Result};
