//! Pixel-based reinforcement learning with a curiosity-driven contrastive
//! forward dynamics model.
//!
//! A convolutional query encoder is trained by two signals: the critic of a
//! Soft Actor-Critic agent, and an InfoNCE objective that asks a forward
//! dynamics model to predict, from the current latent and an action
//! embedding, the momentum-encoded latent of the next observation. The
//! model's prediction error doubles as a decaying intrinsic reward.
//!
//! Everything runs on the CPU on top of the small reverse-mode
//! differentiation engine in [`autodiff`].

pub mod autodiff;
pub mod contrastive;
pub mod curiosity;
pub mod encoders;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod sac;

pub use autodiff::{Adam, AdamConfig, ParameterSet, Real, Tape, Tensor, Var};
pub use error::{Error, Result};
