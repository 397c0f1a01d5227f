//! Meta-learning with mirror-descent task adaptation.
//!
//! Task-level optimization runs in a dual space: starting from a learned
//! dual initialization `θ_z`, each step descends `z ← z − α∇ℓ(∇h*(z))` and
//! the primal parameters are recovered through the gradient of a learned
//! convex, Lipschitz-smooth conjugate `h*(·; θ_h)`. Plain gradient descent
//! (MAML-style) and preconditioned gradient descent are the special cases
//! `h* = ½‖z‖²` and `h* = ½zᵀPz`.
//!
//! Modules:
//! - [`diff`]: reverse-mode tape, forward-over-reverse HVPs, FD oracle.
//! - [`mirror`]: the constrained conjugate network and its Lipschitz bounds.
//! - [`adaptation`]: K-step task optimizers producing full traces.
//! - [`meta_gradient`]: unrolled and explicit chain-rule meta-gradients.
//! - [`smoothness`]: convergence constants and adaptive meta learning rates.
//! - [`tasks`]: synthetic few-shot task families.
//! - [`trainer`]: the meta-training loop, evaluation and checkpoints.
//! - [`config`] / [`cli`]: experiment configuration and command surface.

pub mod adaptation;
pub mod array;
pub mod cli;
pub mod config;
pub mod diff;
pub mod error;
pub mod meta_gradient;
pub mod mirror;
pub mod selftest;
pub mod smoothness;
pub mod tasks;
pub mod trainer;

pub use array::Array64;
pub use error::{Error, Result};
