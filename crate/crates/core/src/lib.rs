//! Off-policy actor-critic learning with a state-distribution-shift penalty.
//!
//! The crate is `no_std` (with `alloc`) so the numerical pieces can be
//! embedded anywhere; file formats, the CLI and the experiment harness live in
//! the `statekl-harness` companion crate.
//!
//! Layout:
//! - [`numcore`]: dense tensors, a reverse-mode tape, MLPs, Adam.
//! - [`envspace`]: seedable continuous-control environments.
//! - [`replay`]: episode-tagged replay storage with uniform, delayed and
//!   windowed sampling, plus the online (near on-policy) buffer.
//! - [`statedensity`]: VAE density models over policy features and the KL
//!   surrogate between replay and online state distributions.
//! - [`agents`]: DDPG, TD3 and SAC updaters with the optional KL penalty.
//! - [`batchrl`]: fixed-batch data generation and the BCQ-lite learner.
//! - [`train`]: the online training loop producing metric rows.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agents;
pub mod batchrl;
pub mod envspace;
pub mod metrics;
pub mod numcore;
pub mod replay;
pub mod rng;
pub mod statedensity;
pub mod train;
