//! Regime-switching local volatility toolkit.
//!
//! The asset follows a local-volatility diffusion whose volatility curve,
//! rate and dividend switch with an independent continuous-time Markov
//! chain. This crate provides:
//!
//! * generator-matrix algebra and transition matrices ([`markov`]),
//! * the coupled backward pricing system for regime-indexed calls
//!   ([`backward`]),
//! * the forward strike-maturity system and its linearization ([`dupire`]),
//! * fundamental-solution tools with Gaussian lower bounds ([`funsol`]),
//! * state-price density extraction ([`density`]),
//! * a regime-switching Monte Carlo cross-check ([`mc`]),
//! * Tikhonov-regularized volatility reconstruction and stability
//!   diagnostics ([`inverse`]).
//!
//! The crate is `no_std` (with `alloc`); all floating-point math goes
//! through `libm`. IO, configuration files and the command line live in the
//! companion `rsvol-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analytic;
pub mod backward;
pub mod density;
pub mod dupire;
mod error;
pub mod funsol;
pub mod grid;
pub mod inverse;
mod linalg;
pub mod markov;
pub mod mc;
pub mod model;
pub mod stepper;

pub use error::{Error, Result};
