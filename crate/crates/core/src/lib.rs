//! Scheduling models for wireless-powered rechargeable sensor networks.
//!
//! A base station beamforms energy to one sensor node per slot and collects
//! its packets. This crate holds everything that is pure model and
//! algorithm, with no I/O:
//!
//! - [`types`]: network parameters, per-node and joint states, actions and
//!   the mixed-radix state enumeration.
//! - [`channel`]: static path-loss channel gains for a deployment.
//! - [`energy`]: transfer/transmit power, optimal modulation order and the
//!   quantized per-slot battery change.
//! - [`mdp`]: the centralized scheduling MDP, its sparse transition model,
//!   value iteration and the per-slot EHMDP chooser.
//! - [`eqat`]: transmission-probability designs, collision probability, the
//!   collided transition law and the E-QAT node controller.
//! - [`sim`]: a slotted Monte-Carlo simulator comparing six strategies.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod channel;
pub mod energy;
pub mod eqat;
mod error;
pub mod mdp;
pub mod sim;
pub mod special;
pub mod types;

pub use error::{Error, Result, Violation};
pub use types::{Action, JointState, NetworkParams, NodeState, StateSpace};
