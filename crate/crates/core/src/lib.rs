//! Simulation of a collusion-driven RF-fingerprint impersonation attack.
//!
//! Legitimate O-QPSK devices differ only in their I/Q imbalance. A receiver
//! classifies them from the channel-robust [`clps`] feature of the received
//! preamble. An attacker and a colluder share a VAE that reshapes the
//! attacker's preamble so that, after the attacker's own hardware and a
//! multipath channel, the receiver attributes it to a chosen target.
//!
//! [`attack::run_scenario`] runs the whole pipeline; [`eval`] scores it and
//! [`check`] holds the acceptance suite. Data-parallel loops go through
//! [`rffsb_nn::par`], so disabling the `parallel` feature (or calling
//! `par::set_sequential(true)`) gives the same results on one thread.

pub mod artifacts;
pub mod attack;
pub mod check;
pub mod config;
pub mod channel;
pub mod clps;
pub mod dataset;
mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod seed;
pub mod signal;

pub use error::{CoreError, Result};
