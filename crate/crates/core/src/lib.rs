//! Continuous speculative execution for multi-hop tool-use trajectories.
//!
//! An agent trajectory alternates between model segments and slow tool calls.
//! A fast speculator guesses each tool observation so the model can keep
//! generating ahead of the authoritative tool; a verifier later accepts or
//! rolls back each guess. This crate provides:
//!
//! - [`profile`]: latency distributions and `(p, alpha, beta, nu)` system profiles
//! - [`analytics`]: closed-form latency, window, starvation and capacity formulas
//! - [`engine`]: a discrete-event scheduler running sequential, full-speculation,
//!   bounded-window and continuous policies, plus a real-time concurrent executor
//! - [`verifier`]: the deterministic rule-based observation verifier
//! - [`trace`]: JSON Lines trace ingestion and deterministic replay
//! - [`experiments`]: Monte Carlo estimation, sweeps and theory comparison

pub mod analytics;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod profile;
pub mod trace;
pub mod verifier;

pub use error::{Error, Result};
