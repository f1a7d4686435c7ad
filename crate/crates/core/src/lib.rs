//! Proportion-constrained optimal-transport pseudo-labeling for learning from
//! label proportions (LLP), plus the two-stage training pipeline built on it.
//!
//! The crate is organized bottom-up:
//!
//! - [`ot`]: discrete OT solvers — entropic (Sinkhorn) and exact (transportation
//!   simplex), with a brute-force enumeration oracle for testing.
//! - [`data`]: labeled datasets, bag construction with class proportions, and
//!   CSV round-tripping; includes the two-moons synthetic generator.
//! - [`pseudo`]: per-bag pseudo-label assignment by solving OT between bag
//!   proportions and instance posteriors (soft, hard, and exact-count modes,
//!   plus ensembling over recent epochs).
//! - [`model`]: a small MLP classifier with hand-derived gradients, robust
//!   losses (symmetric cross-entropy), a proportion-matching loss, Adam, and
//!   mixup augmentation.
//! - [`pipeline`]: the two-stage training loop (proportion matching to warm up,
//!   then alternating pseudo-label refresh and supervised training) and its
//!   metrics.

pub mod data;
pub mod error;
pub mod model;
pub mod ot;
pub mod pipeline;
pub mod pseudo;

pub use error::{Error, Result};
