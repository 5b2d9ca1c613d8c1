//! Collision prediction between moving objects and whole-body interception
//! planning for a redundant articulated robot.
//!
//! The pipeline runs observe → track → predict → behave → plan:
//!
//! - [`tracking`] filters noisy position observations into Gaussian beliefs.
//! - [`prediction`] turns pairs of beliefs into cumulative collision
//!   probabilities over a horizon.
//! - [`behavior`] is the idle/intervention/caution/return state machine.
//! - [`planning`] searches per-link reachable volumes for a posture that
//!   blocks the predicted trajectory and returns a roadmap path to it.
//! - [`simulator`] closes the loop in a deterministic discrete-time world.
//! - [`validation`] holds brute-force oracles for all of the above.

pub mod behavior;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod planning;
pub mod prediction;
pub mod simulator;
pub mod tracking;
pub mod validation;

pub use error::{Error, Result};
