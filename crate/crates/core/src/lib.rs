//! Equilibrium selection in a linear-quadratic mean-field game whose
//! degenerate version has three equilibria.
//!
//! The crate computes the deterministic clocks of the game, the viscous
//! decoupling field via Cole–Hopf, simulates the common-noise mean and the
//! N-player system, evaluates equilibrium costs, and runs the checks that
//! tie them together.

pub mod coefficients;
pub mod cost_eval;
pub mod decoupling_field;
pub mod error;
pub mod fields;
pub mod harness;
pub mod mfg_sim;
pub mod nplayer_sim;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use coefficients::{CoefficientTable, ModelParams, TimeGrid};
pub use decoupling_field::ViscousField;
pub use error::{Error, Result};
pub use fields::{EntropyField, SmoothedTerminal, Terminal, TerminalCondition};
