//! Grey-box Bayesian optimization over composite performance functions
//! f(x, y(x)), with four optimization loops (standard LCB, Monte-Carlo
//! composite, optimism-driven, and adaptive-linearization), two process
//! benchmarks, and the moment-parity harness used to validate the
//! closed-form moment estimates against Monte-Carlo ground truth.

pub mod acquisition;
pub mod composite;
pub mod engine;
pub mod gp;
pub mod optimize;
pub mod problems;
mod util;

pub use util::seed_mix;
