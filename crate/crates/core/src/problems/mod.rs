//! Benchmark problems: the two process simulators, synthetic toys, and the
//! registry the CLI resolves problem ids against.

pub mod chemproc;
pub mod pbr;
pub mod registry;
pub mod toys;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("recycle tear failed to converge: residual {residual:e} after {passes} passes")]
    TearDiverged { residual: f64, passes: usize },
    #[error("no sign change when bracketing {what} over [{lo:e}, {hi:e}]")]
    BracketFailure { what: &'static str, lo: f64, hi: f64 },
    #[error("non-physical state: {0}")]
    NonPhysical(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
