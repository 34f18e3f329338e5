//! Lower-confidence-bound acquisition functions for the three surrogate
//! routes. All are utilities to be minimized.

use serde::{Deserialize, Serialize};

use crate::composite::{CompositeError, CompositeModel};
use crate::gp::{GpError, GpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcqKind {
    Lcb,
    LcbCf,
    LcbBois,
}

#[derive(Debug, Clone)]
pub struct AcquisitionSpec {
    pub kind: AcqKind,
    pub kappa: f64,
    /// Monte-Carlo sample count; only meaningful for `LcbCf`.
    pub mc_samples: usize,
    pub seed: u64,
}

impl AcquisitionSpec {
    pub fn new(kind: AcqKind, kappa: f64, mc_samples: usize, seed: u64) -> Result<Self, CompositeError> {
        if kappa < 0.0 || !kappa.is_finite() {
            return Err(CompositeError::InvalidNode("kappa must be nonnegative".into()));
        }
        if kind == AcqKind::LcbCf && mc_samples < 2 {
            return Err(CompositeError::SampleCount);
        }
        Ok(Self {
            kind,
            kappa,
            mc_samples,
            seed,
        })
    }
}

/// LCB on a direct surrogate of f: m(x) − κ·σ(x).
pub fn eval_lcb(model: &GpModel, x: &[f64], kappa: f64) -> Result<f64, GpError> {
    let (mean, var) = model.posterior(x)?;
    Ok(mean - kappa * var.sqrt())
}

/// LCB for composite functions via Monte-Carlo moments. The seed is fixed
/// per iteration by the caller so the surface is deterministic during one
/// AF optimization.
pub fn eval_lcb_cf(
    model: &CompositeModel,
    x: &[f64],
    kappa: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, CompositeError> {
    let est = model.mc_moments(x, samples, seed)?;
    Ok(est.mean - kappa * est.stdev)
}

/// LCB from the adaptive-linearization moments; exactly one intermediate
/// prediction pass and one Jacobian pass per call.
pub fn eval_lcb_bois(model: &CompositeModel, x: &[f64], kappa: f64) -> Result<f64, CompositeError> {
    let est = model.bois_moments(x)?;
    Ok(est.mean - kappa * est.stdev)
}
