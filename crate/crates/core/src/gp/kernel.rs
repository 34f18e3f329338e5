//! Anisotropic Matérn kernels and their derivatives with respect to the
//! log length scales.

use serde::{Deserialize, Serialize};

use super::GpError;

/// Smoothness of the Matérn family. 3/2 yields once-differentiable sample
/// paths, 5/2 twice-differentiable ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternNu {
    ThreeHalves,
    FiveHalves,
}

/// Kernel hyperparameters: per-dimension length scales (the diagonal of Θ),
/// a multiplicative signal variance, and an additive noise variance on the
/// Gram diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    pub nu: MaternNu,
    pub length_scales: Vec<f64>,
    pub output_scale: f64,
    pub noise: f64,
}

impl KernelConfig {
    pub fn new(
        nu: MaternNu,
        length_scales: Vec<f64>,
        output_scale: f64,
        noise: f64,
    ) -> Result<Self, GpError> {
        if length_scales.is_empty() || length_scales.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(GpError::InvalidConfig(
                "length scales must be strictly positive and finite".into(),
            ));
        }
        if !(output_scale > 0.0) || !output_scale.is_finite() {
            return Err(GpError::InvalidConfig(
                "output scale must be strictly positive and finite".into(),
            ));
        }
        if noise < 0.0 || !noise.is_finite() {
            return Err(GpError::InvalidConfig(
                "noise must be nonnegative and finite".into(),
            ));
        }
        Ok(Self {
            nu,
            length_scales,
            output_scale,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }
}

/// Scaled distance d(x, x') = sqrt((x-x')ᵀ Θ⁻² (x-x')).
#[inline]
pub(crate) fn scaled_distance(length_scales: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..length_scales.len() {
        let d = (a[i] - b[i]) / length_scales[i];
        s += d * d;
    }
    s.sqrt()
}

/// Unit-amplitude Matérn correlation at scaled distance r.
#[inline]
pub(crate) fn matern_corr(nu: MaternNu, r: f64) -> f64 {
    match nu {
        MaternNu::ThreeHalves => {
            let s = 3f64.sqrt() * r;
            (1.0 + s) * (-s).exp()
        }
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * r;
            (1.0 + s + s * s / 3.0) * (-s).exp()
        }
    }
}

/// Kernel value for two points already in the kernel's coordinate system.
/// No validation; callers on the hot path guarantee matching dimensions.
#[inline]
pub(crate) fn kernel_value(cfg: &KernelConfig, a: &[f64], b: &[f64]) -> f64 {
    let r = scaled_distance(&cfg.length_scales, a, b);
    cfg.output_scale * matern_corr(cfg.nu, r)
}

/// Validated kernel evaluation per the Matérn closed forms.
pub fn kernel_eval(cfg: &KernelConfig, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
    if a.len() != cfg.dim() || b.len() != cfg.dim() {
        return Err(GpError::DimensionMismatch {
            expected: cfg.dim(),
            got: a.len().max(b.len()),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(GpError::NonFiniteInput);
    }
    Ok(kernel_value(cfg, a, b))
}

/// d k / d log θ_j at a pair of points. With Δ_j = a_j − b_j and r the scaled
/// distance, this is s · c(r) · Δ_j²/θ_j² where c(r) = 3·exp(−√3 r) for ν=3/2
/// and (5/3)(1+√5 r)·exp(−√5 r) for ν=5/2 (the r in the chain rule cancels).
#[inline]
pub(crate) fn kernel_grad_log_theta(
    cfg: &KernelConfig,
    a: &[f64],
    b: &[f64],
    j: usize,
    r: f64,
) -> f64 {
    let dj = (a[j] - b[j]) / cfg.length_scales[j];
    let c = match cfg.nu {
        MaternNu::ThreeHalves => 3.0 * (-(3f64.sqrt()) * r).exp(),
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * r;
            (5.0 / 3.0) * (1.0 + s) * (-s).exp()
        }
    };
    cfg.output_scale * c * dj * dj
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(nu: MaternNu, theta: &[f64]) -> KernelConfig {
        KernelConfig::new(nu, theta.to_vec(), 1.0, 0.0).unwrap()
    }

    #[test]
    fn kernel_at_zero_distance_is_output_scale() {
        let c = KernelConfig::new(MaternNu::ThreeHalves, vec![0.7, 2.0], 3.5, 0.0).unwrap();
        let x = [0.3, -1.2];
        assert_relative_eq!(kernel_eval(&c, &x, &x).unwrap(), 3.5, max_relative = 1e-15);
    }

    #[test]
    fn matern_three_halves_closed_form_at_unit_distance() {
        // k(r) = (1+√3 r)e^{−√3 r} at r = 1.
        let c = cfg(MaternNu::ThreeHalves, &[1.0]);
        let v = kernel_eval(&c, &[0.0], &[1.0]).unwrap();
        let expected = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert_relative_eq!(v, 0.48335, max_relative = 1e-4);
    }

    #[test]
    fn matern_five_halves_closed_form_at_unit_scaled_distance() {
        // θ = [2,2], x−x' = (2,0) → r = 1; k = (1+√5+5/3)e^{−√5}.
        let c = cfg(MaternNu::FiveHalves, &[2.0, 2.0]);
        let v = kernel_eval(&c, &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        let s5 = 5f64.sqrt();
        let expected = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert_relative_eq!(v, 0.52399, max_relative = 1e-4);
    }

    #[test]
    fn dimension_mismatch_and_nonfinite_are_rejected() {
        let c = cfg(MaternNu::FiveHalves, &[1.0, 1.0]);
        assert!(kernel_eval(&c, &[0.0], &[0.0, 1.0]).is_err());
        assert!(kernel_eval(&c, &[f64::NAN, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn grad_log_theta_matches_finite_differences() {
        for nu in [MaternNu::ThreeHalves, MaternNu::FiveHalves] {
            let theta = [0.8, 1.7, 0.4];
            let a = [0.1, 0.9, -0.3];
            let b = [0.7, 0.2, 0.5];
            for j in 0..3 {
                let c0 = cfg(nu, &theta);
                let r = scaled_distance(&c0.length_scales, &a, &b);
                let analytic = kernel_grad_log_theta(&c0, &a, &b, j, r);
                let h = 1e-6f64;
                let mut up = theta;
                up[j] *= (h).exp();
                let mut dn = theta;
                dn[j] *= (-h).exp();
                let fd = (kernel_value(&cfg(nu, &up), &a, &b)
                    - kernel_value(&cfg(nu, &dn), &a, &b))
                    / (2.0 * h);
                assert_relative_eq!(analytic, fd, max_relative = 1e-5, epsilon = 1e-10);
            }
        }
    }
}
