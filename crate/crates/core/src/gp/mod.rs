//! Single-output Gaussian-process regression with anisotropic Matérn
//! kernels, exact posterior prediction, and marginal-likelihood
//! hyperparameter fitting.
//!
//! A [`GpModel`] built with [`GpModel::with_config`] is the bare
//! mathematical object (zero prior mean, raw coordinates). Models built
//! through [`GpModel::fit`] additionally normalize inputs to the unit box
//! and standardize outputs internally; predictions are mapped back to raw
//! units on exit.

mod fit;
mod kernel;

pub use fit::{fit_hyperparameters, FitOptions, SearchSpace};
pub use kernel::{kernel_eval, KernelConfig, MaternNu};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Jitter added to the Gram diagonal before factorization. Numerical PSD
/// violations are routine at near-duplicate points.
pub const GRAM_JITTER: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty or inconsistent: {0}")]
    InvalidDataset(String),
    #[error("Gram matrix factorization failed (indefinite even after jitter {jitter:e})")]
    Factorization { jitter: f64 },
    #[error("hyperparameter fit failed: {0}")]
    FitFailed(String),
}

/// The sample archive consumed by GP training: one input row per
/// observation plus the matching scalar outputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self, GpError> {
        if inputs.is_empty() {
            return Err(GpError::InvalidDataset("no rows".into()));
        }
        if inputs.len() != outputs.len() {
            return Err(GpError::InvalidDataset(format!(
                "{} input rows vs {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(GpError::InvalidDataset("zero-dimensional inputs".into()));
        }
        for row in &inputs {
            if row.len() != dim {
                return Err(GpError::InvalidDataset("ragged input rows".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(GpError::NonFiniteInput);
            }
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFiniteInput);
        }
        let l = inputs.len();
        let m = DMatrix::from_fn(l, dim, |i, j| inputs[i][j]);
        Ok(Self {
            inputs: m,
            outputs: DVector::from_vec(outputs),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input_row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }

    pub fn output(&self, i: usize) -> f64 {
        self.outputs[i]
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }
}

/// How one input dimension is mapped to model coordinates.
#[derive(Debug, Clone)]
pub enum DimScaling {
    /// Affine map of [lo, hi] onto [0, 1]; used for design-box dimensions.
    Box(f64, f64),
    /// Affine map of the training-data range onto [0, 1]; used for nested
    /// intermediate inputs whose declared bounds may be infinite.
    DataRange,
    /// No transformation.
    Identity,
}

#[derive(Debug, Clone)]
struct Transforms {
    x_shift: Vec<f64>,
    x_scale: Vec<f64>,
    y_shift: f64,
    y_scale: f64,
}

impl Transforms {
    fn identity(dim: usize) -> Self {
        Self {
            x_shift: vec![0.0; dim],
            x_scale: vec![1.0; dim],
            y_shift: 0.0,
            y_scale: 1.0,
        }
    }
}

/// A trained single-output GP: kernel hyperparameters, the lower-triangular
/// Cholesky factor of K + σ_e·I (plus jitter), and the precomputed weight
/// vector (K + σ_e·I)⁻¹ f.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: Dataset,
    config: KernelConfig,
    transforms: Transforms,
    scaled_inputs: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    weights: DVector<f64>,
    jitter_used: f64,
    lml: f64,
}

fn build_gram(cfg: &KernelConfig, rows: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let l = rows.nrows();
    let mut k = DMatrix::zeros(l, l);
    for i in 0..l {
        let ri: Vec<f64> = rows.row(i).iter().copied().collect();
        for j in 0..=i {
            let rj: Vec<f64> = rows.row(j).iter().copied().collect();
            let v = kernel::kernel_value(cfg, &ri, &rj);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += cfg.noise + jitter;
    }
    k
}

/// Cholesky with bounded jitter escalation. Returns (L, jitter used).
fn factorize(
    cfg: &KernelConfig,
    rows: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64), GpError> {
    let mut jitter = GRAM_JITTER;
    for _ in 0..3 {
        let k = build_gram(cfg, rows, jitter);
        if let Some(chol) = nalgebra::Cholesky::new(k) {
            return Ok((chol.unpack(), jitter));
        }
        jitter *= 100.0;
    }
    Err(GpError::Factorization { jitter })
}

fn lml_from_factor(chol_l: &DMatrix<f64>, weights: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let l = y.len() as f64;
    let data_fit = -0.5 * y.dot(weights);
    let log_det: f64 = (0..chol_l.nrows()).map(|i| chol_l[(i, i)].ln()).sum();
    data_fit - log_det - 0.5 * l * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood of `data` under `cfg`:
/// −½ fᵀ(K+σI)⁻¹f − ½ log|K+σI| − (ℓ/2)·log 2π.
pub fn log_marginal_likelihood(data: &Dataset, cfg: &KernelConfig) -> Result<f64, GpError> {
    if data.dim() != cfg.dim() {
        return Err(GpError::DimensionMismatch {
            expected: cfg.dim(),
            got: data.dim(),
        });
    }
    let (chol_l, _) = factorize(cfg, &data.inputs)?;
    let weights = solve_with_factor(&chol_l, data.outputs());
    Ok(lml_from_factor(&chol_l, &weights, data.outputs()))
}

fn solve_with_factor(chol_l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = b.clone();
    chol_l.solve_lower_triangular_mut(&mut v);
    chol_l.tr_solve_lower_triangular_mut(&mut v);
    v
}

impl GpModel {
    /// Builds the model directly from raw data and a raw-space kernel
    /// configuration. Zero prior mean, no normalization.
    pub fn with_config(dataset: Dataset, config: KernelConfig) -> Result<Self, GpError> {
        if dataset.dim() != config.dim() {
            return Err(GpError::DimensionMismatch {
                expected: config.dim(),
                got: dataset.dim(),
            });
        }
        let transforms = Transforms::identity(dataset.dim());
        Self::assemble(dataset, config, transforms)
    }

    /// Normalizes inputs per `scaling`, standardizes outputs, fits kernel
    /// hyperparameters by multi-start LML maximization, and assembles the
    /// trained model.
    pub fn fit(
        dataset: Dataset,
        scaling: &[DimScaling],
        opts: &FitOptions,
    ) -> Result<Self, GpError> {
        if scaling.len() != dataset.dim() {
            return Err(GpError::DimensionMismatch {
                expected: dataset.dim(),
                got: scaling.len(),
            });
        }
        if dataset.len() < 2 {
            return Err(GpError::InvalidDataset(
                "hyperparameter fitting needs at least 2 rows".into(),
            ));
        }
        let transforms = derive_transforms(&dataset, scaling);
        let scaled = apply_transforms(&dataset, &transforms);
        let config = fit::fit_scaled(&scaled, opts)?;
        Self::assemble_scaled(dataset, config, transforms, scaled)
    }

    fn assemble(
        dataset: Dataset,
        config: KernelConfig,
        transforms: Transforms,
    ) -> Result<Self, GpError> {
        let scaled = apply_transforms(&dataset, &transforms);
        Self::assemble_scaled(dataset, config, transforms, scaled)
    }

    fn assemble_scaled(
        dataset: Dataset,
        config: KernelConfig,
        transforms: Transforms,
        scaled: Dataset,
    ) -> Result<Self, GpError> {
        let (chol_l, jitter_used) = factorize(&config, &scaled.inputs)?;
        let weights = solve_with_factor(&chol_l, scaled.outputs());
        let lml = lml_from_factor(&chol_l, &weights, scaled.outputs());
        Ok(Self {
            dataset,
            config,
            transforms,
            scaled_inputs: scaled.inputs,
            chol_l,
            weights,
            jitter_used,
            lml,
        })
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Kernel configuration in model (normalized) coordinates.
    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Log marginal likelihood of the (normalized) training data.
    pub fn lml(&self) -> f64 {
        self.lml
    }

    fn scale_query(&self, query: &[f64]) -> Vec<f64> {
        (0..query.len())
            .map(|j| (query[j] - self.transforms.x_shift[j]) / self.transforms.x_scale[j])
            .collect()
    }

    /// Posterior mean and variance at `query`, in raw units. The variance is
    /// the latent-function variance (no observation noise), clamped at zero.
    pub fn posterior(&self, query: &[f64]) -> Result<(f64, f64), GpError> {
        if query.len() != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFiniteInput);
        }
        let q = self.scale_query(query);
        let l = self.len();
        let mut k_star = DVector::zeros(l);
        for i in 0..l {
            let ri: Vec<f64> = self.scaled_inputs.row(i).iter().copied().collect();
            k_star[i] = kernel::kernel_value(&self.config, &q, &ri);
        }
        let mean_std = k_star.dot(&self.weights);
        let mut v = k_star;
        self.chol_l.solve_lower_triangular_mut(&mut v);
        let var_std = (self.config.output_scale - v.dot(&v)).max(0.0);
        let mean = mean_std * self.transforms.y_scale + self.transforms.y_shift;
        let var = var_std * self.transforms.y_scale * self.transforms.y_scale;
        Ok((mean, var))
    }
}

fn derive_transforms(data: &Dataset, scaling: &[DimScaling]) -> Transforms {
    let dim = data.dim();
    let mut x_shift = vec![0.0; dim];
    let mut x_scale = vec![1.0; dim];
    for j in 0..dim {
        match &scaling[j] {
            DimScaling::Box(lo, hi) => {
                x_shift[j] = *lo;
                x_scale[j] = (hi - lo).max(1e-12);
            }
            DimScaling::DataRange => {
                let col = data.inputs.column(j);
                let lo = col.min();
                let hi = col.max();
                x_shift[j] = lo;
                x_scale[j] = (hi - lo).max(1e-12);
            }
            DimScaling::Identity => {}
        }
    }
    let l = data.len() as f64;
    let mean = data.outputs.sum() / l;
    let var = data.outputs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l;
    Transforms {
        x_shift,
        x_scale,
        y_shift: mean,
        y_scale: var.sqrt().max(1e-12),
    }
}

fn apply_transforms(data: &Dataset, t: &Transforms) -> Dataset {
    let l = data.len();
    let d = data.dim();
    let inputs = DMatrix::from_fn(l, d, |i, j| (data.inputs[(i, j)] - t.x_shift[j]) / t.x_scale[j]);
    let outputs = data.outputs.map(|v| (v - t.y_shift) / t.y_scale);
    Dataset { inputs, outputs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cfg(d: usize) -> KernelConfig {
        KernelConfig::new(MaternNu::FiveHalves, vec![1.0; d], 1.0, 0.0).unwrap()
    }

    #[test]
    fn lml_scalar_cases() {
        // ℓ=1, f=[0], k(x,x)=1, σ=0 → −½ log 2π (jitter perturbs at 1e-10).
        let d = Dataset::new(vec![vec![0.0]], vec![0.0]).unwrap();
        let v = log_marginal_likelihood(&d, &unit_cfg(1)).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-8);
        assert_relative_eq!(v, -0.91894, epsilon = 1e-5);

        // ℓ=1, f=[2] → −2 − ½ log 2π.
        let d = Dataset::new(vec![vec![0.0]], vec![2.0]).unwrap();
        let v = log_marginal_likelihood(&d, &unit_cfg(1)).unwrap();
        assert_relative_eq!(v, -2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-7);
    }

    #[test]
    fn lml_two_points_identity_gram() {
        // Two points far apart → K ≈ I; f=[1,1] → −1 − log 2π.
        let d = Dataset::new(vec![vec![0.0], vec![1e8]], vec![1.0, 1.0]).unwrap();
        let v = log_marginal_likelihood(&d, &unit_cfg(1)).unwrap();
        assert_relative_eq!(v, -1.0 - (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-7);
    }

    #[test]
    fn posterior_hand_case() {
        // ℓ=1, k(x₁,x₁)=1, k(q,x₁)=0.5, f=[2], σ=0 → mean 1.0, variance 0.75.
        // Pick the query distance so the Matérn-5/2 correlation is 0.5.
        let cfg = unit_cfg(1);
        let mut lo = 0.0;
        let mut hi = 10.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kernel_eval(&cfg, &[0.0], &[mid]).unwrap() > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        let data = Dataset::new(vec![vec![0.0]], vec![2.0]).unwrap();
        let m = GpModel::with_config(data, cfg).unwrap();
        let (mean, var) = m.posterior(&[q]).unwrap();
        assert_relative_eq!(mean, 1.0, epsilon = 1e-6);
        assert_relative_eq!(var, 0.75, epsilon = 1e-6);
    }

    #[test]
    fn noise_free_interpolation_and_prior_reversion() {
        let data = Dataset::new(
            vec![vec![0.1, 0.2], vec![0.8, 0.4], vec![0.5, 0.9]],
            vec![1.0, -2.0, 0.5],
        )
        .unwrap();
        let m = GpModel::with_config(data.clone(), unit_cfg(2)).unwrap();
        for i in 0..data.len() {
            let (mean, var) = m.posterior(&data.input_row(i)).unwrap();
            assert_relative_eq!(mean, data.output(i), epsilon = 1e-8);
            assert!(var <= 1e-8, "variance at training point was {var}");
        }
        // Scaled distance > 20 → mean → 0, variance → output_scale.
        let (mean, var) = m.posterior(&[40.0, 40.0]).unwrap();
        assert!(mean.abs() < 1e-6);
        assert_relative_eq!(var, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn posterior_matches_dense_inverse_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let l = rng.gen_range(2..=15);
            let d = rng.gen_range(1..=5);
            let rows: Vec<Vec<f64>> =
                (0..l).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let ys: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let cfg = KernelConfig::new(
                MaternNu::FiveHalves,
                (0..d).map(|_| rng.gen_range(0.3..2.0)).collect(),
                rng.gen_range(0.5..2.0),
                1e-6,
            )
            .unwrap();
            let data = Dataset::new(rows.clone(), ys.clone()).unwrap();
            let m = GpModel::with_config(data, cfg.clone()).unwrap();

            // Dense brute-force solve with an explicit inverse.
            let mut k = DMatrix::zeros(l, l);
            for i in 0..l {
                for j in 0..l {
                    k[(i, j)] = kernel_eval(&cfg, &rows[i], &rows[j]).unwrap();
                }
                k[(i, i)] += cfg.noise + GRAM_JITTER;
            }
            let kinv = k.try_inverse().unwrap();
            let y = DVector::from_vec(ys);
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let kq = DVector::from_fn(l, |i, _| kernel_eval(&cfg, &q, &rows[i]).unwrap());
            let mean_ref = kq.dot(&(&kinv * &y));
            let var_ref = cfg.output_scale - kq.dot(&(&kinv * &kq));

            let (mean, var) = m.posterior(&q).unwrap();
            assert_relative_eq!(mean, mean_ref, epsilon = 1e-8);
            assert_relative_eq!(var, var_ref.max(0.0), epsilon = 1e-8);
        }
    }

    #[test]
    fn noise_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> =
            (0..8).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let ys: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(rows, ys).unwrap();
        let queries: Vec<Vec<f64>> =
            (0..10).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let mut prev: Option<Vec<f64>> = None;
        for noise in [0.0, 1e-4, 1e-2, 1e-1] {
            let cfg = KernelConfig::new(MaternNu::ThreeHalves, vec![0.8, 0.8], 1.0, noise).unwrap();
            let m = GpModel::with_config(data.clone(), cfg).unwrap();
            let vars: Vec<f64> = queries.iter().map(|q| m.posterior(q).unwrap().1).collect();
            if let Some(p) = &prev {
                for (lo, hi) in p.iter().zip(&vars) {
                    assert!(hi + 1e-12 >= *lo, "variance decreased when noise grew");
                }
            }
            prev = Some(vars);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kernel_symmetry(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0,
            t1 in 0.1f64..3.0, t2 in 0.1f64..3.0,
            scale in 0.2f64..4.0,
        ) {
            for nu in [MaternNu::ThreeHalves, MaternNu::FiveHalves] {
                let cfg = KernelConfig::new(nu, vec![t1, t2], scale, 0.0).unwrap();
                let k1 = kernel_eval(&cfg, &[ax, ay], &[bx, by]).unwrap();
                let k2 = kernel_eval(&cfg, &[bx, by], &[ax, ay]).unwrap();
                prop_assert!((k1 - k2).abs() <= 1e-14 * k1.abs().max(1.0));
                prop_assert!(k1 > 0.0 && k1 <= scale + 1e-12);
            }
        }

        #[test]
        fn gram_psd_with_jitter(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..=20usize);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let cfg = KernelConfig::new(MaternNu::FiveHalves, vec![0.5, 1.0, 2.0], 1.0, 0.0).unwrap();
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = kernel_eval(&cfg, &rows[i], &rows[j]).unwrap();
                }
                k[(i, i)] += 1e-10;
            }
            prop_assert!(nalgebra::Cholesky::new(k).is_some());
        }
    }
}
