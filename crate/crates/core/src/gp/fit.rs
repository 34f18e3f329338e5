//! Marginal-likelihood hyperparameter fitting: multi-start projected
//! gradient ascent in log-space of (length scales, output scale, noise),
//! with the analytic LML gradient.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{self, KernelConfig, MaternNu};
use super::{Dataset, GpError, GRAM_JITTER};
use crate::optimize::{minimize_box_from_starts, BoxDomain, DescentOptions};
use crate::util::latin_hypercube;

/// Box over (length_scales, output_scale, noise), shared across dimensions
/// for the length scales. All bounds are in model (normalized) coordinates.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub length_scale: (f64, f64),
    pub output_scale: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            length_scale: (0.03, 30.0),
            output_scale: (0.05, 50.0),
            noise: (1e-10, 1e-2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub nu: MaternNu,
    /// Number of Latin-hypercube restarts in addition to the search-space
    /// center and the optional warm start.
    pub restarts: usize,
    pub seed: u64,
    pub warm_start: Option<KernelConfig>,
    pub search: SearchSpace,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            nu: MaternNu::FiveHalves,
            restarts: 2,
            seed: 0,
            warm_start: None,
            search: SearchSpace::default(),
            max_iters: 40,
            grad_tol: 1e-4,
        }
    }
}

fn config_from_log(nu: MaternNu, z: &[f64], d: usize) -> KernelConfig {
    KernelConfig {
        nu,
        length_scales: z[..d].iter().map(|v| v.exp()).collect(),
        output_scale: z[d].exp(),
        noise: z[d + 1].exp(),
    }
}

/// LML and its gradient with respect to the log-hyperparameters
/// [log θ_1.., log s, log σ_n]. Returns None when the factorization fails.
pub(crate) fn lml_and_grad(data: &Dataset, cfg: &KernelConfig) -> Option<(f64, Vec<f64>)> {
    let l = data.len();
    let d = data.dim();
    let rows: Vec<Vec<f64>> = (0..l).map(|i| data.input_row(i)).collect();
    let mut k = DMatrix::zeros(l, l);
    let mut dist = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..=i {
            let r = kernel::scaled_distance(&cfg.length_scales, &rows[i], &rows[j]);
            let v = cfg.output_scale * kernel::matern_corr(cfg.nu, r);
            k[(i, j)] = v;
            k[(j, i)] = v;
            dist[(i, j)] = r;
            dist[(j, i)] = r;
        }
        k[(i, i)] += cfg.noise + GRAM_JITTER;
    }
    let chol = nalgebra::Cholesky::new(k.clone())?;
    let alpha = chol.solve(data.outputs());
    let kinv = chol.inverse();
    let log_det: f64 = (0..l).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let lml = -0.5 * data.outputs().dot(&alpha)
        - log_det
        - 0.5 * l as f64 * (2.0 * std::f64::consts::PI).ln();

    // dL/dp = ½ αᵀ(∂K/∂p)α − ½ tr(K⁻¹ ∂K/∂p), accumulated pairwise.
    let mut grad = vec![0.0; d + 2];
    for i in 0..l {
        for j in 0..=i {
            let w = if i == j { 1.0 } else { 2.0 };
            let quad = alpha[i] * alpha[j];
            let trace = kinv[(i, j)];
            let r = dist[(i, j)];
            // Length scales.
            for (t, g) in grad.iter_mut().enumerate().take(d) {
                let dk = kernel::kernel_grad_log_theta(cfg, &rows[i], &rows[j], t, r);
                *g += 0.5 * w * (quad - trace) * dk;
            }
            // Output scale: ∂K/∂log s is the signal part of K.
            let signal = cfg.output_scale * kernel::matern_corr(cfg.nu, r);
            grad[d] += 0.5 * w * (quad - trace) * signal;
        }
        // Noise: ∂(K+σI)/∂log σ = σ·I.
        grad[d + 1] += 0.5 * cfg.noise * (alpha[i] * alpha[i] - kinv[(i, i)]);
    }
    Some((lml, grad))
}

pub(super) fn fit_scaled(data: &Dataset, opts: &FitOptions) -> Result<KernelConfig, GpError> {
    fit_hyperparameters_with(data, opts)
}

/// Multi-start LML maximization over `search`. The returned configuration
/// attains an LML at least as high as every start's initial point;
/// deterministic for a fixed seed.
pub fn fit_hyperparameters(
    data: &Dataset,
    search: &SearchSpace,
    nu: MaternNu,
    restarts: usize,
    seed: u64,
) -> Result<KernelConfig, GpError> {
    fit_hyperparameters_with(
        data,
        &FitOptions {
            nu,
            restarts,
            seed,
            search: search.clone(),
            ..FitOptions::default()
        },
    )
}

fn fit_hyperparameters_with(data: &Dataset, opts: &FitOptions) -> Result<KernelConfig, GpError> {
    if data.len() < 2 {
        return Err(GpError::InvalidDataset(
            "hyperparameter fitting needs at least 2 rows".into(),
        ));
    }
    let d = data.dim();
    let s = &opts.search;
    for (lo, hi) in [s.length_scale, s.output_scale, s.noise] {
        if !(lo > 0.0 && hi > lo) {
            return Err(GpError::InvalidConfig(
                "search space bounds must be positive with lo < hi".into(),
            ));
        }
    }
    let mut lower = vec![s.length_scale.0.ln(); d];
    let mut upper = vec![s.length_scale.1.ln(); d];
    lower.push(s.output_scale.0.ln());
    upper.push(s.output_scale.1.ln());
    lower.push(s.noise.0.ln());
    upper.push(s.noise.1.ln());
    let domain = BoxDomain::new(lower.clone(), upper.clone())
        .map_err(|e| GpError::InvalidConfig(e.to_string()))?;

    // Starts in unit coordinates: warm start, box center, LHS restarts.
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = &opts.warm_start {
        if w.dim() == d {
            let mut z: Vec<f64> = w.length_scales.iter().map(|t| t.ln()).collect();
            z.push(w.output_scale.ln());
            z.push(w.noise.max(s.noise.0).ln());
            let unit: Vec<f64> = z
                .iter()
                .enumerate()
                .map(|(i, v)| ((v - lower[i]) / (upper[i] - lower[i])).clamp(0.0, 1.0))
                .collect();
            starts.push(unit);
        }
    }
    starts.push(vec![0.5; d + 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    starts.extend(latin_hypercube(&mut rng, opts.restarts.max(1), d + 2));

    let objective = |z: &[f64]| -> f64 {
        let cfg = config_from_log(MaternNu::FiveHalves, z, d);
        let cfg = KernelConfig { nu: opts.nu, ..cfg };
        match lml_and_grad(data, &cfg) {
            Some((lml, _)) if lml.is_finite() => -lml,
            _ => f64::INFINITY,
        }
    };
    let widths: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| u - l).collect();
    let gradient = move |z_raw: &[f64]| -> Vec<f64> {
        let cfg = config_from_log(opts.nu, z_raw, d);
        match lml_and_grad(data, &cfg) {
            // Chain rule onto unit coordinates: dz_unit = width · dz_log.
            Some((_, g)) => g.iter().zip(&widths).map(|(gi, w)| -gi * w).collect(),
            None => vec![0.0; z_raw.len()],
        }
    };
    let report = minimize_box_from_starts(
        objective,
        Some(gradient),
        &domain,
        &starts,
        &DescentOptions {
            max_iters: opts.max_iters,
            grad_tol: opts.grad_tol,
            fd_step: 1e-6,
        },
    )
    .map_err(|e| GpError::FitFailed(format!("no restart produced a finite LML: {e}")))?;
    Ok(config_from_log(opts.nu, &report.argmin, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{log_marginal_likelihood, GpModel};
    use nalgebra::DVector;
    use rand::Rng;

    fn sample_gp_dataset(theta: f64, n: usize, seed: u64) -> Dataset {
        // Draw outputs exactly from a Matérn-5/2 GP with unit amplitude.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
        let cfg = KernelConfig::new(MaternNu::FiveHalves, vec![theta], 1.0, 1e-8).unwrap();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel::kernel_value(&cfg, &rows[i], &rows[j]);
            }
            k[(i, i)] += 1e-8;
        }
        let chol = nalgebra::Cholesky::new(k).unwrap();
        let z = DVector::from_fn(n, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let y = chol.l() * z;
        Dataset::new(rows, y.iter().copied().collect()).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = sample_gp_dataset(0.7, 12, 4);
        let cfg = KernelConfig::new(MaternNu::FiveHalves, vec![0.5], 1.3, 1e-4).unwrap();
        let (_, grad) = lml_and_grad(&data, &cfg).unwrap();
        let h = 1e-6;
        // log θ, log s, log σ.
        for p in 0..3 {
            let perturb = |eps: f64| {
                let mut c = cfg.clone();
                match p {
                    0 => c.length_scales[0] *= eps.exp(),
                    1 => c.output_scale *= eps.exp(),
                    _ => c.noise *= eps.exp(),
                }
                log_marginal_likelihood(&data, &c).unwrap()
            };
            let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
            let denom = fd.abs().max(1e-6);
            assert!(
                (grad[p] - fd).abs() / denom < 1e-4,
                "param {p}: analytic {} vs fd {fd}",
                grad[p]
            );
        }
    }

    #[test]
    fn fit_never_returns_worse_than_truth_given_as_warm_start() {
        let data = sample_gp_dataset(1.0, 20, 9);
        let truth = KernelConfig::new(MaternNu::FiveHalves, vec![1.0], 1.0, 1e-8).unwrap();
        let lml_truth = log_marginal_likelihood(&data, &truth).unwrap();
        let fitted = fit_hyperparameters_with(
            &data,
            &FitOptions {
                warm_start: Some(truth),
                ..FitOptions::default()
            },
        )
        .unwrap();
        let lml_fit = log_marginal_likelihood(&data, &fitted).unwrap();
        assert!(
            lml_fit >= lml_truth - 1e-9,
            "fitted {lml_fit} < truth {lml_truth}"
        );
    }

    #[test]
    fn constant_outputs_fit_without_factorization_failure() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0]).collect();
        let data = Dataset::new(rows, vec![3.0; 10]).unwrap();
        let search = SearchSpace {
            noise: (1e-6, 1e-2),
            ..SearchSpace::default()
        };
        let cfg = fit_hyperparameters(&data, &search, MaternNu::FiveHalves, 2, 1).unwrap();
        assert!(cfg.noise >= 1e-6);
        assert!(log_marginal_likelihood(&data, &cfg).unwrap().is_finite());
    }

    #[test]
    fn small_dataset_fit_stays_inside_search_space() {
        let data = Dataset::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![0.0, 1.0, 0.0]).unwrap();
        let search = SearchSpace::default();
        let cfg = fit_hyperparameters(&data, &search, MaternNu::FiveHalves, 3, 7).unwrap();
        assert!(cfg.length_scales[0] >= search.length_scale.0 - 1e-12);
        assert!(cfg.length_scales[0] <= search.length_scale.1 + 1e-12);
        assert!(log_marginal_likelihood(&data, &cfg).unwrap().is_finite());
    }

    #[test]
    fn fitted_model_improves_over_every_initial_point() {
        // Derivative-free contract: fitted LML ≥ initial LML on test datasets.
        for seed in [1u64, 2, 3] {
            let data = sample_gp_dataset(0.4, 15, seed);
            let opts = FitOptions {
                restarts: 3,
                seed,
                ..FitOptions::default()
            };
            let center = KernelConfig::new(
                MaternNu::FiveHalves,
                vec![(0.03f64 * 30.0).sqrt()],
                (0.05f64 * 50.0).sqrt(),
                (1e-10f64 * 1e-2).sqrt(),
            )
            .unwrap();
            let lml_center = log_marginal_likelihood(&data, &center).unwrap();
            let cfg = fit_hyperparameters_with(&data, &opts).unwrap();
            let lml_fit = log_marginal_likelihood(&data, &cfg).unwrap();
            assert!(lml_fit >= lml_center - 1e-9);
        }
    }

    #[test]
    fn fit_through_gp_model_normalizes_and_predicts_in_raw_units() {
        // Outputs with a large offset and scale; inputs over a declared box.
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 25.0]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| 5000.0 + 300.0 * (r[0] / 80.0).sin()).collect();
        let data = Dataset::new(rows.clone(), ys.clone()).unwrap();
        let model = GpModel::fit(
            data,
            &[crate::gp::DimScaling::Box(0.0, 300.0)],
            &FitOptions::default(),
        )
        .unwrap();
        for (r, y) in rows.iter().zip(&ys) {
            let (mean, _) = model.posterior(r).unwrap();
            assert!((mean - y).abs() < 2.0, "mean {mean} vs observed {y}");
        }
    }
}
