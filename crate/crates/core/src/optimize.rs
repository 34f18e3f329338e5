//! Box-constrained multi-start local minimization (projected gradient with
//! Armijo backtracking) and the nested solver for the optimism-driven
//! auxiliary problem.
//!
//! All descent runs internally in unit-box coordinates so that step sizes,
//! finite-difference steps, and the gradient tolerance are scale-free.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::composite::CompositeModel;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid box domain: lower must be strictly below upper componentwise")]
    BadDomain,
    #[error("objective was non-finite at every start")]
    NoFiniteStart,
    #[error("at least one start point is required")]
    NoStarts,
    #[error(transparent)]
    Composite(#[from] crate::composite::CompositeError),
}

/// A rectangular feasible set: lower < upper componentwise.
#[derive(Debug, Clone)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimizeError> {
        if lower.is_empty()
            || lower.len() != upper.len()
            || lower
                .iter()
                .zip(&upper)
                .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(OptimizeError::BadDomain);
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| l + t * (u - l))
            .collect()
    }
}

/// Outcome of a multi-start minimization.
#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub starts_used: usize,
    pub converged_starts: usize,
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct DescentOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub fd_step: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            fd_step: 1e-6,
        }
    }
}

fn project_unit(z: &mut [f64]) {
    for v in z.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// One projected-gradient descent from `z0` (unit coordinates).
/// Returns (argmin, value, evaluations, converged).
fn descend<F, G>(f: &F, grad: &G, z0: &[f64], opts: &DescentOptions) -> (Vec<f64>, f64, u64, bool)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], f64) -> Vec<f64>,
{
    let mut z = z0.to_vec();
    project_unit(&mut z);
    let mut fz = f(&z);
    let mut evals = 1u64;
    if !fz.is_finite() {
        return (z, f64::INFINITY, evals, false);
    }
    let mut step = 1.0f64;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let g = grad(&z, fz);
        // Stationarity: distance moved by a unit projected-gradient step.
        let mut pg_norm = 0.0f64;
        for i in 0..z.len() {
            let moved = z[i] - (z[i] - g[i]).clamp(0.0, 1.0);
            pg_norm = pg_norm.max(moved.abs());
        }
        if pg_norm <= opts.grad_tol {
            converged = true;
            break;
        }
        // Armijo backtracking on the projected step.
        let mut accepted = false;
        let mut t = step;
        for _ in 0..40 {
            let mut zt: Vec<f64> = (0..z.len()).map(|i| (z[i] - t * g[i]).clamp(0.0, 1.0)).collect();
            project_unit(&mut zt);
            let moved_sq: f64 = zt.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if moved_sq == 0.0 {
                break;
            }
            let ft = f(&zt);
            evals += 1;
            let decrease: f64 = g
                .iter()
                .zip(z.iter().zip(&zt))
                .map(|(gi, (zi, zti))| gi * (zi - zti))
                .sum();
            if ft.is_finite() && ft <= fz - 1e-4 * decrease.max(0.0) && ft < fz {
                z = zt;
                fz = ft;
                accepted = true;
                // Allow the step to grow again after a success.
                step = (t * 2.0).min(1.0);
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true; // stalled at numerical resolution
            break;
        }
    }
    (z, fz, evals, converged)
}

fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, z: &[f64], h: f64, evals: &mut u64) -> Vec<f64> {
    let mut g = vec![0.0; z.len()];
    for i in 0..z.len() {
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[i] = (z[i] + h).min(1.0);
        zm[i] = (z[i] - h).max(0.0);
        let denom = zp[i] - zm[i];
        if denom == 0.0 {
            continue;
        }
        let fp = f(&zp);
        let fm = f(&zm);
        *evals += 2;
        if fp.is_finite() && fm.is_finite() {
            g[i] = (fp - fm) / denom;
        }
    }
    g
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Multi-start projected-gradient minimization from explicit unit-box
/// starts, with an optional analytic gradient (unit coordinates).
pub fn minimize_box_from_starts<F, G>(
    objective: F,
    analytic_grad: Option<G>,
    domain: &BoxDomain,
    unit_starts: &[Vec<f64>],
    opts: &DescentOptions,
) -> Result<OptimizeReport, OptimizeError>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if unit_starts.is_empty() {
        return Err(OptimizeError::NoStarts);
    }
    let evals = std::cell::Cell::new(0u64);
    let f_unit = |z: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        objective(&domain.from_unit(z))
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged_starts = 0usize;
    for start in unit_starts {
        let (z, v, _, conv) = match &analytic_grad {
            Some(g) => {
                let grad = |z: &[f64], _fz: f64| g(&domain.from_unit(z));
                descend(&f_unit, &grad, start, opts)
            }
            None => {
                let grad = |z: &[f64], _fz: f64| {
                    let mut e = 0u64;
                    let g = fd_gradient(&f_unit, z, opts.fd_step, &mut e);
                    g
                };
                descend(&f_unit, &grad, start, opts)
            }
        };
        if conv && v.is_finite() {
            converged_starts += 1;
        }
        if v.is_finite() {
            let x = domain.from_unit(&z);
            match &best {
                None => best = Some((x, v)),
                Some((bx, bv)) => {
                    if v < *bv || (v == *bv && lex_less(&x, bx)) {
                        best = Some((x, v));
                    }
                }
            }
        }
    }
    let (mut argmin, value) = best.ok_or(OptimizeError::NoFiniteStart)?;
    domain.clamp(&mut argmin);
    Ok(OptimizeReport {
        argmin,
        value,
        starts_used: unit_starts.len(),
        converged_starts,
        evaluations: evals.get(),
    })
}

/// Box-constrained multi-start local minimization with finite-difference
/// gradients. Starts are drawn uniformly from the box; the best terminal
/// point wins, ties resolved by lowest value then lexicographic argmin.
pub fn minimize_box<F>(
    objective: F,
    domain: &BoxDomain,
    starts: usize,
    seed: u64,
) -> Result<OptimizeReport, OptimizeError>
where
    F: Fn(&[f64]) -> f64,
{
    if starts == 0 {
        return Err(OptimizeError::NoStarts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_starts: Vec<Vec<f64>> = (0..starts)
        .map(|_| (0..domain.dim()).map(|_| rng.gen::<f64>()).collect())
        .collect();
    minimize_box_from_starts(
        objective,
        None::<fn(&[f64]) -> Vec<f64>>,
        domain,
        &unit_starts,
        &DescentOptions::default(),
    )
}

/// Solution of the optimism-driven auxiliary problem
/// min_{x,y} f(x,y) s.t. l_y(x) ≤ y ≤ u_y(x), x ∈ X.
#[derive(Debug, Clone)]
pub struct AuxiliarySolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: f64,
    /// Number of probed x where some confidence interval collapsed
    /// (l_y > u_y) and was replaced by the clipped GP mean.
    pub collapsed_intervals: u64,
}

/// Confidence-bound box for the intermediates at a fixed x:
/// l = max(m − κσ, l̂), u = min(m + κσ, û) per node. A crossed interval
/// collapses to the clipped mean.
fn intermediate_box(
    model: &CompositeModel,
    x: &[f64],
    kappa: f64,
    collapsed: &std::sync::atomic::AtomicU64,
) -> Result<(Vec<f64>, Vec<f64>), crate::composite::CompositeError> {
    let pred = model.predict_intermediates(x)?;
    let problem = model.problem();
    let dy = problem.num_nodes();
    let mut lo = vec![0.0; dy];
    let mut hi = vec![0.0; dy];
    for i in 0..dy {
        let node = problem.node(i);
        let sigma = pred.variances[i].sqrt();
        let l = (pred.means[i] - kappa * sigma).max(node.lower);
        let u = (pred.means[i] + kappa * sigma).min(node.upper);
        if l > u {
            collapsed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let m = pred.means[i].clamp(node.lower, node.upper);
            lo[i] = m;
            hi[i] = m;
        } else {
            lo[i] = l;
            hi[i] = u;
        }
    }
    Ok((lo, hi))
}

/// Nested solve of the auxiliary problem: outer multi-start over x in the
/// design box; for each fixed x the feasible y-set is a box, minimized by a
/// single projected-gradient descent from the interval midpoint.
pub fn solve_opbo_auxiliary(
    model: &CompositeModel,
    kappa: f64,
    starts: usize,
    seed: u64,
) -> Result<AuxiliarySolution, OptimizeError> {
    let problem = model.problem();
    let design = problem.design_box();
    let collapsed = std::sync::atomic::AtomicU64::new(0);

    let inner = |x: &[f64]| -> Result<(Vec<f64>, f64), crate::composite::CompositeError> {
        let (lo, hi) = intermediate_box(model, x, kappa, &collapsed)?;
        let gx = problem.eval_g(x);
        // Degenerate (point) intervals need no inner optimization.
        if lo.iter().zip(&hi).all(|(l, u)| l == u) {
            let v = gx + model.eval_h_counted(x, &lo);
            return Ok((lo, v));
        }
        // Widen exact-zero widths so BoxDomain stays valid.
        let mut lo2 = lo.clone();
        let mut hi2 = hi.clone();
        for i in 0..lo2.len() {
            if !(lo2[i] < hi2[i]) {
                let pad = 1e-12 * (1.0 + lo2[i].abs());
                lo2[i] -= pad;
                hi2[i] += pad;
            }
        }
        let ybox = BoxDomain::new(lo2, hi2).expect("interval box is valid");
        let mid: Vec<f64> = vec![0.5; ybox.dim()];
        let rep = minimize_box_from_starts(
            |y: &[f64]| gx + model.eval_h_counted(x, y),
            None::<fn(&[f64]) -> Vec<f64>>,
            &ybox,
            &[mid],
            &DescentOptions {
                max_iters: 120,
                grad_tol: 1e-8,
                fd_step: 1e-7,
            },
        )
        .expect("inner solve has a start");
        let mut y = rep.argmin;
        // Enforce the original (uncrossed) bounds exactly.
        for i in 0..y.len() {
            y[i] = y[i].clamp(lo[i], hi[i]);
        }
        let v = gx + model.eval_h_counted(x, &y);
        Ok((y, v))
    };

    let outer = |x: &[f64]| -> f64 {
        match inner(x) {
            Ok((_, v)) => v,
            Err(_) => f64::INFINITY,
        }
    };
    let rep = minimize_box(outer, design, starts, seed)?;
    let (y, value) = inner(&rep.argmin)?;
    Ok(AuxiliarySolution {
        x: rep.argmin,
        y,
        value,
        collapsed_intervals: collapsed.load(std::sync::atomic::Ordering::Relaxed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn convex_quadratic_reaches_interior_optimum() {
        let domain = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] - 0.3).powi(2);
        let rep = minimize_box(f, &domain, 50, 1).unwrap();
        assert!((rep.argmin[0] - 0.3).abs() < 1e-4);
        assert!((rep.argmin[1] - 0.3).abs() < 1e-4);
        assert!(rep.converged_starts > 0);
        assert!(rep.evaluations > 0);
    }

    #[test]
    fn linear_objective_pins_the_active_bound() {
        let domain = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let rep = minimize_box(|x: &[f64]| x[0], &domain, 8, 3).unwrap();
        assert_eq!(rep.argmin[0], 0.0);
    }

    #[test]
    fn branin_multistart_matches_dense_grid() {
        // Branin on its standard box; dense-grid oracle at 400×400.
        let branin = |x: &[f64]| {
            let (a, b, c) = (1.0, 5.1 / (4.0 * std::f64::consts::PI.powi(2)), 5.0 / std::f64::consts::PI);
            let (r, s, t) = (6.0, 10.0, 1.0 / (8.0 * std::f64::consts::PI));
            a * (x[1] - b * x[0] * x[0] + c * x[0] - r).powi(2) + s * (1.0 - t) * x[0].cos() + s
        };
        let domain = BoxDomain::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
        let mut grid_best = f64::INFINITY;
        for i in 0..400 {
            for j in 0..400 {
                let x = [
                    -5.0 + 15.0 * i as f64 / 399.0,
                    15.0 * j as f64 / 399.0,
                ];
                grid_best = grid_best.min(branin(&x));
            }
        }
        let rep = minimize_box(branin, &domain, 50, 7).unwrap();
        assert!(
            rep.value <= grid_best + 1e-2,
            "50-start value {} vs grid {}",
            rep.value,
            grid_best
        );
        assert_relative_eq!(rep.value, 0.397887, epsilon = 1e-2);
    }

    #[test]
    fn report_value_never_exceeds_start_values() {
        let domain = BoxDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &[f64]| x[0].sin() * x[1].cos() + 0.1 * (x[0] * x[0] + x[1] * x[1]);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let starts: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let start_vals: Vec<f64> = starts
            .iter()
            .map(|z| {
                let x = [
                    -2.0 + 4.0 * z[0],
                    -2.0 + 4.0 * z[1],
                ];
                f(&x)
            })
            .collect();
        let rep = minimize_box_from_starts(
            f,
            None::<fn(&[f64]) -> Vec<f64>>,
            &domain,
            &starts,
            &DescentOptions::default(),
        )
        .unwrap();
        for sv in start_vals {
            assert!(rep.value <= sv + 1e-12);
        }
    }

    #[test]
    fn all_infinite_starts_is_an_error() {
        let domain = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let res = minimize_box(|_: &[f64]| f64::NAN, &domain, 4, 0);
        assert!(matches!(res, Err(OptimizeError::NoFiniteStart)));
    }
}
