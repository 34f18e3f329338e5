//! Trial orchestration for the four optimization loops, regret computation,
//! and operation accounting.
//!
//! Seed derivation inside a trial: every consumer gets an isolated stream
//! from `seed_mix([trial_seed, STREAM, iteration, ...])`, so trials are
//! bit-reproducible and independent of each other.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{eval_lcb, eval_lcb_bois, eval_lcb_cf};
use crate::composite::{
    CompositeError, CompositeModel, CompositeProblem, CounterSnapshot, Counters,
};
use crate::gp::{Dataset, DimScaling, FitOptions, GpError, GpModel, KernelConfig, MaternNu};
use crate::optimize::{minimize_box, solve_opbo_auxiliary, OptimizeError};
use crate::util::seed_mix;

const STREAM_FIT: u64 = 2;
const STREAM_AF: u64 = 3;
const STREAM_MC: u64 = 4;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("f_star must be nonzero for log-normalized regret")]
    FStarZero,
    #[error("trial needs at least one initialization point")]
    NoInitPoints,
    #[error("initialization point lies outside the design box")]
    InitOutsideBox,
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sbo,
    Mcbo,
    Opbo,
    Bois,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sbo => "sbo",
            Algorithm::Mcbo => "mcbo",
            Algorithm::Opbo => "opbo",
            Algorithm::Bois => "bois",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sbo" | "s-bo" => Ok(Algorithm::Sbo),
            "mcbo" | "mc-bo" => Ok(Algorithm::Mcbo),
            "opbo" | "op-bo" => Ok(Algorithm::Opbo),
            "bois" => Ok(Algorithm::Bois),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub algorithm: Algorithm,
    pub kappa: f64,
    pub iterations: usize,
    /// Monte-Carlo sample count for the composite LCB (paper default 100).
    pub mc_samples: usize,
    pub af_starts: usize,
    pub seed: u64,
    pub init_points: Vec<Vec<f64>>,
    pub problem_id: String,
    /// Reference optimum for log-normalized regret.
    pub f_star: f64,
    pub fit_restarts: usize,
}

impl TrialConfig {
    pub fn new(algorithm: Algorithm, problem_id: &str, f_star: f64) -> Self {
        Self {
            algorithm,
            kappa: 2.0,
            iterations: 10,
            mc_samples: 100,
            af_starts: 50,
            seed: 0,
            init_points: Vec::new(),
            problem_id: problem_id.to_string(),
            f_star,
            fit_restarts: 2,
        }
    }
}

/// One system interaction: the design point, the observed intermediates
/// (absent for S-BO, whose observation model is f alone), and the composite
/// objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub f: f64,
}

/// Per-iteration operation deltas and wall time.
#[derive(Debug, Clone, Copy, Default)]
pub struct IterationStats {
    pub counters: CounterSnapshot,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub samples: Vec<SampleRecord>,
    pub best_trace: Vec<f64>,
    pub regret_trace: Vec<f64>,
    pub iteration_stats: Vec<IterationStats>,
    pub counters: CounterSnapshot,
    pub system_samples: u64,
    /// True when every auxiliary-problem solution satisfied its confidence
    /// bounds (trivially true for the other algorithms).
    pub opbo_feasible: bool,
    /// Set when the system sampler failed; the partial result is preserved.
    pub aborted: Option<String>,
}

impl TrialResult {
    /// The deterministic payload (everything except wall-clock timings),
    /// used by reproducibility checks.
    pub fn deterministic_eq(&self, other: &TrialResult) -> bool {
        self.algorithm == other.algorithm
            && self.samples == other.samples
            && self.best_trace == other.best_trace
            && self.regret_trace == other.regret_trace
            && self.counters == other.counters
            && self.system_samples == other.system_samples
            && self.opbo_feasible == other.opbo_feasible
            && self.aborted == other.aborted
            && self
                .iteration_stats
                .iter()
                .zip(&other.iteration_stats)
                .all(|(a, b)| a.counters == b.counters)
    }
}

/// Log-normalized regret R = log10(|(f − f*)/f*|), floored at −16 when the
/// best value coincides with the reference optimum.
pub fn regret(best_trace: &[f64], f_star: f64) -> Result<Vec<f64>, EngineError> {
    if f_star == 0.0 {
        return Err(EngineError::FStarZero);
    }
    Ok(best_trace
        .iter()
        .map(|f| {
            let rel = ((f - f_star) / f_star).abs();
            if rel <= 0.0 {
                -16.0
            } else {
                rel.log10().max(-16.0)
            }
        })
        .collect())
}

/// Input scaling for one node's surrogate: design dimensions map onto their
/// box segment, nested intermediate inputs normalize by data range.
pub fn node_scalings(problem: &CompositeProblem, node_idx: usize) -> Vec<DimScaling> {
    let node = problem.node(node_idx);
    let mut scalings = Vec::with_capacity(node.x_inputs.len() + node.y_inputs.len());
    for &i in &node.x_inputs {
        scalings.push(DimScaling::Box(
            problem.design_box().lower[i],
            problem.design_box().upper[i],
        ));
    }
    for _ in &node.y_inputs {
        scalings.push(DimScaling::DataRange);
    }
    scalings
}

/// Training rows for one node: its design inputs concatenated with the
/// *observed* upstream intermediates (raw, never clipped).
pub fn assemble_node_dataset(
    problem: &CompositeProblem,
    records: &[SampleRecord],
    node_idx: usize,
) -> Result<Dataset, EngineError> {
    let node = problem.node(node_idx);
    let mut rows = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for r in records {
        let y = r
            .y
            .as_ref()
            .ok_or_else(|| CompositeError::UntrainedNode(node.name.clone()))?;
        let mut row = Vec::with_capacity(node.x_inputs.len() + node.y_inputs.len());
        for &i in &node.x_inputs {
            row.push(r.x[i]);
        }
        for &j in &node.y_inputs {
            row.push(y[j]);
        }
        rows.push(row);
        targets.push(y[node_idx]);
    }
    Ok(Dataset::new(rows, targets)?)
}

/// Fits the per-node surrogates of a composite problem on the sample
/// archive. Returns the model set plus the fitted configurations for
/// warm-starting the next refit.
pub fn fit_composite_models(
    problem: &Arc<CompositeProblem>,
    records: &[SampleRecord],
    fit_restarts: usize,
    warm: Option<&[KernelConfig]>,
    seed: u64,
) -> Result<(CompositeModel, Vec<KernelConfig>), EngineError> {
    let mut gps = Vec::with_capacity(problem.num_nodes());
    let mut configs = Vec::with_capacity(problem.num_nodes());
    for idx in 0..problem.num_nodes() {
        let data = assemble_node_dataset(problem, records, idx)?;
        let opts = FitOptions {
            nu: MaternNu::FiveHalves,
            restarts: fit_restarts,
            seed: seed_mix(&[seed, idx as u64]),
            warm_start: warm.and_then(|w| w.get(idx).cloned()),
            ..FitOptions::default()
        };
        let gp = GpModel::fit(data, &node_scalings(problem, idx), &opts)?;
        configs.push(gp.config().clone());
        gps.push(gp);
    }
    let model = CompositeModel::new(Arc::clone(problem), gps)?;
    Ok((model, configs))
}

/// Fits the single direct surrogate of f over the design box (S-BO).
pub fn fit_direct_model(
    problem: &CompositeProblem,
    records: &[SampleRecord],
    fit_restarts: usize,
    warm: Option<&KernelConfig>,
    seed: u64,
) -> Result<(GpModel, KernelConfig), EngineError> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    let fs: Vec<f64> = records.iter().map(|r| r.f).collect();
    let data = Dataset::new(rows, fs)?;
    let scalings: Vec<DimScaling> = (0..problem.dim_x())
        .map(|i| DimScaling::Box(problem.design_box().lower[i], problem.design_box().upper[i]))
        .collect();
    let opts = FitOptions {
        nu: MaternNu::FiveHalves,
        restarts: fit_restarts,
        seed,
        warm_start: warm.cloned(),
        ..FitOptions::default()
    };
    let gp = GpModel::fit(data, &scalings, &opts)?;
    let cfg = gp.config().clone();
    Ok((gp, cfg))
}

/// Runs one seeded trial of the configured algorithm. A sampler failure
/// aborts the trial and preserves the partial result.
pub fn run_trial(cfg: &TrialConfig, problem: &Arc<CompositeProblem>) -> Result<TrialResult, EngineError> {
    if cfg.init_points.is_empty() {
        return Err(EngineError::NoInitPoints);
    }
    for p in &cfg.init_points {
        if !problem.design_box().contains(p, 1e-12) {
            return Err(EngineError::InitOutsideBox);
        }
    }

    let keep_y = cfg.algorithm != Algorithm::Sbo;
    let mut samples: Vec<SampleRecord> = Vec::with_capacity(cfg.init_points.len() + cfg.iterations);
    let mut best_trace = Vec::new();
    let mut iteration_stats = Vec::new();
    let mut totals = CounterSnapshot::default();
    let mut aborted = None;
    let mut opbo_feasible = true;

    let mut best = f64::INFINITY;
    for x in &cfg.init_points {
        match problem.sample(x) {
            Ok(y) => {
                let f = problem.eval_f(x, &y);
                best = best.min(f);
                samples.push(SampleRecord {
                    x: x.clone(),
                    y: keep_y.then(|| y.clone()),
                    f,
                });
                best_trace.push(best);
                iteration_stats.push(IterationStats::default());
            }
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
    }

    let mut warm_nodes: Option<Vec<KernelConfig>> = None;
    let mut warm_direct: Option<KernelConfig> = None;

    if aborted.is_none() {
        'outer: for iter in 0..cfg.iterations {
            let t0 = Instant::now();
            let fit_seed = seed_mix(&[cfg.seed, STREAM_FIT, iter as u64]);
            let af_seed = seed_mix(&[cfg.seed, STREAM_AF, iter as u64]);
            let mc_seed = seed_mix(&[cfg.seed, STREAM_MC, iter as u64]);

            // Refit on the full archive, then propose the next sample.
            let proposal: Result<(Vec<f64>, CounterSnapshot), EngineError> = match cfg.algorithm {
                Algorithm::Sbo => {
                    let (gp, c) =
                        fit_direct_model(problem, &samples, cfg.fit_restarts, warm_direct.as_ref(), fit_seed)?;
                    warm_direct = Some(c);
                    let counters = Arc::new(Counters::default());
                    let cc = Arc::clone(&counters);
                    let af = move |x: &[f64]| {
                        cc.gp_posterior_calls.fetch_add(1, Ordering::Relaxed);
                        eval_lcb(&gp, x, cfg.kappa).unwrap_or(f64::INFINITY)
                    };
                    let rep = minimize_box(af, problem.design_box(), cfg.af_starts, af_seed)?;
                    Ok((rep.argmin, counters.snapshot()))
                }
                Algorithm::Mcbo => {
                    let (model, c) = fit_composite_models(
                        problem,
                        &samples,
                        cfg.fit_restarts,
                        warm_nodes.as_deref(),
                        fit_seed,
                    )?;
                    warm_nodes = Some(c);
                    let kappa = cfg.kappa;
                    let s = cfg.mc_samples;
                    let af = |x: &[f64]| {
                        eval_lcb_cf(&model, x, kappa, s, mc_seed).unwrap_or(f64::INFINITY)
                    };
                    let rep = minimize_box(af, problem.design_box(), cfg.af_starts, af_seed)?;
                    Ok((rep.argmin, model.counters()))
                }
                Algorithm::Bois => {
                    let (model, c) = fit_composite_models(
                        problem,
                        &samples,
                        cfg.fit_restarts,
                        warm_nodes.as_deref(),
                        fit_seed,
                    )?;
                    warm_nodes = Some(c);
                    let kappa = cfg.kappa;
                    let af = |x: &[f64]| eval_lcb_bois(&model, x, kappa).unwrap_or(f64::INFINITY);
                    let rep = minimize_box(af, problem.design_box(), cfg.af_starts, af_seed)?;
                    Ok((rep.argmin, model.counters()))
                }
                Algorithm::Opbo => {
                    let (model, c) = fit_composite_models(
                        problem,
                        &samples,
                        cfg.fit_restarts,
                        warm_nodes.as_deref(),
                        fit_seed,
                    )?;
                    warm_nodes = Some(c);
                    let sol = solve_opbo_auxiliary(&model, cfg.kappa, cfg.af_starts, af_seed)?;
                    // The proposed y is discarded in favor of the observed
                    // system response; verify it satisfied Eq. 17's bounds.
                    let pred = model.predict_intermediates(&sol.x)?;
                    for i in 0..problem.num_nodes() {
                        let node = problem.node(i);
                        let sigma = pred.variances[i].sqrt();
                        let lo = (pred.means[i] - cfg.kappa * sigma).max(node.lower);
                        let hi = (pred.means[i] + cfg.kappa * sigma).min(node.upper);
                        let (lo, hi) = if lo > hi {
                            let m = pred.means[i].clamp(node.lower, node.upper);
                            (m, m)
                        } else {
                            (lo, hi)
                        };
                        if sol.y[i] < lo - 1e-9 || sol.y[i] > hi + 1e-9 {
                            opbo_feasible = false;
                        }
                    }
                    Ok((sol.x, model.counters()))
                }
            };
            let (x_next, counters) = proposal?;

            match problem.sample(&x_next) {
                Ok(y) => {
                    let f = problem.eval_f(&x_next, &y);
                    best = best.min(f);
                    samples.push(SampleRecord {
                        x: x_next,
                        y: keep_y.then(|| y.clone()),
                        f,
                    });
                    best_trace.push(best);
                    let mut delta = counters;
                    delta.whitebox_evals += 1; // the observed-sample evaluation of f
                    totals = CounterSnapshot {
                        gp_posterior_calls: totals.gp_posterior_calls + delta.gp_posterior_calls,
                        whitebox_evals: totals.whitebox_evals + delta.whitebox_evals,
                        mc_draws: totals.mc_draws + delta.mc_draws,
                    };
                    iteration_stats.push(IterationStats {
                        counters: delta,
                        seconds: t0.elapsed().as_secs_f64(),
                    });
                }
                Err(e) => {
                    aborted = Some(e.to_string());
                    break 'outer;
                }
            }
        }
    }

    let regret_trace = regret(&best_trace, cfg.f_star)?;
    Ok(TrialResult {
        algorithm: cfg.algorithm,
        system_samples: samples.len() as u64,
        samples,
        best_trace,
        regret_trace,
        iteration_stats,
        counters: totals,
        opbo_feasible,
        aborted,
    })
}
