//! Composite performance functions f(x, y(x)) = g(x) + h(x, y), with the
//! black-box intermediates y represented by a DAG of independently modeled
//! nodes, and three routes from GP moments of y to moments of f: exact
//! linear closure, Monte-Carlo sampling, and adaptive linearization.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use thiserror::Error;

use crate::gp::{GpError, GpModel};
use crate::optimize::BoxDomain;

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error("cycle detected among intermediate nodes: {0}")]
    Cycle(String),
    #[error("unknown node `{0}` referenced as an input")]
    UnknownNode(String),
    #[error("node `{0}` has no trained model")]
    UntrainedNode(String),
    #[error("query point is outside the design box")]
    OutOfDomain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("white-box function was non-finite while probing component {component}")]
    NonFiniteProbe { component: usize },
    #[error("Monte-Carlo moment estimation needs at least 2 samples")]
    SampleCount,
    #[error("invalid node definition: {0}")]
    InvalidNode(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("system sampler failed: {0}")]
    Sampler(String),
}

/// One black-box intermediate: which design variables and which upstream
/// nodes feed its surrogate, plus hard feasibility bounds.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub name: String,
    /// Indices into the design vector, in query order.
    pub x_inputs: Vec<usize>,
    /// Indices of upstream nodes (into the problem's node list), in query
    /// order after the x inputs.
    pub y_inputs: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

pub type WhiteboxG = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type WhiteboxH = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type Sampler = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>, String> + Send + Sync>;

/// A grey-box problem: white-box structure g and h, the expensive system
/// oracle, and the intermediate DAG all four algorithms operate on.
pub struct CompositeProblem {
    design_box: BoxDomain,
    nodes: Vec<NodeSpec>,
    topo: Vec<usize>,
    g: WhiteboxG,
    h: WhiteboxH,
    sampler: Sampler,
}

impl std::fmt::Debug for CompositeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompositeProblem")
            .field("design_box", &self.design_box)
            .field("nodes", &self.nodes.iter().map(|n| &n.name).collect::<Vec<_>>())
            .finish()
    }
}

/// Builder-style node description using upstream names.
#[derive(Debug, Clone)]
pub struct NodeDef {
    pub name: String,
    pub x_inputs: Vec<usize>,
    pub y_input_names: Vec<String>,
    pub lower: f64,
    pub upper: f64,
}

impl CompositeProblem {
    pub fn new(
        design_box: BoxDomain,
        defs: Vec<NodeDef>,
        g: WhiteboxG,
        h: WhiteboxH,
        sampler: Sampler,
    ) -> Result<Self, CompositeError> {
        let index: BTreeMap<String, usize> =
            defs.iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect();
        if index.len() != defs.len() {
            return Err(CompositeError::InvalidNode("duplicate node names".into()));
        }
        let mut nodes = Vec::with_capacity(defs.len());
        for d in &defs {
            if !(d.lower < d.upper) {
                return Err(CompositeError::InvalidNode(format!(
                    "node `{}` needs lower < upper",
                    d.name
                )));
            }
            if d.x_inputs.iter().any(|&i| i >= design_box.dim()) {
                return Err(CompositeError::InvalidNode(format!(
                    "node `{}` references a design index outside the box",
                    d.name
                )));
            }
            let mut y_inputs = Vec::with_capacity(d.y_input_names.len());
            for up in &d.y_input_names {
                let &i = index
                    .get(up)
                    .ok_or_else(|| CompositeError::UnknownNode(up.clone()))?;
                y_inputs.push(i);
            }
            nodes.push(NodeSpec {
                name: d.name.clone(),
                x_inputs: d.x_inputs.clone(),
                y_inputs,
                lower: d.lower,
                upper: d.upper,
            });
        }
        let topo = topo_order(&nodes)?;
        Ok(Self {
            design_box,
            nodes,
            topo,
            g,
            h,
            sampler,
        })
    }

    pub fn design_box(&self) -> &BoxDomain {
        &self.design_box
    }

    pub fn dim_x(&self) -> usize {
        self.design_box.dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &NodeSpec {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    /// Evaluation order: every node after all of its inputs, ties broken
    /// lexicographically by name.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn eval_g(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    pub fn eval_h(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.h)(x, y)
    }

    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_g(x) + self.eval_h(x, y)
    }

    /// Queries the expensive system oracle.
    pub fn sample(&self, x: &[f64]) -> Result<Vec<f64>, CompositeError> {
        (self.sampler)(x).map_err(CompositeError::Sampler)
    }
}

/// Kahn's algorithm with a lexicographic ready-queue for stable output.
fn topo_order(nodes: &[NodeSpec]) -> Result<Vec<usize>, CompositeError> {
    let n = nodes.len();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in nodes.iter().enumerate() {
        indegree[i] = node.y_inputs.len();
        for &up in &node.y_inputs {
            dependents[up].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<(String, usize)> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (nodes[i].name.clone(), i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.iter().next().cloned() {
        ready.remove(&first);
        let i = first.1;
        order.push(i);
        for &dep in &dependents[i] {
            indegree[dep] -= 1;
            if indegree[dep] == 0 {
                ready.insert((nodes[dep].name.clone(), dep));
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| nodes[i].name.as_str())
            .collect();
        return Err(CompositeError::Cycle(stuck.join(" -> ")));
    }
    Ok(order)
}

/// Moments of f at one query point. `clipped` records, per node, whether the
/// feasibility clipping was active when the means were formed.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stdev: f64,
    pub clipped: Vec<ClipState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipState {
    Inactive,
    Lower,
    Upper,
}

/// Means (already clipped into the feasibility bounds), variances, and the
/// clip mask for all intermediates at one x.
#[derive(Debug, Clone)]
pub struct IntermediatePrediction {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub clipped: Vec<ClipState>,
}

/// Operation counters shared by all moment paths; relaxed atomics so
/// concurrent AF probes stay cheap.
#[derive(Debug, Default)]
pub struct Counters {
    pub gp_posterior_calls: AtomicU64,
    pub whitebox_evals: AtomicU64,
    pub mc_draws: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub gp_posterior_calls: u64,
    pub whitebox_evals: u64,
    pub mc_draws: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            gp_posterior_calls: self.gp_posterior_calls.load(Ordering::Relaxed),
            whitebox_evals: self.whitebox_evals.load(Ordering::Relaxed),
            mc_draws: self.mc_draws.load(Ordering::Relaxed),
        }
    }
}

impl CounterSnapshot {
    pub fn delta(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            gp_posterior_calls: self.gp_posterior_calls - earlier.gp_posterior_calls,
            whitebox_evals: self.whitebox_evals - earlier.whitebox_evals,
            mc_draws: self.mc_draws - earlier.mc_draws,
        }
    }
}

/// A composite problem with trained per-node GP models attached. All moment
/// evaluations are pure in (problem, models, x) and safe to run concurrently
/// at distinct x.
pub struct CompositeModel {
    problem: Arc<CompositeProblem>,
    models: Vec<GpModel>,
    counters: Arc<Counters>,
}

impl CompositeModel {
    pub fn new(problem: Arc<CompositeProblem>, models: Vec<GpModel>) -> Result<Self, CompositeError> {
        if models.len() != problem.num_nodes() {
            return Err(CompositeError::DimensionMismatch {
                expected: problem.num_nodes(),
                got: models.len(),
            });
        }
        for (i, m) in models.iter().enumerate() {
            let want = problem.nodes[i].x_inputs.len() + problem.nodes[i].y_inputs.len();
            if m.dim() != want {
                return Err(CompositeError::DimensionMismatch {
                    expected: want,
                    got: m.dim(),
                });
            }
        }
        Ok(Self {
            problem,
            models,
            counters: Arc::new(Counters::default()),
        })
    }

    pub fn problem(&self) -> &CompositeProblem {
        &self.problem
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub fn counters_handle(&self) -> Arc<Counters> {
        Arc::clone(&self.counters)
    }

    pub(crate) fn eval_h_counted(&self, x: &[f64], y: &[f64]) -> f64 {
        self.counters.whitebox_evals.fetch_add(1, Ordering::Relaxed);
        self.problem.eval_h(x, y)
    }

    fn check_x(&self, x: &[f64]) -> Result<(), CompositeError> {
        if x.len() != self.problem.dim_x() {
            return Err(CompositeError::DimensionMismatch {
                expected: self.problem.dim_x(),
                got: x.len(),
            });
        }
        if !self.problem.design_box.contains(x, 1e-9) {
            return Err(CompositeError::OutOfDomain);
        }
        Ok(())
    }

    fn node_query(&self, node: &NodeSpec, x: &[f64], clipped_means: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(node.x_inputs.len() + node.y_inputs.len());
        for &i in &node.x_inputs {
            q.push(x[i]);
        }
        for &j in &node.y_inputs {
            q.push(clipped_means[j]);
        }
        q
    }

    /// Evaluates every node's surrogate in topological order. Each node's
    /// query is its design inputs plus the clipped means of its upstream
    /// nodes; means are clipped into [l̂, û] as ŷ = m + max(0, l̂−m) +
    /// min(0, û−m). Variances come from the same queries; the intermediate
    /// covariance is diagonal and nesting transmits means only.
    pub fn predict_intermediates(&self, x: &[f64]) -> Result<IntermediatePrediction, CompositeError> {
        self.check_x(x)?;
        let n = self.problem.num_nodes();
        let mut means = vec![0.0; n];
        let mut variances = vec![0.0; n];
        let mut clipped = vec![ClipState::Inactive; n];
        for &i in &self.problem.topo {
            let node = &self.problem.nodes[i];
            let q = self.node_query(node, x, &means);
            self.counters.gp_posterior_calls.fetch_add(1, Ordering::Relaxed);
            let (m, v) = self.models[i].posterior(&q)?;
            let (clipped_mean, state) = clip_mean(m, node.lower, node.upper);
            means[i] = clipped_mean;
            variances[i] = v;
            clipped[i] = state;
        }
        Ok(IntermediatePrediction {
            means,
            variances,
            clipped,
        })
    }

    /// The assembled GP query vectors per node (diagnostics; topo-consistent
    /// with `predict_intermediates`).
    pub fn intermediate_queries(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, CompositeError> {
        let pred = self.predict_intermediates(x)?;
        Ok(self
            .problem
            .nodes
            .iter()
            .map(|n| self.node_query(n, x, &pred.means))
            .collect())
    }

    /// Monte-Carlo moments: y_s = ŷ + diag(σ)·z_s with z_s ~ N(0, I), each
    /// sample clipped into the feasibility bounds before evaluating f.
    /// Deterministic for a fixed seed.
    pub fn mc_moments(
        &self,
        x: &[f64],
        samples: usize,
        seed: u64,
    ) -> Result<MomentEstimate, CompositeError> {
        if samples < 2 {
            return Err(CompositeError::SampleCount);
        }
        let pred = self.predict_intermediates(x)?;
        let n = self.problem.num_nodes();
        let sigmas: Vec<f64> = pred.variances.iter().map(|v| v.sqrt()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::StandardNormal;
        let mut values = Vec::with_capacity(samples);
        let mut y = vec![0.0; n];
        for _ in 0..samples {
            for i in 0..n {
                let z: f64 = normal.sample(&mut rng);
                let node = &self.problem.nodes[i];
                y[i] = (pred.means[i] + sigmas[i] * z).clamp(node.lower, node.upper);
            }
            self.counters.mc_draws.fetch_add(1, Ordering::Relaxed);
            let f = self.problem.eval_g(x) + self.eval_h_counted(x, &y);
            values.push(f);
        }
        let s = samples as f64;
        let mean = values.iter().sum::<f64>() / s;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let stdev = (ss / (s - 1.0)).sqrt();
        Ok(MomentEstimate {
            mean,
            stdev,
            clipped: pred.clipped,
        })
    }

    /// Finite-difference Jacobian of h with respect to y at (x, y0), with
    /// per-component step ε_i = max(|y0_i|·1e-3, 1e-8). Central differences
    /// by default; where the clip mask is active the difference is one-sided,
    /// stepping away from the active bound. `h_at_y0` lets the caller share
    /// the already-computed center value for the one-sided stencils.
    pub fn bois_jacobian_with_center(
        &self,
        x: &[f64],
        y0: &[f64],
        clipped: &[ClipState],
        h_at_y0: Option<f64>,
    ) -> Result<Vec<f64>, CompositeError> {
        let n = self.problem.num_nodes();
        if y0.len() != n || clipped.len() != n {
            return Err(CompositeError::DimensionMismatch {
                expected: n,
                got: y0.len().min(clipped.len()),
            });
        }
        let mut center: Option<f64> = h_at_y0;
        let mut jac = vec![0.0; n];
        let mut probe = y0.to_vec();
        for i in 0..n {
            let eps = (y0[i].abs() * 1e-3).max(1e-8);
            let d = match clipped[i] {
                ClipState::Inactive => {
                    probe[i] = y0[i] + eps;
                    let up = self.eval_h_counted(x, &probe);
                    probe[i] = y0[i] - eps;
                    let dn = self.eval_h_counted(x, &probe);
                    probe[i] = y0[i];
                    (up - dn) / (2.0 * eps)
                }
                ClipState::Lower => {
                    let c = *center
                        .get_or_insert_with(|| self.eval_h_counted(x, y0));
                    probe[i] = y0[i] + eps;
                    let up = self.eval_h_counted(x, &probe);
                    probe[i] = y0[i];
                    (up - c) / eps
                }
                ClipState::Upper => {
                    let c = *center
                        .get_or_insert_with(|| self.eval_h_counted(x, y0));
                    probe[i] = y0[i] - eps;
                    let dn = self.eval_h_counted(x, &probe);
                    probe[i] = y0[i];
                    (c - dn) / eps
                }
            };
            if !d.is_finite() {
                return Err(CompositeError::NonFiniteProbe { component: i });
            }
            jac[i] = d;
        }
        Ok(jac)
    }

    /// Spec-level entry point without a shared center value.
    pub fn bois_jacobian(
        &self,
        x: &[f64],
        y0: &[f64],
        clipped: &[ClipState],
    ) -> Result<Vec<f64>, CompositeError> {
        self.bois_jacobian_with_center(x, y0, clipped, None)
    }

    /// Closed-form moments by adaptive linearization: the reference point
    /// ŷ₀ coincides with the clipped means ŷ, so
    /// mean = Jᵀŷ + g(x) + h(x, ŷ₀) − Jᵀŷ₀ = g(x) + h(x, ŷ) and
    /// stdev = √(Jᵀ Σ̂ J) with diagonal Σ̂.
    pub fn bois_moments(&self, x: &[f64]) -> Result<MomentEstimate, CompositeError> {
        let pred = self.predict_intermediates(x)?;
        let y_hat = &pred.means;
        let y_ref = y_hat.clone();
        let h0 = self.eval_h_counted(x, &y_ref);
        let jac = self.bois_jacobian_with_center(x, &y_ref, &pred.clipped, Some(h0))?;
        let jy: f64 = jac.iter().zip(y_hat).map(|(j, y)| j * y).sum();
        let jy0: f64 = jac.iter().zip(&y_ref).map(|(j, y)| j * y).sum();
        let mean = jy + self.problem.eval_g(x) + h0 - jy0;
        let var: f64 = jac
            .iter()
            .zip(&pred.variances)
            .map(|(j, v)| j * j * v)
            .sum();
        Ok(MomentEstimate {
            mean,
            stdev: var.sqrt(),
            clipped: pred.clipped,
        })
    }
}

/// Feasibility clipping ŷ = m + max(0, l̂−m) + min(0, û−m), evaluated as an
/// exact clamp so that containment and idempotence hold bitwise.
pub(crate) fn clip_mean(m: f64, lower: f64, upper: f64) -> (f64, ClipState) {
    if m < lower {
        (lower, ClipState::Lower)
    } else if m > upper {
        (upper, ClipState::Upper)
    } else {
        (m, ClipState::Inactive)
    }
}

/// Moments of the affine transform aᵀy + b of independent Gaussians:
/// mean = aᵀm + b, stdev = √(aᵀ Σ a) with diagonal Σ given as variances.
pub fn linear_moments(
    a: &[f64],
    b: f64,
    means: &[f64],
    variances: &[f64],
) -> Result<MomentEstimate, CompositeError> {
    if a.len() != means.len() || a.len() != variances.len() {
        return Err(CompositeError::DimensionMismatch {
            expected: a.len(),
            got: means.len().min(variances.len()),
        });
    }
    let mean = a.iter().zip(means).map(|(ai, mi)| ai * mi).sum::<f64>() + b;
    let var = a
        .iter()
        .zip(variances)
        .map(|(ai, vi)| ai * ai * vi)
        .sum::<f64>();
    Ok(MomentEstimate {
        mean,
        stdev: var.sqrt(),
        clipped: vec![ClipState::Inactive; a.len()],
    })
}
