//! Problem registry: ids, dimensions, and the committed brute-force
//! reference optima used for log-normalized regret.
//!
//! The reference values were produced by the coarse-to-fine pattern search
//! in `tests/reference_search.rs` (run with `cargo test --release -- --ignored`)
//! and frozen here.

use std::sync::Arc;

use crate::composite::CompositeProblem;

use super::{chemproc, pbr, toys};

#[derive(Debug, Clone)]
pub struct ProblemInfo {
    pub id: &'static str,
    pub dim_x: usize,
    pub dim_y: usize,
    /// Brute-force reference optimum of this implementation.
    pub f_star: f64,
    pub x_star: &'static [f64],
    pub description: &'static str,
}

/// Reference optimum of the chemical-process benchmark (pattern search).
pub const CHEMPROC_F_STAR: f64 = -3000.0;
pub const CHEMPROC_X_STAR: [f64; 5] = [973.0, 450.0, 288.0, 170.0, 0.9];

/// Reference optimum of the photobioreactor benchmark (pattern search).
pub const PBR_F_STAR: f64 = 4.44;
pub const PBR_X_STAR: [f64; 3] = [15.4, 30.0, 0.013];

/// Reference optima for the synthetic toys (dense grid).
pub const TOY_AFFINE_F_STAR: f64 = 1.0;
pub const TOY_AFFINE_X_STAR: [f64; 2] = [0.0, 0.0];
pub const TOY_QUAD_F_STAR: f64 = 1.0;
pub const TOY_QUAD_X_STAR: [f64; 2] = [0.0, 0.0];

pub fn list() -> Vec<ProblemInfo> {
    vec![
        ProblemInfo {
            id: "chemproc",
            dim_x: 5,
            dim_y: 5,
            f_star: CHEMPROC_F_STAR,
            x_star: &CHEMPROC_X_STAR,
            description: "equilibrium reactor + flash separator with recycle; hourly cost [USD/hr]",
        },
        ProblemInfo {
            id: "pbr",
            dim_x: 3,
            dim_y: 2,
            f_star: PBR_F_STAR,
            x_star: &PBR_X_STAR,
            description: "bag-photobioreactor biofertilizer plant; minimum selling price [USD/kg]",
        },
        ProblemInfo {
            id: "toy_affine",
            dim_x: 2,
            dim_y: 2,
            f_star: TOY_AFFINE_F_STAR,
            x_star: &TOY_AFFINE_X_STAR,
            description: "synthetic smooth intermediates with affine white-box h",
        },
        ProblemInfo {
            id: "toy_quad",
            dim_x: 2,
            dim_y: 2,
            f_star: TOY_QUAD_F_STAR,
            x_star: &TOY_QUAD_X_STAR,
            description: "synthetic smooth intermediates with quadratic white-box h",
        },
    ]
}

pub fn info(id: &str) -> Option<ProblemInfo> {
    list().into_iter().find(|p| p.id == id)
}

/// Instantiates a registered problem with its default configuration.
pub fn build(id: &str) -> Option<Arc<CompositeProblem>> {
    match id {
        "chemproc" => Some(Arc::new(chemproc::build_problem(Default::default()))),
        "pbr" => Some(Arc::new(pbr::build_problem(Default::default()))),
        "toy_affine" => Some(Arc::new(toys::affine())),
        "toy_quad" => Some(Arc::new(toys::quadratic())),
        _ => None,
    }
}
