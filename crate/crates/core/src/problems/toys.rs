//! Small synthetic composite problems used by the test suites and exposed
//! through the problem registry for smoke runs.

use std::sync::Arc;

use crate::composite::{CompositeProblem, NodeDef};
use crate::optimize::BoxDomain;

const WIDE: (f64, f64) = (-1e6, 1e6);

fn node(name: &str, x_inputs: Vec<usize>, bounds: (f64, f64)) -> NodeDef {
    NodeDef {
        name: name.into(),
        x_inputs,
        y_input_names: vec![],
        lower: bounds.0,
        upper: bounds.1,
    }
}

fn y1_affine(x: &[f64]) -> f64 {
    0.6 + 0.3 * (3.0 * x[0]).sin() + 0.2 * x[1]
}

fn y2_affine(x: &[f64]) -> f64 {
    0.4 + 0.25 * (2.0 * x[1]).cos() + 0.15 * x[0] * x[0]
}

/// Two smooth intermediates with h affine in y: the linear-closure testbed.
/// f(x, y) = g(x) + 3y₁ + 2y₂ + 0.5x₀ with g(x) = x₀² + 0.5x₁.
pub fn affine() -> CompositeProblem {
    CompositeProblem::new(
        BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        vec![
            node("y1", vec![0, 1], WIDE),
            node("y2", vec![0, 1], WIDE),
        ],
        Arc::new(|x: &[f64]| x[0] * x[0] + 0.5 * x[1]),
        Arc::new(|x: &[f64], y: &[f64]| 3.0 * y[0] + 2.0 * y[1] + 0.5 * x[0]),
        Arc::new(|x: &[f64]| Ok(vec![y1_affine(x), y2_affine(x)])),
    )
    .unwrap()
}

/// Same intermediates with a smooth nonlinear (quadratic) white-box h.
pub fn quadratic() -> CompositeProblem {
    CompositeProblem::new(
        BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        vec![
            node("y1", vec![0, 1], WIDE),
            node("y2", vec![0, 1], WIDE),
        ],
        Arc::new(|x: &[f64]| 0.3 * x[1]),
        Arc::new(|x: &[f64], y: &[f64]| {
            2.0 * y[0] * y[0] + y[0] * y[1] + 0.5 * y[1] + 0.3 * y[0] * x[0]
        }),
        Arc::new(|x: &[f64]| Ok(vec![y1_affine(x), y2_affine(x)])),
    )
    .unwrap()
}

/// One design variable, one intermediate y = x², f = 0.2x + y. Used by the
/// engine oracle tests.
pub fn one_d() -> CompositeProblem {
    CompositeProblem::new(
        BoxDomain::new(vec![0.0], vec![1.0]).unwrap(),
        vec![node("y", vec![0], WIDE)],
        Arc::new(|x: &[f64]| 0.2 * x[0]),
        Arc::new(|_: &[f64], y: &[f64]| y[0]),
        Arc::new(|x: &[f64]| Ok(vec![x[0] * x[0]])),
    )
    .unwrap()
}

/// Coefficients (a, b) of the affine 1-d h: h(x, y) = a·y + b.
pub fn affine_1d_coeffs() -> (f64, f64) {
    (2.5, -0.4)
}

/// One design variable, one smooth intermediate, affine h. The BOIS and
/// linear-closure acquisition surfaces coincide exactly on this problem.
pub fn affine_1d() -> CompositeProblem {
    let (a, b) = affine_1d_coeffs();
    CompositeProblem::new(
        BoxDomain::new(vec![0.0], vec![1.0]).unwrap(),
        vec![node("y", vec![0], WIDE)],
        Arc::new(|x: &[f64]| 0.1 * x[0]),
        Arc::new(move |_: &[f64], y: &[f64]| a * y[0] + b),
        Arc::new(|x: &[f64]| Ok(vec![(4.0 * x[0]).sin() + 0.5 * x[0]])),
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samplers_are_pure_and_f_is_finite_on_the_box() {
        for p in [affine(), quadratic(), one_d(), affine_1d()] {
            let mid: Vec<f64> = p
                .design_box()
                .lower
                .iter()
                .zip(&p.design_box().upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect();
            let y1 = p.sample(&mid).unwrap();
            let y2 = p.sample(&mid).unwrap();
            assert_eq!(y1, y2);
            assert!(p.eval_f(&mid, &y1).is_finite());
        }
    }
}
