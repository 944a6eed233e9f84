#![allow(dead_code)]

use clogan::nn::Gradients;

/// Central differences of `f` over every entry of `params`, driven through a
/// setter so the caller decides which tensors are perturbed.
pub fn numeric_grad(sizes: &[usize], mut get: impl FnMut(usize, usize) -> f64, mut set: impl FnMut(usize, usize, f64), mut f: impl FnMut() -> f64, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for (t, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let x = get(t, i);
            set(t, i, x + h);
            let up = f();
            set(t, i, x - h);
            let down = f();
            set(t, i, x);
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Relative error of the whole vector, floored so tiny gradients do not blow up.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    diff / scale.max(1e-8)
}

pub fn flat(g: &Gradients<f64>) -> Vec<f64> {
    g.flat()
}
