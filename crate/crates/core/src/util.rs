//! Small numerical helpers shared across modules.

use rayon::prelude::*;
use std::f64::consts::PI;

/// Volume of the unit sphere `S^{n-1} ⊂ R^n`, `2 π^{n/2} / Γ(n/2)`.
pub fn unit_sphere_volume(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half_integer(n)
}

/// `Γ(n/2)` for a positive integer `n`, evaluated exactly through the
/// factorial recurrences.
fn gamma_half_integer(n: usize) -> f64 {
    assert!(n >= 1);
    if n.is_multiple_of(2) {
        (1..n / 2).fold(1.0, |acc, k| acc * k as f64)
    } else {
        // Γ(1/2) = √π, Γ(x + 1) = x Γ(x)
        let mut acc = PI.sqrt();
        let mut x = 0.5;
        while x < n as f64 / 2.0 - 0.25 {
            acc *= x;
            x += 1.0;
        }
        acc
    }
}

/// Pairwise summation in a fixed tree order. The result depends only on the
/// order of `values`, never on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Evaluate `f` over `items` in parallel and return the results in input
/// order. Combined with [`pairwise_sum`] this gives worker-count independent
/// reductions.
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius(x: &[f64]) -> f64 {
    norm(x)
}

/// Geometric schedule `start, start·ratio, ...` up to and including `stop`.
pub fn geometric_schedule(start: f64, stop: f64, ratio: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = start;
    while s <= stop * (1.0 + 1e-12) {
        out.push(s);
        s *= ratio;
    }
    out
}

/// Ordinary least squares line `y = a + b x`. Returns `(a, b, rms residual)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - a - b * xi).powi(2))
        .sum();
    (a, b, (rss / m).sqrt())
}

/// Fit `log|y| = log C - σ log r`; returns `(σ, C, rms log residual)`.
pub fn fit_power_decay(r: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let (a, b, res) = fit_line(&lx, &ly);
    (-b, a.exp(), res)
}
