//! Gauss–Legendre and trapezoid rules.

use crate::linalg::{cr, CMat};

// 5-point Gauss–Legendre on [-1, 1]
const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Nodes and weights of the 5-point rule mapped to [lo, hi].
pub fn gl5_nodes(lo: f64, hi: f64) -> [(f64, f64); 5] {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut out = [(0.0, 0.0); 5];
    for i in 0..5 {
        out[i] = (mid + half * GL5_X[i], half * GL5_W[i]);
    }
    out
}

pub fn gauss_legendre_on(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    gl5_nodes(lo, hi).iter().map(|&(t, w)| w * f(t)).sum()
}

/// Composite 5-point rule over consecutive breakpoints.
pub fn gauss_legendre_matrix(cuts: &[f64], f: impl Fn(f64) -> CMat) -> Option<CMat> {
    let mut acc: Option<CMat> = None;
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        for (t, wt) in gl5_nodes(w[0], w[1]) {
            let v = f(t) * cr(wt);
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
    }
    acc
}

/// Running trapezoid integral; out[0] = 0.
pub fn cumulative_trapezoid(grid: &[f64], vals: &[CMat]) -> Vec<CMat> {
    let mut out = Vec::with_capacity(vals.len());
    if vals.is_empty() {
        return out;
    }
    let mut acc = vals[0].clone() * cr(0.0);
    out.push(acc.clone());
    for i in 1..vals.len() {
        let h = grid[i] - grid[i - 1];
        acc += (&vals[i] + &vals[i - 1]) * cr(0.5 * h);
        out.push(acc.clone());
    }
    out
}

/// Trapezoid weights for a (possibly non-uniform) grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = 0.5 * (grid[i] - grid[i - 1]);
        w[i - 1] += h;
        w[i] += h;
    }
    w
}

/// Merge sorted cut lists, dropping near-duplicates.
pub fn merge_cuts(a: &[f64], b: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).cloned().filter(|&t| t > lo && t < hi).collect();
    all.push(lo);
    all.push(hi);
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let scale = (hi - lo).abs().max(1.0);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        if out.last().is_none_or(|&l| t - l > 1e-13 * scale) {
            out.push(t);
        }
    }
    if let Some(l) = out.last_mut() {
        *l = hi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl5_integrates_degree_nine_exactly() {
        let v = gauss_legendre_on(0.0, 2.0, |t| t.powi(9));
        assert!((v - 102.4).abs() < 1e-11);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let g = [0.0, 0.1, 0.5, 2.0];
        let s: f64 = trapezoid_weights(&g).iter().sum();
        assert!((s - 2.0).abs() < 1e-15);
    }

    #[test]
    fn merge_cuts_dedups() {
        let m = merge_cuts(&[0.0, 0.5, 1.0], &[0.5, 0.75], 0.0, 1.0);
        assert_eq!(m, vec![0.0, 0.5, 0.75, 1.0]);
    }
}
