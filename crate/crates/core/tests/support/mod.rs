//! Independent oracles and instance generators shared by the integration
//! tests. Nothing here calls the solvers it is used to check.

#![allow(dead_code)]

use std::path::Path;

use rand::Rng;

/// `KL(p, q)` written out directly, `+inf` when `q` misses mass of `p`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            total += a * (a / b).ln();
        }
    }
    total
}

pub fn dot(p: &[f64], f: &[f64]) -> f64 {
    p.iter().zip(f).map(|(a, b)| a * b).sum()
}

pub fn variance(p: &[f64], f: &[f64]) -> f64 {
    let m = dot(p, f);
    p.iter().zip(f).map(|(a, x)| a * (x - m) * (x - m)).sum()
}

/// Brute-force `Kinf` for `m <= 3`: the smallest `KL(p, q)` over grid points
/// `q` with `q f >= u`, at resolution `step`.
///
/// Two grids are searched and every point is feasible, so the result is an
/// upper bound on the infimum. The first is the plain simplex grid. The second
/// walks the face `{q f = u}` (where the minimiser lies when `u > p f`, by
/// convexity) with one coordinate on the grid and the other two solved from
/// the constraints. The face grid avoids the `lambda* x step` error that the
/// plain grid makes when the constraint is steep.
pub fn kinf_grid(p: &[f64], f: &[f64], u: f64, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    let mut best = f64::INFINITY;
    let mut consider = |q: &[f64]| {
        if q.iter().all(|&x| x >= 0.0) && dot(q, f) >= u - 1e-15 {
            best = best.min(kl(p, q));
        }
    };
    let grid = |k: usize| k as f64 / n as f64;
    match p.len() {
        1 => consider(&[1.0]),
        2 => {
            for i in 0..=n {
                consider(&[grid(i), 1.0 - grid(i)]);
            }
            // The face is one point.
            if f[0] != f[1] {
                let q0 = (u - f[1]) / (f[0] - f[1]);
                consider(&[q0, 1.0 - q0]);
            }
        }
        3 => {
            for i in 0..=n {
                for j in 0..=n - i {
                    consider(&[grid(i), grid(j), 1.0 - grid(i) - grid(j)]);
                }
            }
            best = best.min(kinf_face(p, f, u, step));
        }
        m => panic!("grid oracle supports m <= 3, got {m}"),
    }
    best
}

/// Smallest `KL(p, q)` over the face `{q f = u}` of the 3-simplex, walked with
/// one coordinate on a grid of resolution `step` and the other two solved from
/// the constraints.
pub fn kinf_face(p: &[f64], f: &[f64], u: f64, step: f64) -> f64 {
    assert_eq!(p.len(), 3, "face walk is written for m = 3");
    let n = (1.0 / step).round() as usize;
    let mut best = f64::INFINITY;
    for fixed in 0..3 {
        let (a, b) = ((fixed + 1) % 3, (fixed + 2) % 3);
        if f[a] == f[b] {
            continue;
        }
        for i in 0..=n {
            let x = i as f64 / n as f64;
            // q_a + q_b = 1 - x, q_a f_a + q_b f_b = u - x f_fixed.
            let qa = (u - x * f[fixed] - (1.0 - x) * f[b]) / (f[a] - f[b]);
            let mut q = [0.0; 3];
            q[fixed] = x;
            q[a] = qa;
            q[b] = 1.0 - x - qa;
            if q.iter().all(|&c| c >= 0.0) && dot(&q, f) >= u - 1e-15 {
                best = best.min(kl(p, &q));
            }
        }
    }
    best
}

/// Random probability vector of length `m`; each coordinate is zero with
/// probability `zero_prob` (at least one stays positive).
pub fn random_simplex<R: Rng>(rng: &mut R, m: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..m)
            .map(|_| if rng.random::<f64>() < zero_prob { 0.0 } else { rng.random::<f64>() })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 1e-3 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}

pub fn random_values<R: Rng>(rng: &mut R, m: usize, b: f64) -> Vec<f64> {
    (0..m).map(|_| b * rng.random::<f64>()).collect()
}

/// Density of `Beta(a, b)` at `x`.
pub fn beta_density(a: f64, b: f64, x: f64) -> f64 {
    let ln_norm = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b);
    (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp()
}

/// Regret CSV with the wall-clock column removed, for byte comparison.
pub fn strip_wallclock(path: &Path) -> String {
    let text = std::fs::read_to_string(path).expect("regret file");
    text.lines()
        .map(|line| match line.rfind(',') {
            Some(i) => &line[..i],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Two-sided binomial standard error at probability `p` with `n` trials.
pub fn binomial_se(p: f64, n: f64) -> f64 {
    (p * (1.0 - p) / n).sqrt()
}
