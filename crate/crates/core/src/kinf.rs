//! Minimum-KL projection `Kinf(p, u, f) = inf { KL(p, q) : q f >= u }`.
//!
//! The infimum is computed through its dual
//!
//! ```text
//! Kinf(p, u, f) = max_{lambda in [0, 1/(fmax - u)]} E_p[ log(1 - lambda (f(X) - u)) ]
//! ```
//!
//! where `fmax = max_j f(j)`. The maximization runs in the rescaled variable
//! `t = lambda (fmax - u)` in `[0, 1]`, on which the objective is concave with
//! a closed-form derivative, so bisection on the derivative is enough.
//!
//! `fmax` is the largest value `f` actually takes, which may be smaller than
//! the declared bound `b`. Using `b` instead would let the dual exceed the
//! primal whenever no coordinate attains `b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability vectors accepted at construction.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Width at which the bisection on the rescaled multiplier stops.
pub const BISECTION_WIDTH: f64 = 1e-12;

/// Relative distance to `p f` under which `u` is treated as `p f`.
pub const SNAP_TOLERANCE: f64 = 1e-14;

/// A function on `{0, .., m}` with values in `[0, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedFn {
    values: Vec<f64>,
    bound: f64,
    /// Optional bound on `f(1..)`, used by the Gaussian lower bound.
    sub_bound: Option<f64>,
}

impl BoundedFn {
    pub fn new(values: Vec<f64>, bound: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("function has empty support"));
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::domain(format!("bound must be positive, got {bound}")));
        }
        if let Some(v) = values.iter().find(|&&v| !(0.0..=bound).contains(&v)) {
            return Err(Error::domain(format!("value {v} outside [0, {bound}]")));
        }
        Ok(BoundedFn {
            values,
            bound,
            sub_bound: None,
        })
    }

    /// Uses the largest value as the declared bound.
    pub fn tight(values: Vec<f64>) -> Result<Self> {
        let b = values.iter().cloned().fold(0.0, f64::max);
        Self::new(values, b)
    }

    /// Declares `f(j) <= sub_bound` for every `j >= 1`.
    pub fn with_sub_bound(mut self, sub_bound: f64) -> Result<Self> {
        if let Some(v) = self.values[1..].iter().find(|&&v| v > sub_bound) {
            return Err(Error::domain(format!(
                "value {v} exceeds the declared sub-bound {sub_bound}"
            )));
        }
        self.sub_bound = Some(sub_bound);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sub_bound(&self) -> Option<f64> {
        self.sub_bound
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `max_j f(j)`.
    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A probability vector on `{0, .., m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    /// Validates and renormalizes `probs`.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("distribution has empty support"));
        }
        if probs.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::domain("probabilities must be finite and nonnegative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {sum}")));
        }
        probs.iter_mut().for_each(|x| *x /= sum);
        Ok(DiscreteDist { probs })
    }

    /// Normalizes nonnegative weights with a positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::domain("weights must be nonnegative with positive total"));
        }
        Ok(DiscreteDist {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `E_p[f]`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, x)| p * x).sum()
    }

    /// `Var_p[f]`.
    pub fn variance(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        let v: f64 = self.probs.iter().zip(f).map(|(p, x)| p * (x - m) * (x - m)).sum();
        v.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinfResult {
    pub value: f64,
    /// Maximizer of the dual, in the unscaled range `[0, 1/(fmax - u)]`.
    pub lambda_star: f64,
    /// `E_p[((f - u) / (1 - lambda* (f - u)))^2]`.
    pub sigma_sq: f64,
}

impl KinfResult {
    const ZERO: KinfResult = KinfResult {
        value: 0.0,
        lambda_star: 0.0,
        sigma_sq: 0.0,
    };
}

/// `KL(Ber(x), Ber(y))` with `0 log 0 = 0`.
pub fn bernoulli_kl(x: f64, y: f64) -> f64 {
    fn term(a: f64, b: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    }
    (term(x, y) + term(1.0 - x, 1.0 - y)).max(0.0)
}

/// `KL(p, q)`; infinite when `p` is not absolutely continuous w.r.t. `q`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc.max(0.0)
}

/// Solves `Kinf(p, u, f)`.
///
/// Errors with [`Error::Domain`] when `u` lies outside `[0, b)` or the
/// shapes disagree, and with [`Error::Degenerate`] when `u > p f` but no
/// value of `f` exceeds `u`, so that no finite-divergence `q` exists.
pub fn kinf(p: &DiscreteDist, u: f64, f: &BoundedFn) -> Result<KinfResult> {
    if p.len() != f.len() {
        return Err(Error::domain(format!(
            "distribution has {} atoms but the function has {}",
            p.len(),
            f.len()
        )));
    }
    if !(u >= 0.0) || u >= f.bound() {
        return Err(Error::domain(format!(
            "level {u} outside [0, {})",
            f.bound()
        )));
    }

    // Atoms with p = 0 do not enter the objective.
    let (probs, values): (Vec<f64>, Vec<f64>) = p
        .probs()
        .iter()
        .zip(f.values())
        .filter(|(&pj, _)| pj > 0.0)
        .map(|(&pj, &fj)| (pj, fj))
        .unzip();
    let fmax = f.max_value();
    let pf: f64 = probs.iter().zip(&values).map(|(a, b)| a * b).sum();
    if u <= pf + SNAP_TOLERANCE * fmax.max(1.0) {
        return Ok(KinfResult::ZERO);
    }
    if u >= fmax {
        return Err(Error::Degenerate(format!(
            "no distribution on the support reaches level {u} (max f = {fmax})"
        )));
    }

    let scale = fmax - u;
    let x: Vec<f64> = values.iter().map(|&v| (v - u) / scale).collect();
    let slope = |t: f64| -> f64 {
        -probs
            .iter()
            .zip(&x)
            .map(|(&pj, &xj)| pj * xj / (1.0 - t * xj))
            .sum::<f64>()
    };

    let touches_max = x.iter().any(|&xj| xj >= 1.0);
    let t_star = if !touches_max && slope(1.0) >= 0.0 {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > BISECTION_WIDTH {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let value: f64 = probs
        .iter()
        .zip(&x)
        .map(|(&pj, &xj)| pj * (-t_star * xj).ln_1p())
        .sum();
    let lambda_star = t_star / scale;
    let sigma_sq = probs
        .iter()
        .zip(&values)
        .map(|(&pj, &v)| {
            let d = v - u;
            let z = d / (1.0 - lambda_star * d);
            pj * z * z
        })
        .sum();
    Ok(KinfResult {
        value: value.max(0.0),
        lambda_star,
        sigma_sq,
    })
}

/// Central finite difference of `u -> Kinf(p, u, f)` with step `1e-6`.
///
/// The slope equals `lambda*` for `u` strictly between `p f` and `max f`.
pub fn kinf_derivative_check(p: &DiscreteDist, u: f64, f: &BoundedFn) -> Result<f64> {
    const STEP: f64 = 1e-6;
    let up = kinf(p, u + STEP, f)?.value;
    let down = kinf(p, u - STEP, f)?.value;
    Ok((up - down) / (2.0 * STEP))
}

/// Returns `(Kinf, lambda*^2 sigma^2 (1 - lambda* (fmax - u))^2 / 2)`.
///
/// The first component always dominates the second.
pub fn kinf_quadratic_lower_bound(p: &DiscreteDist, u: f64, f: &BoundedFn) -> Result<(f64, f64)> {
    let r = kinf(p, u, f)?;
    if r.lambda_star == 0.0 {
        return Ok((r.value, 0.0));
    }
    let slack = 1.0 - r.lambda_star * (f.max_value() - u);
    Ok((
        r.value,
        0.5 * r.lambda_star * r.lambda_star * r.sigma_sq * slack * slack,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> DiscreteDist {
        DiscreteDist::new(p.to_vec()).unwrap()
    }

    fn func(f: &[f64]) -> BoundedFn {
        BoundedFn::new(f.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn bernoulli_kl_values() {
        assert_eq!(bernoulli_kl(0.5, 0.5), 0.0);
        assert_abs_diff_eq!(bernoulli_kl(0.5, 0.75), 0.14384103622589042, epsilon = 1e-15);
        assert_abs_diff_eq!(bernoulli_kl(0.0, 0.5), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(bernoulli_kl(0.5, 1.0), f64::INFINITY);
    }

    #[test]
    fn below_mean_is_zero() {
        let r = kinf(&dist(&[0.5, 0.5]), 0.3, &func(&[1.0, 0.0])).unwrap();
        assert_eq!(r, KinfResult::ZERO);
        let r = kinf(&dist(&[0.5, 0.5]), 0.5, &func(&[1.0, 0.0])).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn binary_matches_bernoulli_kl() {
        let r = kinf(&dist(&[0.5, 0.5]), 0.75, &func(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(r.value, 0.14384103622589042, epsilon = 1e-10);
        // d/du kl(0.5, u) = (u - 0.5) / (u (1 - u)).
        assert_abs_diff_eq!(r.lambda_star, 0.25 / 0.1875, epsilon = 1e-9);
    }

    #[test]
    fn binary_derivative_matches_lambda() {
        let p = dist(&[0.5, 0.5]);
        let f = func(&[1.0, 0.0]);
        let slope = kinf_derivative_check(&p, 0.75, &f).unwrap();
        assert_abs_diff_eq!(slope, kinf(&p, 0.75, &f).unwrap().lambda_star, epsilon = 1e-4);
        let near = kinf(&p, 0.5 + 1e-9, &f).unwrap();
        assert!(near.lambda_star < 1e-7);
    }

    #[test]
    fn three_atom_instance() {
        // Frozen from an independent grid minimization of KL(p, .) over {q f >= 0.8}.
        let p = dist(&[1.0 / 3.0; 3]);
        let f = func(&[1.0, 0.5, 0.0]);
        let r = kinf(&p, 0.8, &f).unwrap();
        assert_abs_diff_eq!(r.value, 0.3226075528115596, epsilon = 1e-9);
        let slope = kinf_derivative_check(&p, 0.8, &f).unwrap();
        assert_abs_diff_eq!(slope, r.lambda_star, epsilon = 1e-4);
    }

    #[test]
    fn mass_off_support_uses_boundary_multiplier() {
        // p lives on {0.5, 0}; q may also use the unweighted atom with f = 1.
        let p = dist(&[0.0, 0.5, 0.5]);
        let f = func(&[1.0, 0.5, 0.0]);
        // Below u = 1/3 the optimum ignores the unused atom: q = (0, 0.6, 0.4).
        let r = kinf(&p, 0.3, &f).unwrap();
        assert_abs_diff_eq!(r.value, 0.5 * (0.25f64 / 0.24).ln(), epsilon = 1e-10);
        // Above it the multiplier sits on the boundary: q = (0.1, 0.6, 0.3).
        let r = kinf(&p, 0.4, &f).unwrap();
        assert_abs_diff_eq!(r.value, 0.5 * (25.0f64 / 18.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.lambda_star, 1.0 / 0.6, epsilon = 1e-12);
    }

    #[test]
    fn domain_and_degenerate_errors() {
        let p = dist(&[0.5, 0.5]);
        assert!(matches!(kinf(&p, 1.0, &func(&[1.0, 0.0])), Err(Error::Domain(_))));
        assert!(matches!(kinf(&p, -0.1, &func(&[1.0, 0.0])), Err(Error::Domain(_))));
        assert!(matches!(
            kinf(&p, 0.5, &func(&[0.4, 0.4])),
            Err(Error::Degenerate(_))
        ));
        assert!(kinf(&dist(&[1.0]), 0.1, &func(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn quadratic_bound_binary() {
        let (lhs, rhs) =
            kinf_quadratic_lower_bound(&dist(&[0.5, 0.5]), 0.75, &func(&[1.0, 0.0])).unwrap();
        assert!(lhs >= rhs - 1e-12 && rhs > 0.0);
        let (lhs, rhs) =
            kinf_quadratic_lower_bound(&dist(&[0.5, 0.5]), 0.25, &func(&[1.0, 0.0])).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (2usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                0.0f64..1.0,
            )
        })
    }

    fn build(w: &[f64], f: &[f64]) -> Option<(DiscreteDist, BoundedFn)> {
        let total: f64 = w.iter().sum();
        if total <= 1e-9 {
            return None;
        }
        Some((DiscreteDist::from_weights(w).ok()?, BoundedFn::new(f.to_vec(), 1.0).ok()?))
    }

    proptest! {
        #[test]
        fn monotone_and_convex_in_level((w, f, t) in instance(), gap in 0.01f64..0.2) {
            let Some((p, f)) = build(&w, &f) else { return Ok(()) };
            let pf = p.mean(f.values());
            let top = f.max_value();
            prop_assume!(top - pf > 3.0 * gap);
            let u0 = pf + t * (top - pf - 2.0 * gap);
            let (a, b, c) = (
                kinf(&p, u0, &f).unwrap().value,
                kinf(&p, u0 + gap, &f).unwrap().value,
                kinf(&p, u0 + 2.0 * gap, &f).unwrap().value,
            );
            prop_assert!(a <= b + 1e-12 && b <= c + 1e-12);
            prop_assert!(b <= 0.5 * (a + c) + 1e-9);
        }

        #[test]
        fn dual_optimality_certificate((w, f, t) in instance()) {
            let Some((p, f)) = build(&w, &f) else { return Ok(()) };
            let pf = p.mean(f.values());
            let top = f.max_value();
            prop_assume!(top - pf > 1e-6);
            let u = pf + t * (top - pf);
            prop_assume!(u < top);
            let r = kinf(&p, u, &f).unwrap();
            let t_star = r.lambda_star * (top - u);
            let cert: f64 = p.probs().iter().zip(f.values())
                .filter(|(&pj, _)| pj > 0.0)
                .map(|(&pj, &v)| pj / (1.0 - t_star * (v - u) / (top - u)))
                .sum();
            prop_assert!(cert <= 1.0 + 1e-8, "certificate {cert}");
            prop_assert!((0.0..=1.0).contains(&t_star));
        }

        #[test]
        fn weak_duality_against_feasible_points((w, f, t) in instance(), mix in 0.0f64..1.0) {
            // Any feasible q gives an upper bound on Kinf.
            let Some((p, f)) = build(&w, &f) else { return Ok(()) };
            let pf = p.mean(f.values());
            let top = f.max_value();
            prop_assume!(top - pf > 1e-6);
            let u = pf + t * (top - pf);
            prop_assume!(u < top);
            let arg = crate::mdp::argmax(f.values());
            // Slide mass toward the top atom until the constraint binds.
            let s = (u - pf) / (top - pf);
            let s = s + (1.0 - s) * mix * 0.5;
            let q: Vec<f64> = p.probs().iter().enumerate()
                .map(|(j, &pj)| (1.0 - s) * pj + if j == arg { s } else { 0.0 })
                .collect();
            prop_assert!(kinf(&p, u, &f).unwrap().value <= kl_divergence(p.probs(), &q) + 1e-9);
        }
    }

    fn pair_instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        (2usize..8, 0.1f64..5.0).prop_flat_map(|(n, b)| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0.0f64..=b, n),
                prop::collection::vec(0.0f64..=b, n),
                Just(b),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn technical_inequalities((w, wq, f, g, b) in pair_instance()) {
            prop_assume!(w.iter().sum::<f64>() > 1e-9);
            let p = DiscreteDist::from_weights(&w).unwrap();
            let q = DiscreteDist::from_weights(&wq).unwrap();
            let kl = kl_divergence(p.probs(), q.probs());
            let (pf, qf) = (p.mean(&f), q.mean(&f));
            let (vp, vq) = (p.variance(&f), q.variance(&f));
            let tol = 1e-10 * (1.0 + b * b);
            prop_assert!(pf - qf <= (2.0 * vq * kl).sqrt() + 2.0 / 3.0 * b * kl + tol);
            // The downward deviation is controlled by the second moment under
            // q; with Var_q in its place the bound is false (see below).
            let m2q = q.mean(&f.iter().map(|x| x * x).collect::<Vec<_>>());
            prop_assert!(qf - pf <= (2.0 * m2q * kl).sqrt() + tol);
            prop_assert!(vq <= 2.0 * vp + 4.0 * b * b * kl + tol);
            prop_assert!(vp <= 2.0 * vq + 4.0 * b * b * kl + tol);
            let gap: f64 = p.probs().iter().zip(f.iter().zip(&g)).map(|(pj, (x, y))| pj * (x - y).abs()).sum();
            prop_assert!(vp <= 2.0 * p.variance(&g) + 2.0 * b * gap + tol);
            let l1: f64 = p.probs().iter().zip(q.probs()).map(|(a, c)| (a - c).abs()).sum();
            prop_assert!(vq <= vp + 3.0 * b * b * l1 + tol);
        }
    }

    #[test]
    fn downward_deviation_with_variance_fails() {
        // Counterexample to qf - pf <= sqrt(2 Var_q(f) KL(p, q)).
        let p = DiscreteDist::from_weights(&[0.5693469055232606, 0.34994876694192645]).unwrap();
        let q = DiscreteDist::from_weights(&[0.01, 0.8427457259830006]).unwrap();
        let f = [0.0, 0.0757908667149903];
        let kl = kl_divergence(p.probs(), q.probs());
        let gap = q.mean(&f) - p.mean(&f);
        assert!(gap > 2.0 * (2.0 * q.variance(&f) * kl).sqrt());
    }
}
