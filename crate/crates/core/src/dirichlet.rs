//! Dirichlet sampling with improper parameters, Monte Carlo tails of linear
//! statistics `w f`, and closed-form tail bounds.
//!
//! A parameter vector may contain zeros; the corresponding coordinates of
//! every sample are exactly zero and the rest follow the Dirichlet law of the
//! positive sub-vector.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinf::{kinf, BoundedFn, DiscreteDist};
use crate::quad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    total: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::domain("Dirichlet parameters must be finite and nonnegative"));
        }
        let total: f64 = alpha.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("Dirichlet parameters are all zero"));
        }
        Ok(DirichletParams { alpha, total })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `alpha_bar = sum_j alpha_j`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `alpha / alpha_bar`.
    pub fn mean(&self) -> DiscreteDist {
        DiscreteDist::from_weights(&self.alpha).expect("validated at construction")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w = vec![0.0; self.alpha.len()];
        sample_into(&self.alpha, &mut w, rng);
        w
    }
}

/// Draws `ln G` for `G ~ Gamma(shape, 1)`.
///
/// Small shapes use `Gamma(shape) = Gamma(shape + 1) U^{1/shape}` evaluated in
/// log space, where the power of `U` would otherwise underflow.
#[inline]
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("positive shape")
            .sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// Writes one Dirichlet draw into `out`. `alpha` must be nonnegative with a
/// positive entry; zero entries produce exact zeros.
///
/// When every positive shape is at least one the Gamma variates are
/// normalized directly; otherwise the draw goes through log space.
pub fn sample_into<R: Rng + ?Sized>(alpha: &[f64], out: &mut [f64], rng: &mut R) {
    debug_assert_eq!(alpha.len(), out.len());
    if alpha.iter().all(|&a| a == 0.0 || a >= 1.0) {
        let mut sum = 0.0;
        for (o, &a) in out.iter_mut().zip(alpha) {
            *o = if a > 0.0 {
                Gamma::new(a, 1.0).expect("positive shape").sample(rng)
            } else {
                0.0
            };
            sum += *o;
        }
        if sum > 0.0 && sum.is_finite() {
            out.iter_mut().for_each(|o| *o /= sum);
            return;
        }
    }
    let mut top = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = if a > 0.0 {
            ln_gamma_variate(a, rng)
        } else {
            f64::NEG_INFINITY
        };
        top = top.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - top).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Monte Carlo estimate of a probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

impl TailEstimate {
    pub fn from_hits(hits: u64, n_samples: u64) -> Self {
        let estimate = hits as f64 / n_samples as f64;
        TailEstimate {
            estimate,
            stderr: (estimate * (1.0 - estimate) / n_samples as f64).sqrt(),
            n_samples,
        }
    }
}

/// Fraction of `n` draws `w ~ Dir(alpha)` with `w f >= mu`.
pub fn linear_tail_mc<R: Rng + ?Sized>(
    params: &DirichletParams,
    f: &BoundedFn,
    mu: f64,
    n: u64,
    rng: &mut R,
) -> Result<TailEstimate> {
    if n == 0 {
        return Err(Error::domain("Monte Carlo needs at least one sample"));
    }
    check_len(params, f)?;
    let mut w = vec![0.0; params.len()];
    let mut hits = 0u64;
    for _ in 0..n {
        sample_into(params.alpha(), &mut w, rng);
        let z: f64 = w.iter().zip(f.values()).map(|(a, b)| a * b).sum();
        hits += u64::from(z >= mu);
    }
    Ok(TailEstimate::from_hits(hits, n))
}

fn check_len(params: &DirichletParams, f: &BoundedFn) -> Result<()> {
    if params.len() != f.len() {
        return Err(Error::domain(format!(
            "{} parameters but the function has {} values",
            params.len(),
            f.len()
        )));
    }
    Ok(())
}

/// `exp(-alpha_bar Kinf(alpha / alpha_bar, mu, f))`, an upper bound on
/// `P[w f >= mu]`.
///
/// Levels no distribution on the support can reach give 0.
pub fn exp_upper_bound(params: &DirichletParams, f: &BoundedFn, mu: f64) -> Result<f64> {
    check_len(params, f)?;
    let p = params.mean();
    if mu <= p.mean(f.values()) {
        return Ok(1.0);
    }
    match kinf(&p, mu, f) {
        Ok(k) => Ok((-params.total() * k.value).exp()),
        Err(Error::Degenerate(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `P[g >= x]`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn log_17_16(x: f64) -> f64 {
    x.ln() / (17.0f64 / 16.0).ln()
}

fn c0_base() -> f64 {
    let k = 4.0 / (17.0f64 / 16.0).ln().sqrt() + 8.0 + 49.0 * 4.0 * 6.0f64.sqrt() / 9.0;
    k * k
}

/// `c0(eps)`, the minimum prior weight on the top atom in the Gaussian lower
/// bound.
pub fn c0_eps(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!("eps = {eps} outside (0, 1)")));
    }
    Ok(c0_base() * 2.0 / (std::f64::consts::PI * eps * eps) + log_17_16(5.0 / (32.0 * eps * eps)))
}

/// `c0`, the constant entering the prior mass `n0`.
pub fn c0_const() -> f64 {
    c0_base() * 8.0 / std::f64::consts::PI + log_17_16(20.0 / 32.0) + 1.0
}

/// `c_J = 1 / log(2 / (1 + Phi(1)))`, the per-sample constant in `J`.
pub fn cj_const() -> f64 {
    1.0 / (2.0 / (1.0 + normal_cdf(1.0))).ln()
}

/// A named precondition with its verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Precondition {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianBound {
    pub bound: f64,
    pub preconditions: Vec<Precondition>,
}

impl GaussianBound {
    pub fn preconditions_hold(&self) -> bool {
        self.preconditions.iter().all(|p| p.holds)
    }

    /// Details of every failing precondition.
    pub fn failures(&self) -> Vec<&str> {
        self.preconditions
            .iter()
            .filter(|p| !p.holds)
            .map(|p| p.detail.as_str())
            .collect()
    }
}

/// Gaussian lower bound `(1 - eps) P[g >= sqrt(2 alpha_bar Kinf(p_bar, mu, f))]`
/// on `P[w f >= mu]` for `w ~ Dir(alpha0 + 1, tail..)`.
///
/// `alpha_bar` and `p_bar` are built from `(alpha0, tail..)`, without the
/// extra unit on the first atom. The bound is only guaranteed when every
/// reported precondition holds; it is returned regardless.
pub fn gaussian_lower_bound(
    alpha0: f64,
    tail: &[f64],
    f: &BoundedFn,
    mu: f64,
    eps: f64,
) -> Result<GaussianBound> {
    let c0 = c0_eps(eps)?;
    if f.len() != tail.len() + 1 {
        return Err(Error::domain("function must have one value per parameter"));
    }
    let mut alpha = Vec::with_capacity(f.len());
    alpha.push(alpha0);
    alpha.extend_from_slice(tail);
    let params = DirichletParams::new(alpha)?;
    let total = params.total();
    let p_bar = params.mean();
    let pf = p_bar.mean(f.values());
    let top = f.bound();
    let rest_max = f.values()[1..].iter().cloned().fold(0.0, f64::max);
    let sub = f.sub_bound().unwrap_or(rest_max);

    let threshold = c0 + log_17_16(total);
    let preconditions = vec![
        Precondition {
            name: "alpha0",
            holds: alpha0 >= threshold,
            detail: if alpha0 >= threshold {
                format!("alpha0 = {alpha0} >= {threshold}")
            } else {
                format!("alpha0 below threshold: {alpha0} < {threshold}")
            },
        },
        Precondition {
            name: "alpha_bar",
            holds: total >= 2.0 * alpha0,
            detail: format!("alpha_bar = {total}, 2 alpha0 = {}", 2.0 * alpha0),
        },
        Precondition {
            name: "top_atom",
            holds: f.values()[0] == top,
            detail: format!("f(0) = {}, b_bar = {top}", f.values()[0]),
        },
        Precondition {
            name: "sub_bound",
            holds: rest_max <= sub && sub < top / 2.0,
            detail: format!("max f(1..) = {rest_max}, b = {sub}, b_bar / 2 = {}", top / 2.0),
        },
        Precondition {
            name: "level",
            holds: mu > pf && mu < top,
            detail: format!("mu = {mu}, p_bar f = {pf}, b_bar = {top}"),
        },
    ];

    let bound = if mu <= pf {
        (1.0 - eps) * 0.5
    } else if mu >= top {
        0.0
    } else {
        match kinf(&p_bar, mu, f) {
            Ok(k) => (1.0 - eps) * normal_sf((2.0 * total * k.value).sqrt()),
            Err(Error::Degenerate(_)) => 0.0,
            Err(e) => return Err(e),
        }
    };
    Ok(GaussianBound {
        bound,
        preconditions,
    })
}

/// Bernstein-type deviation level
/// `p_bar f + 2 sqrt(Var_{p_bar}(f) L / alpha_bar) + 3 b L / alpha_bar` with
/// `L = log(1/delta)`, exceeded by `w f` with probability at most `delta`.
///
/// Requires `f(0) = b`.
pub fn bernstein_threshold(params: &DirichletParams, f: &BoundedFn, delta: f64) -> Result<f64> {
    check_len(params, f)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta = {delta} outside (0, 1)")));
    }
    if f.values()[0] != f.bound() {
        return Err(Error::domain(format!(
            "f(0) = {} differs from the bound {}",
            f.values()[0],
            f.bound()
        )));
    }
    let p = params.mean();
    let l = (1.0 / delta).ln();
    let n = params.total();
    Ok(p.mean(f.values()) + 2.0 * (p.variance(f.values()) * l / n).sqrt() + 3.0 * f.bound() * l / n)
}

/// Modulus below which the density integrand is truncated.
const TRUNCATION_MODULUS: f64 = 1e-12;
/// Largest admissible truncation point, in units of `1 / b_bar`.
const MAX_TRUNCATION: f64 = 1e12;

/// Density of `Z = w f` at `u` for `w ~ Dir(alpha0 + 1, tail..)`, from its
/// Fourier representation
///
/// ```text
/// p_Z(u) = alpha_bar / (2 pi) * Integral_R (1 + i (b_bar - u) s)^{-1}
///          * Prod_j (1 + i (f(j) - u) s)^{-alpha_j} ds
/// ```
///
/// with `b_bar = f(0)` and `alpha_bar = alpha0 + sum(tail)`. The integrand at
/// `-s` is the conjugate of the integrand at `s`, so only the real part over
/// `s >= 0` is integrated and the result is real by construction.
pub fn density_at(alpha0: f64, tail: &[f64], f: &BoundedFn, u: f64) -> Result<f64> {
    if f.len() != tail.len() + 1 {
        return Err(Error::domain("function must have one value per parameter"));
    }
    let b_bar = f.values()[0];
    if f.values().iter().any(|&v| v > b_bar) {
        return Err(Error::domain("f(0) must be the largest value"));
    }
    if !(u >= 0.0 && u < b_bar) {
        return Err(Error::domain(format!("u = {u} outside [0, {b_bar})")));
    }
    let mut alpha = Vec::with_capacity(f.len());
    alpha.push(alpha0);
    alpha.extend_from_slice(tail);
    let total = DirichletParams::new(alpha.clone())?.total();

    // Terms (weight, f - u); the extra unit on the top atom is the last term.
    let mut terms: Vec<(f64, f64)> = alpha
        .iter()
        .zip(f.values())
        .filter(|(&a, &v)| a > 0.0 && v != u)
        .map(|(&a, &v)| (a, v - u))
        .collect();
    terms.push((1.0, b_bar - u));

    let log_modulus = |s: f64| -> f64 {
        terms
            .iter()
            .map(|&(a, d)| -0.5 * a * ((d * s) * (d * s)).ln_1p())
            .sum()
    };
    let integrand = |s: f64| -> f64 {
        let mut lm = 0.0;
        let mut phase = 0.0;
        for &(a, d) in &terms {
            let x = d * s;
            lm -= 0.5 * a * (x * x).ln_1p();
            phase -= a * x.atan();
        }
        lm.exp() * phase.cos()
    };

    // The modulus decreases in s, so doubling finds the truncation point.
    let unit = 1.0 / b_bar;
    let ln_target = TRUNCATION_MODULUS.ln();
    let mut edges = vec![0.0, unit];
    while log_modulus(*edges.last().unwrap()) > ln_target {
        let next = 2.0 * edges.last().unwrap();
        if next > MAX_TRUNCATION * unit {
            return Err(Error::Convergence(format!(
                "integrand modulus still above {TRUNCATION_MODULUS} at s = {next}"
            )));
        }
        edges.push(next);
    }

    let mut integral = 0.0;
    for w in edges.windows(2) {
        integral += quad::integrate(integrand, w[0], w[1], 1e-14 * unit)?;
    }
    Ok((total / std::f64::consts::PI * integral).max(0.0))
}

/// Smallest integer `alpha0` with `alpha0 >= c0(eps) + log_{17/16}(2 alpha0)`,
/// so that `(alpha0, tail)` with `sum(tail) = alpha0` meets the first two
/// preconditions of [`gaussian_lower_bound`].
pub fn min_valid_alpha0(eps: f64) -> Result<f64> {
    let c0 = c0_eps(eps)?;
    let mut a = c0.ceil();
    loop {
        let need = (c0 + log_17_16(2.0 * a)).ceil();
        if need <= a {
            return Ok(a);
        }
        a = need;
    }
}

/// Both tail bounds next to a Monte Carlo estimate, for one instance
/// `w ~ Dir(alpha0 + 1, tail..)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub alpha0: f64,
    pub tail: Vec<f64>,
    pub f: Vec<f64>,
    pub mu: f64,
    pub mc: TailEstimate,
    /// Exponential bound for the sampled parameters, so it always applies.
    pub exp_bound: f64,
    pub gaussian: GaussianBound,
}

impl BoundCheck {
    pub fn upper_ok(&self, z: f64) -> bool {
        self.mc.estimate <= self.exp_bound + z * self.mc.stderr
    }

    /// Vacuously true outside the valid regime.
    pub fn lower_ok(&self, z: f64) -> bool {
        !self.gaussian.preconditions_hold() || self.mc.estimate >= self.gaussian.bound - z * self.mc.stderr
    }
}

pub fn check_bounds<R: Rng + ?Sized>(
    alpha0: f64,
    tail: &[f64],
    f: &BoundedFn,
    mu: f64,
    eps: f64,
    n: u64,
    rng: &mut R,
) -> Result<BoundCheck> {
    let gaussian = gaussian_lower_bound(alpha0, tail, f, mu, eps)?;
    let mut alpha = Vec::with_capacity(tail.len() + 1);
    alpha.push(alpha0 + 1.0);
    alpha.extend_from_slice(tail);
    let params = DirichletParams::new(alpha)?;
    Ok(BoundCheck {
        alpha0,
        tail: tail.to_vec(),
        f: f.values().to_vec(),
        mu,
        mc: linear_tail_mc(&params, f, mu, n, rng)?,
        exp_bound: exp_upper_bound(&params, f, mu)?,
        gaussian,
    })
}
