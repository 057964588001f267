//! Offline monitors for the concentration events behind the regret analysis,
//! evaluated against the true model.
//!
//! Counts are rebuilt from logged trajectories. After each episode only the
//! `(h, s, a)` pairs visited in that episode have new counts, so checking
//! those pairs covers every `(t, h, s, a)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinf::{kinf, kl_divergence, BoundedFn, DiscreteDist};
use crate::mdp::{backward_induction_optimal, Shape, TabularMdp, Transition};

/// Closed-form confidence levels for a problem of size `(S, A, H)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaThresholds {
    shape: Shape,
    delta: f64,
}

impl BetaThresholds {
    pub fn new(shape: Shape, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta = {delta} outside (0, 1)")));
        }
        Ok(BetaThresholds { shape, delta })
    }

    fn log_sah(&self) -> f64 {
        let sah = (self.shape.states * self.shape.actions * self.shape.horizon) as f64;
        (12.0 * sah / self.delta).ln()
    }

    /// `log(12 SAH / delta) + 3 log(e pi (2n + 1))`.
    pub fn beta_star(&self, n: f64) -> f64 {
        use std::f64::consts::{E, PI};
        self.log_sah() + 3.0 * (E * PI * (2.0 * n + 1.0)).ln()
    }

    /// `log(12 SAH / delta) + log(e (1 + n))`.
    pub fn beta_kl(&self, n: f64) -> f64 {
        self.log_sah() + (std::f64::consts::E * (1.0 + n)).ln()
    }

    /// `log(12 SAH / delta) + log(4 e (2n + 1))`.
    pub fn beta_conc(&self, n: f64) -> f64 {
        self.log_sah() + (4.0 * std::f64::consts::E * (2.0 * n + 1.0)).ln()
    }

    /// `log(12 SAH t / delta) + log J`.
    pub fn beta_dir(&self, t: f64, j: usize) -> f64 {
        self.log_sah() + t.ln() + (j as f64).ln()
    }

    /// `log(48 e (2t + 1) / delta)`.
    pub fn beta_var(&self, t: f64) -> f64 {
        (48.0 * std::f64::consts::E * (2.0 * t + 1.0) / self.delta).ln()
    }

    /// `log(48 / delta)`.
    pub fn beta(&self) -> f64 {
        (48.0 / self.delta).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    /// `n Kinf(p_hat, p V*, V*) <= beta*(delta, n)`.
    Kinf,
    /// `n KL(p_hat, p) <= S beta^KL(delta, n)`.
    Kl,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::Kinf => "kinf",
            EventKind::Kl => "kl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// One-based episode after which the check failed.
    pub episode: usize,
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub n: u32,
    pub statistic: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub event: EventKind,
    pub checks: u64,
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    /// Whether the event held over the whole run.
    pub fn held(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the minimum-KL event after every episode.
pub fn monitor_kinf_event(
    episodes: &[Vec<Transition>],
    mdp: &TabularMdp,
    delta: f64,
) -> Result<ViolationReport> {
    monitor(episodes, mdp, delta, EventKind::Kinf)
}

/// Checks the KL event after every episode.
pub fn monitor_kl_event(
    episodes: &[Vec<Transition>],
    mdp: &TabularMdp,
    delta: f64,
) -> Result<ViolationReport> {
    monitor(episodes, mdp, delta, EventKind::Kl)
}

fn monitor(
    episodes: &[Vec<Transition>],
    mdp: &TabularMdp,
    delta: f64,
    event: EventKind,
) -> Result<ViolationReport> {
    let shape = mdp.shape();
    let betas = BetaThresholds::new(shape, delta)?;
    let (_, v_star) = backward_induction_optimal(mdp);
    let mut counts = vec![0u32; shape.horizon * shape.states * shape.actions * shape.states];
    let mut report = ViolationReport {
        event,
        checks: 0,
        violations: Vec::new(),
    };
    let mut touched = Vec::new();
    for (t, episode) in episodes.iter().enumerate() {
        touched.clear();
        for tr in episode {
            if tr.h >= shape.horizon || tr.s >= shape.states || tr.a >= shape.actions || tr.next >= shape.states {
                return Err(Error::InvalidModel(format!(
                    "logged transition {tr:?} does not fit the model"
                )));
            }
            let i = shape.sa(tr.h, tr.s, tr.a);
            counts[i * shape.states + tr.next] += 1;
            touched.push((tr.h, tr.s, tr.a));
        }
        touched.sort_unstable();
        touched.dedup();
        for &(h, s, a) in &touched {
            let i = shape.sa(h, s, a);
            let row = &counts[i * shape.states..(i + 1) * shape.states];
            let n: u32 = row.iter().sum();
            let p_hat: Vec<f64> = row.iter().map(|&c| f64::from(c) / f64::from(n)).collect();
            let p = mdp.transition_row(h, s, a);
            let nf = f64::from(n);
            let (statistic, threshold) = match event {
                EventKind::Kinf => {
                    let value = kinf_at(&p_hat, p, v_star.row(h + 1))?;
                    (nf * value, betas.beta_star(nf))
                }
                EventKind::Kl => (
                    nf * kl_divergence(&p_hat, p),
                    shape.states as f64 * betas.beta_kl(nf),
                ),
            };
            report.checks += 1;
            if !(statistic <= threshold) {
                report.violations.push(Violation {
                    episode: t + 1,
                    h,
                    s,
                    a,
                    n,
                    statistic,
                    threshold,
                });
            }
        }
    }
    Ok(report)
}

/// `Kinf(p_hat, p v, v)`, zero when `v` is constant or `p v` is its maximum.
fn kinf_at(p_hat: &[f64], p: &[f64], v: &[f64]) -> Result<f64> {
    let top = v.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Ok(0.0);
    }
    let u: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
    if u >= top * (1.0 - 1e-12) {
        return Ok(0.0);
    }
    let f = BoundedFn::new(v.to_vec(), top)?;
    Ok(kinf(&DiscreteDist::new(p_hat.to_vec())?, u.max(0.0), &f)?.value)
}
