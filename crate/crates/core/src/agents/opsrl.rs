//! Optimistic posterior sampling: full re-planning and the lazy variant.
//!
//! The posterior over `p_h(. | s, a)` is `Dir(n_bar_h(. | s, a) / kappa)` on
//! `S ∪ {s0}`. The pseudo-state `s0` is absorbing with reward `r_bar`, so its
//! value at step `h` (zero-based) is `r_bar * (H - h)` and is never stored.

use serde::{Deserialize, Serialize};

use super::counts::PseudoCounts;
use super::Agent;
use crate::dirichlet::{c0_const, cj_const, sample_into};
use crate::error::{Error, Result};
use crate::mdp::{argmax, Policy, QTable, Shape, TabularMdp, Transition, ValueTable};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpsrlConfig {
    /// Posterior samples per `(h, s, a)`.
    pub j: usize,
    /// Posterior inflation.
    pub kappa: f64,
    /// Prior pseudo-count on `s0`.
    pub n0: f64,
    /// Reward of `s0`.
    pub r_bar: f64,
}

impl OpsrlConfig {
    /// Settings used in the grid-world experiments.
    pub const PRACTICAL: OpsrlConfig = OpsrlConfig {
        j: 8,
        kappa: 1.0,
        n0: 1.0,
        r_bar: 2.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::domain("J must be at least 1"));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::domain(format!("kappa = {} must be positive", self.kappa)));
        }
        if !(self.n0 >= 1.0) || !self.n0.is_finite() {
            return Err(Error::domain(format!("n0 = {} must be at least 1", self.n0)));
        }
        if !(self.r_bar > 1.0) || !self.r_bar.is_finite() {
            return Err(Error::domain(format!("r_bar = {} must exceed 1", self.r_bar)));
        }
        Ok(())
    }
}

/// Which logarithm sets the prior mass in [`theoretical_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PriorMassRule {
    /// `n0 = ceil(kappa (c0 + log_{17/16} T))`.
    #[default]
    Horizon,
    /// `n0 = ceil(kappa (c0 + log_{17/16} (T / kappa)))`.
    InflatedHorizon,
}

/// Parameters for which the high-probability regret guarantee holds.
pub fn theoretical_params(
    delta: f64,
    shape: Shape,
    episodes: usize,
    rule: PriorMassRule,
) -> Result<OpsrlConfig> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta = {delta} outside (0, 1)")));
    }
    if shape.states == 0 || shape.actions == 0 || shape.horizon == 0 || episodes == 0 {
        return Err(Error::domain("sizes must be positive"));
    }
    let sah = (shape.states * shape.actions * shape.horizon) as f64;
    let t = episodes as f64;
    let kappa = 2.0
        * ((12.0 * sah / delta).ln()
            + 3.0 * (std::f64::consts::E * std::f64::consts::PI * (2.0 * t + 1.0)).ln());
    let log_base = (17.0f64 / 16.0).ln();
    let horizon_term = match rule {
        PriorMassRule::Horizon => t.ln() / log_base,
        PriorMassRule::InflatedHorizon => (t / kappa).ln() / log_base,
    };
    let n0 = (kappa * (c0_const() + horizon_term)).ceil().max(1.0);
    let j = (cj_const() * (2.0 * sah * t / delta).ln()).ceil() as usize;
    Ok(OpsrlConfig {
        j: j.max(1),
        kappa,
        n0,
        r_bar: 2.0,
    })
}

/// Reusable buffers for `max_j p_j . v` over the posterior support.
#[derive(Debug, Default)]
struct Backup {
    alpha: Vec<f64>,
    values: Vec<f64>,
    w: Vec<f64>,
}

impl Backup {
    /// `max_{j <= J} p~_j . [next, pseudo_value]` with `p~_j` drawn from the
    /// inflated posterior of `(h, s, a)` using the stream `key`.
    fn optimistic(
        &mut self,
        cfg: &OpsrlConfig,
        counts: &PseudoCounts,
        (h, s, a): (usize, usize, usize),
        next: &[f64],
        pseudo_value: f64,
        key: StreamKey,
    ) -> f64 {
        self.alpha.clear();
        self.values.clear();
        let row = counts.row(h, s, a);
        for &k in counts.support(h, s, a) {
            self.alpha.push(f64::from(row[k as usize]) / cfg.kappa);
            self.values.push(next[k as usize]);
        }
        self.alpha.push(counts.n0() / cfg.kappa);
        self.values.push(pseudo_value);
        self.w.resize(self.alpha.len(), 0.0);

        if self.alpha.len() == 1 {
            return pseudo_value;
        }
        let mut rng = key.rng();
        let mut best = f64::NEG_INFINITY;
        for _ in 0..cfg.j {
            sample_into(&self.alpha, &mut self.w, &mut rng);
            let v: f64 = self.w.iter().zip(&self.values).map(|(w, v)| w * v).sum();
            best = best.max(v);
        }
        best
    }
}

/// Stream of the `J` samples at `(t, h, s, a)`.
#[inline]
fn sample_key(key: StreamKey, t: usize, h: usize, s: usize, a: usize) -> StreamKey {
    key.children(&[t as u64, h as u64, s as u64, a as u64])
}

/// OPSRL with a full optimistic backward induction before every episode.
#[derive(Debug)]
pub struct OpsrlAgent {
    cfg: OpsrlConfig,
    shape: Shape,
    rewards: Vec<f64>,
    counts: PseudoCounts,
    key: StreamKey,
    q: QTable,
    v: ValueTable,
    policy: Policy,
    backup: Backup,
}

impl OpsrlAgent {
    pub fn new(cfg: OpsrlConfig, mdp: &TabularMdp, key: StreamKey) -> Result<Self> {
        cfg.validate()?;
        let shape = mdp.shape();
        Ok(OpsrlAgent {
            cfg,
            shape,
            rewards: mdp.rewards().to_vec(),
            counts: PseudoCounts::new(shape, cfg.n0),
            key,
            q: QTable::zeros(shape),
            v: ValueTable::zeros(shape.states, shape.horizon),
            policy: Policy::constant(shape, 0)?,
            backup: Backup::default(),
        })
    }

    pub fn config(&self) -> &OpsrlConfig {
        &self.cfg
    }

    pub fn counts(&self) -> &PseudoCounts {
        &self.counts
    }

    /// `Q_bar` and `V_bar` from the latest plan.
    pub fn tables(&self) -> (&QTable, &ValueTable) {
        (&self.q, &self.v)
    }

    /// Optimistic backward induction with the samples of episode `t`.
    pub fn plan(&mut self, t: usize) {
        let Shape {
            states,
            actions,
            horizon,
        } = self.shape;
        let mut next = vec![0.0; states];
        for h in (0..horizon).rev() {
            next.copy_from_slice(self.v.row(h + 1));
            let pseudo_value = self.cfg.r_bar * (horizon - h - 1) as f64;
            for s in 0..states {
                let mut best = f64::NEG_INFINITY;
                for a in 0..actions {
                    let key = sample_key(self.key, t, h, s, a);
                    let tail =
                        self.backup
                            .optimistic(&self.cfg, &self.counts, (h, s, a), &next, pseudo_value, key);
                    let q = self.rewards[self.shape.sa(h, s, a)] + tail;
                    self.q.set(h, s, a, q);
                    best = best.max(q);
                }
                self.v.set(h, s, best);
            }
        }
        self.policy = self.q.greedy_policy();
    }
}

impl Agent for OpsrlAgent {
    fn plan_before_episode(&mut self, episode: usize) -> Result<()> {
        self.plan(episode);
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        Ok(self.policy.clone())
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.policy.action(h, s)
    }

    fn observe(&mut self, tr: &Transition) {
        self.counts.record(tr);
    }
}

/// OPSRL with one optimistic backup per visited state and a monotone
/// min-clip on the values.
///
/// The backup at `(h, s)` in episode `t` depends only on the counts at the
/// start of the episode, `V_bar_{h+1}` from the previous episode and the
/// sample streams at `(t, h, s, .)`. The greedy action at every `(h, s)` is
/// therefore fixed before the episode starts, and [`Agent::current_policy`]
/// recomputes it from the same streams without touching the tables.
#[derive(Debug)]
pub struct LazyOpsrlAgent {
    cfg: OpsrlConfig,
    shape: Shape,
    rewards: Vec<f64>,
    counts: PseudoCounts,
    key: StreamKey,
    q: QTable,
    v: ValueTable,
    episode: usize,
    backup: Backup,
    q_scratch: Vec<f64>,
    draws: u64,
}

impl LazyOpsrlAgent {
    pub fn new(cfg: OpsrlConfig, mdp: &TabularMdp, key: StreamKey) -> Result<Self> {
        cfg.validate()?;
        let shape = mdp.shape();
        let start = cfg.r_bar * shape.horizon as f64;
        let mut v = ValueTable::zeros(shape.states, shape.horizon);
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                v.set(h, s, start);
            }
        }
        Ok(LazyOpsrlAgent {
            cfg,
            shape,
            rewards: mdp.rewards().to_vec(),
            counts: PseudoCounts::new(shape, cfg.n0),
            key,
            q: QTable::filled(shape, start),
            v,
            episode: 0,
            backup: Backup::default(),
            q_scratch: vec![0.0; shape.actions],
            draws: 0,
        })
    }

    pub fn counts(&self) -> &PseudoCounts {
        &self.counts
    }

    pub fn tables(&self) -> (&QTable, &ValueTable) {
        (&self.q, &self.v)
    }

    /// Dirichlet vectors drawn by the acting path so far.
    pub fn dirichlet_draws(&self) -> u64 {
        self.draws
    }

    /// Fresh `Q_bar_h(s, .)` for the current episode, into `q_scratch`.
    fn backup_at(&mut self, h: usize, s: usize) {
        let horizon = self.shape.horizon;
        let pseudo_value = self.cfg.r_bar * (horizon - h - 1) as f64;
        for a in 0..self.shape.actions {
            let key = sample_key(self.key, self.episode, h, s, a);
            let tail = self.backup.optimistic(
                &self.cfg,
                &self.counts,
                (h, s, a),
                self.v.row(h + 1),
                pseudo_value,
                key,
            );
            self.q_scratch[a] = self.rewards[self.shape.sa(h, s, a)] + tail;
        }
    }
}

impl Agent for LazyOpsrlAgent {
    fn plan_before_episode(&mut self, episode: usize) -> Result<()> {
        self.episode = episode;
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        let Shape {
            states, horizon, ..
        } = self.shape;
        let mut table = Vec::with_capacity(horizon * states);
        for h in 0..horizon {
            for s in 0..states {
                self.backup_at(h, s);
                table.push(argmax(&self.q_scratch));
            }
        }
        Policy::new(self.shape, table)
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.backup_at(h, s);
        self.draws += (self.shape.actions * self.cfg.j) as u64;
        let mut best = f64::NEG_INFINITY;
        for (a, &q) in self.q_scratch.iter().enumerate() {
            self.q.set(h, s, a, q);
            best = best.max(q);
        }
        let clipped = best.min(self.v.get(h, s));
        self.v.set(h, s, clipped);
        argmax(&self.q_scratch)
    }

    fn observe(&mut self, tr: &Transition) {
        self.counts.record(tr);
    }
}
