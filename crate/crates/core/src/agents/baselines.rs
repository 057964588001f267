//! PSRL, UCBVI with Hoeffding or Bernstein bonuses, and RLSVI.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::counts::PseudoCounts;
use super::Agent;
use crate::dirichlet::sample_into;
use crate::error::Result;
use crate::mdp::{Policy, QTable, Shape, TabularMdp, Transition, ValueTable};
use crate::rng::StreamKey;

/// State shared by the model-based baselines: counts over the real states
/// and the current greedy policy.
#[derive(Debug)]
struct Model {
    shape: Shape,
    rewards: Vec<f64>,
    counts: PseudoCounts,
    q: QTable,
    v: ValueTable,
    policy: Policy,
}

impl Model {
    fn new(mdp: &TabularMdp) -> Result<Self> {
        let shape = mdp.shape();
        Ok(Model {
            shape,
            rewards: mdp.rewards().to_vec(),
            counts: PseudoCounts::new(shape, 0.0),
            q: QTable::zeros(shape),
            v: ValueTable::zeros(shape.states, shape.horizon),
            policy: Policy::constant(shape, 0)?,
        })
    }

    #[inline]
    fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.shape.sa(h, s, a)]
    }

    /// Backward induction where `backup(model, h, s, a, next)` gives `Q_h(s, a)`.
    fn plan<F>(&mut self, mut backup: F)
    where
        F: FnMut(&Model, usize, usize, usize, &[f64]) -> f64,
    {
        let Shape {
            states,
            actions,
            horizon,
        } = self.shape;
        let mut next = vec![0.0; states];
        for h in (0..horizon).rev() {
            next.copy_from_slice(self.v.row(h + 1));
            for s in 0..states {
                let mut best = f64::NEG_INFINITY;
                for a in 0..actions {
                    let q = backup(self, h, s, a, &next);
                    self.q.set(h, s, a, q);
                    best = best.max(q);
                }
                self.v.set(h, s, best);
            }
        }
        self.policy = self.q.greedy_policy();
    }
}

/// Hoeffding-style width `min(sqrt(range^2 / (4 n)), range)`, with `range`
/// the number of remaining steps. Shared by the UCBVI-H bonus and the RLSVI
/// noise scale.
#[inline]
pub fn hoeffding_width(range: f64, n: u32) -> f64 {
    if n == 0 {
        return range;
    }
    (range * range / (4.0 * f64::from(n))).sqrt().min(range)
}

/// Bernstein-style width `min(sqrt(var / n) + range / n, range)`.
#[inline]
pub fn bernstein_width(range: f64, variance: f64, n: u32) -> f64 {
    if n == 0 {
        return range;
    }
    let n = f64::from(n);
    ((variance / n).sqrt() + range / n).min(range)
}

/// Posterior sampling with a `Dir(1/S, .., 1/S)` prior and one sample per
/// `(h, s, a)`.
#[derive(Debug)]
pub struct PsrlAgent {
    model: Model,
    key: StreamKey,
    alpha: Vec<f64>,
    w: Vec<f64>,
}

impl PsrlAgent {
    pub fn new(mdp: &TabularMdp, key: StreamKey) -> Result<Self> {
        let states = mdp.states();
        Ok(PsrlAgent {
            model: Model::new(mdp)?,
            key,
            alpha: vec![0.0; states],
            w: vec![0.0; states],
        })
    }

    pub fn tables(&self) -> (&QTable, &ValueTable) {
        (&self.model.q, &self.model.v)
    }
}

impl Agent for PsrlAgent {
    fn plan_before_episode(&mut self, episode: usize) -> Result<()> {
        let key = self.key;
        let prior = 1.0 / self.model.shape.states as f64;
        let (alpha, w) = (&mut self.alpha, &mut self.w);
        self.model.plan(|m, h, s, a, next| {
            for (x, &c) in alpha.iter_mut().zip(m.counts.row(h, s, a)) {
                *x = prior + f64::from(c);
            }
            let mut rng = key
                .children(&[episode as u64, h as u64, s as u64, a as u64])
                .rng();
            sample_into(alpha, w, &mut rng);
            m.reward(h, s, a) + w.iter().zip(next).map(|(p, v)| p * v).sum::<f64>()
        });
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        Ok(self.model.policy.clone())
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.model.policy.action(h, s)
    }

    fn observe(&mut self, tr: &Transition) {
        self.model.counts.record(tr);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BonusKind {
    Hoeffding,
    Bernstein,
}

/// UCBVI on the empirical model with clipped bonuses; `Q_h` is capped at
/// the number of remaining steps.
#[derive(Debug)]
pub struct UcbviAgent {
    model: Model,
    kind: BonusKind,
}

impl UcbviAgent {
    pub fn new(mdp: &TabularMdp, kind: BonusKind) -> Result<Self> {
        Ok(UcbviAgent {
            model: Model::new(mdp)?,
            kind,
        })
    }

    pub fn tables(&self) -> (&QTable, &ValueTable) {
        (&self.model.q, &self.model.v)
    }
}

impl Agent for UcbviAgent {
    fn plan_before_episode(&mut self, _episode: usize) -> Result<()> {
        let kind = self.kind;
        let horizon = self.model.shape.horizon;
        self.model.plan(|m, h, s, a, next| {
            let range = (horizon - h) as f64;
            let n = m.counts.visits(h, s, a);
            let bonus = match kind {
                BonusKind::Hoeffding => hoeffding_width(range, n),
                BonusKind::Bernstein => {
                    bernstein_width(range, m.counts.empirical_variance(h, s, a, next), n)
                }
            };
            (m.reward(h, s, a) + m.counts.empirical_dot(h, s, a, next) + bonus).min(range)
        });
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        Ok(self.model.policy.clone())
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.model.policy.action(h, s)
    }

    fn observe(&mut self, tr: &Transition) {
        self.model.counts.record(tr);
    }
}

/// Randomized value iteration: empirical planning with Gaussian reward
/// perturbations of scale [`hoeffding_width`], clipped to `[0, H - h]`.
#[derive(Debug)]
pub struct RlsviAgent {
    model: Model,
    key: StreamKey,
}

impl RlsviAgent {
    pub fn new(mdp: &TabularMdp, key: StreamKey) -> Result<Self> {
        Ok(RlsviAgent {
            model: Model::new(mdp)?,
            key,
        })
    }

    pub fn tables(&self) -> (&QTable, &ValueTable) {
        (&self.model.q, &self.model.v)
    }
}

impl Agent for RlsviAgent {
    fn plan_before_episode(&mut self, episode: usize) -> Result<()> {
        let key = self.key;
        let horizon = self.model.shape.horizon;
        self.model.plan(|m, h, s, a, next| {
            let range = (horizon - h) as f64;
            let sigma = hoeffding_width(range, m.counts.visits(h, s, a));
            let mut rng = key
                .children(&[episode as u64, h as u64, s as u64, a as u64])
                .rng();
            let noise = Normal::new(0.0, sigma).expect("finite scale").sample(&mut rng);
            let q = m.reward(h, s, a) + noise + m.counts.empirical_dot(h, s, a, next);
            q.clamp(0.0, range)
        });
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        Ok(self.model.policy.clone())
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.model.policy.action(h, s)
    }

    fn observe(&mut self, tr: &Transition) {
        self.model.counts.record(tr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_gridworld, GridSpec};
    use crate::mdp::backward_induction_optimal;

    #[test]
    fn width_formulas() {
        assert_eq!(hoeffding_width(3.0, 0), 3.0);
        assert_eq!(hoeffding_width(3.0, 4), 0.75);
        assert!(hoeffding_width(3.0, 1_000_000_000) < 1e-4);
        assert_eq!(bernstein_width(3.0, 0.5, 0), 3.0);
        assert_eq!(bernstein_width(3.0, 1.0, 4), 0.5 + 0.75);
        assert_eq!(bernstein_width(3.0, 100.0, 1), 3.0);
    }

    /// Agent whose counts follow the true kernel in exact proportion.
    fn saturate(mdp: &TabularMdp, per_pair: f64, mut observe: impl FnMut(&Transition)) {
        let shape = mdp.shape();
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    for (next, &p) in mdp.transition_row(h, s, a).iter().enumerate() {
                        for _ in 0..(p * per_pair).round() as usize {
                            observe(&Transition { h, s, a, next });
                        }
                    }
                }
            }
        }
    }

    fn assert_close(q: &QTable, q_star: &QTable, tol: f64) {
        let shape = q.shape();
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    let d = (q.get(h, s, a) - q_star.get(h, s, a)).abs();
                    assert!(d <= tol, "({h}, {s}, {a}): {d}");
                }
            }
        }
    }

    #[test]
    fn saturated_baselines_converge_to_true_plan() {
        let mdp = build_gridworld(&GridSpec::corner_to_corner(3, 3, 4, 0.2)).unwrap();
        let (q_star, _) = backward_induction_optimal(&mdp);
        let n = 400_000.0;

        let mut psrl = PsrlAgent::new(&mdp, StreamKey::root(1)).unwrap();
        saturate(&mdp, n, |tr| psrl.observe(tr));
        psrl.plan_before_episode(0).unwrap();
        assert_close(psrl.tables().0, &q_star, 0.03);

        let mut rlsvi = RlsviAgent::new(&mdp, StreamKey::root(2)).unwrap();
        saturate(&mdp, n, |tr| rlsvi.observe(tr));
        rlsvi.plan_before_episode(0).unwrap();
        assert_close(rlsvi.tables().0, &q_star, 0.03);

        for kind in [BonusKind::Hoeffding, BonusKind::Bernstein] {
            let mut ucb = UcbviAgent::new(&mdp, kind).unwrap();
            saturate(&mdp, n, |tr| ucb.observe(tr));
            ucb.plan_before_episode(0).unwrap();
            assert_close(ucb.tables().0, &q_star, 0.03);
        }
    }

    #[test]
    fn unvisited_ucbvi_is_clamped_to_range() {
        let mdp = build_gridworld(&GridSpec::corner_to_corner(2, 2, 3, 0.0)).unwrap();
        let mut ucb = UcbviAgent::new(&mdp, BonusKind::Hoeffding).unwrap();
        ucb.plan_before_episode(0).unwrap();
        let (q, _) = ucb.tables();
        for h in 0..3 {
            assert_eq!(q.get(h, 0, 0), (3 - h) as f64);
        }
    }

    #[test]
    fn rlsvi_noise_is_reproducible() {
        let mdp = build_gridworld(&GridSpec::corner_to_corner(3, 3, 4, 0.2)).unwrap();
        let plan = |seed| {
            let mut a = RlsviAgent::new(&mdp, StreamKey::root(seed)).unwrap();
            a.observe(&Transition { h: 0, s: 0, a: 1, next: 1 });
            a.plan_before_episode(3).unwrap();
            a.tables().0.clone()
        };
        assert_eq!(plan(7), plan(7));
        assert_ne!(plan(7), plan(8));
    }
}
