//! Reference players with known regret: the optimal policy and a uniformly
//! random one.

use rand::Rng;

use super::Agent;
use crate::error::Result;
use crate::mdp::{backward_induction_optimal, Policy, Shape, TabularMdp, Transition};
use crate::rng::StreamKey;

/// Plays `greedy(Q*)` every episode.
#[derive(Debug)]
pub struct OptimalAgent {
    policy: Policy,
}

impl OptimalAgent {
    pub fn new(mdp: &TabularMdp) -> Self {
        OptimalAgent {
            policy: backward_induction_optimal(mdp).0.greedy_policy(),
        }
    }
}

impl Agent for OptimalAgent {
    fn plan_before_episode(&mut self, _episode: usize) -> Result<()> {
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        Ok(self.policy.clone())
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.policy.action(h, s)
    }

    fn observe(&mut self, _tr: &Transition) {}
}

/// Plays a fresh deterministic policy, uniform over all policies, each
/// episode. Its expected value is that of the uniform stochastic policy.
#[derive(Debug)]
pub struct RandomAgent {
    shape: Shape,
    key: StreamKey,
    policy: Policy,
}

impl RandomAgent {
    pub fn new(mdp: &TabularMdp, key: StreamKey) -> Result<Self> {
        Ok(RandomAgent {
            shape: mdp.shape(),
            key,
            policy: Policy::constant(mdp.shape(), 0)?,
        })
    }
}

impl Agent for RandomAgent {
    fn plan_before_episode(&mut self, episode: usize) -> Result<()> {
        let mut rng = self.key.child(episode as u64).rng();
        let table = (0..self.shape.horizon * self.shape.states)
            .map(|_| rng.random_range(0..self.shape.actions))
            .collect();
        self.policy = Policy::new(self.shape, table)?;
        Ok(())
    }

    fn current_policy(&mut self) -> Result<Policy> {
        Ok(self.policy.clone())
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        self.policy.action(h, s)
    }

    fn observe(&mut self, _tr: &Transition) {}
}
