//! Finite-horizon tabular MDPs: exact planning, exact policy evaluation and
//! episode simulation.
//!
//! Steps are indexed from `0` to `H - 1` in code; step `h` here is step
//! `h + 1` in the usual one-based notation. Value tables carry an extra
//! terminal row at index `H` that is identically zero.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums accepted at construction.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Stage-dependent tabular MDP with deterministic rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    states: usize,
    actions: usize,
    horizon: usize,
    /// Flat `(h, s, a, s')` transition tensor.
    transitions: Vec<f64>,
    /// Flat `(h, s, a)` reward tensor.
    rewards: Vec<f64>,
    initial_state: usize,
}

/// Size triple shared by every table in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Shape {
    #[inline]
    pub fn sa(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn hs(&self, h: usize, s: usize) -> usize {
        h * self.states + s
    }
}

impl TabularMdp {
    /// Builds an MDP from flat tensors, validating every invariant.
    ///
    /// Rows whose sum is within [`ROW_SUM_TOLERANCE`] of one are
    /// renormalized; anything else is rejected.
    pub fn new(
        shape: Shape,
        mut transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let Shape {
            states,
            actions,
            horizon,
        } = shape;
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(Error::InvalidModel(format!(
                "S, A and H must be positive (got S={states}, A={actions}, H={horizon})"
            )));
        }
        if initial_state >= states {
            return Err(Error::InvalidModel(format!(
                "initial state {initial_state} out of range for S={states}"
            )));
        }
        let rows = horizon * states * actions;
        if transitions.len() != rows * states {
            return Err(Error::InvalidModel(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                rows * states
            )));
        }
        if rewards.len() != rows {
            return Err(Error::InvalidModel(format!(
                "reward tensor has {} entries, expected {rows}",
                rewards.len()
            )));
        }
        if let Some((i, r)) = rewards
            .iter()
            .enumerate()
            .find(|(_, r)| !(0.0..=1.0).contains(*r))
        {
            return Err(Error::InvalidModel(format!("reward #{i} = {r} outside [0, 1]")));
        }
        for (row_idx, row) in transitions.chunks_exact_mut(states).enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "transition row {row_idx} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidModel(format!(
                    "transition row {row_idx} sums to {sum}"
                )));
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(TabularMdp {
            states,
            actions,
            horizon,
            transitions,
            rewards,
            initial_state,
        })
    }

    pub fn shape(&self) -> Shape {
        Shape {
            states: self.states,
            actions: self.actions,
            horizon: self.horizon,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Next-state distribution `p_h(. | s, a)`.
    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape().sa(h, s, a) * self.states;
        &self.transitions[start..start + self.states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.shape().sa(h, s, a)]
    }

    /// The full `(h, s, a)` reward tensor. Rewards are known to agents.
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Draws `s' ~ p_h(. | s, a)` by inverse CDF with one uniform.
    pub fn step<R: Rng + ?Sized>(&self, h: usize, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.transition_row(h, s, a), rng.random::<f64>())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MdpFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Inverse-CDF draw from a probability row given `u ~ U[0, 1)`.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// cumulative sum just below `u`.
#[inline]
pub fn sample_categorical(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// JSON layout: `{"S":..,"A":..,"H":..,"p":[h][s][a][s'],"r":[h][s][a],"s1":..}`.
#[derive(Serialize, Deserialize)]
struct MdpFile {
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    p: Vec<Vec<Vec<Vec<f64>>>>,
    r: Vec<Vec<Vec<f64>>>,
    s1: usize,
}

impl From<&TabularMdp> for MdpFile {
    fn from(m: &TabularMdp) -> Self {
        let p = (0..m.horizon)
            .map(|h| {
                (0..m.states)
                    .map(|s| {
                        (0..m.actions)
                            .map(|a| m.transition_row(h, s, a).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let r = (0..m.horizon)
            .map(|h| {
                (0..m.states)
                    .map(|s| (0..m.actions).map(|a| m.reward(h, s, a)).collect())
                    .collect()
            })
            .collect();
        MdpFile {
            states: m.states,
            actions: m.actions,
            horizon: m.horizon,
            p,
            r,
            s1: m.initial_state,
        }
    }
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        let shape = Shape {
            states: f.states,
            actions: f.actions,
            horizon: f.horizon,
        };
        let ragged = || Error::InvalidModel("ragged tensor in MDP file".into());
        if f.p.len() != f.horizon || f.r.len() != f.horizon {
            return Err(ragged());
        }
        let mut transitions = Vec::with_capacity(f.horizon * f.states * f.actions * f.states);
        let mut rewards = Vec::with_capacity(f.horizon * f.states * f.actions);
        for (ph, rh) in f.p.iter().zip(&f.r) {
            if ph.len() != f.states || rh.len() != f.states {
                return Err(ragged());
            }
            for (ps, rs) in ph.iter().zip(rh) {
                if ps.len() != f.actions || rs.len() != f.actions {
                    return Err(ragged());
                }
                for row in ps {
                    if row.len() != f.states {
                        return Err(ragged());
                    }
                    transitions.extend_from_slice(row);
                }
                rewards.extend_from_slice(rs);
            }
        }
        TabularMdp::new(shape, transitions, rewards, f.s1)
    }
}

/// Deterministic policy `pi_h(s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    states: usize,
    actions: usize,
    horizon: usize,
    table: Vec<usize>,
}

impl Policy {
    pub fn new(shape: Shape, table: Vec<usize>) -> Result<Self> {
        if table.len() != shape.horizon * shape.states {
            return Err(Error::InvalidModel(format!(
                "policy has {} entries, expected {}",
                table.len(),
                shape.horizon * shape.states
            )));
        }
        if let Some(&a) = table.iter().find(|&&a| a >= shape.actions) {
            return Err(Error::InvalidModel(format!(
                "policy action {a} out of range for A={}",
                shape.actions
            )));
        }
        Ok(Policy {
            states: shape.states,
            actions: shape.actions,
            horizon: shape.horizon,
            table,
        })
    }

    pub fn constant(shape: Shape, action: usize) -> Result<Self> {
        Self::new(shape, vec![action; shape.horizon * shape.states])
    }

    pub fn shape(&self) -> Shape {
        Shape {
            states: self.states,
            actions: self.actions,
            horizon: self.horizon,
        }
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.table[h * self.states + s]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.table
    }
}

/// `V_h(s)` for `h` in `0..=H`; the row at `H` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    states: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(states: usize, horizon: usize) -> Self {
        ValueTable {
            states,
            horizon,
            values: vec![0.0; (horizon + 1) * states],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.values[h * self.states + s]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, v: f64) {
        debug_assert!(h < self.horizon, "terminal row is fixed at zero");
        self.values[h * self.states + s] = v;
    }

    /// The row `V_h(.)`.
    #[inline]
    pub fn row(&self, h: usize) -> &[f64] {
        &self.values[h * self.states..(h + 1) * self.states]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }
}

/// `Q_h(s, a)` for `h` in `0..=H`; the slice at `H` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    shape: Shape,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(shape: Shape) -> Self {
        QTable {
            shape,
            values: vec![0.0; (shape.horizon + 1) * shape.states * shape.actions],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let mut q = Self::zeros(shape);
        let live = shape.horizon * shape.states * shape.actions;
        q.values[..live].fill(value);
        q
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[self.shape.sa(h, s, a)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
        debug_assert!(h < self.shape.horizon, "terminal slice is fixed at zero");
        let i = self.shape.sa(h, s, a);
        self.values[i] = v;
    }

    /// `Q_h(s, .)`.
    #[inline]
    pub fn actions_at(&self, h: usize, s: usize) -> &[f64] {
        let i = self.shape.sa(h, s, 0);
        &self.values[i..i + self.shape.actions]
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Greedy policy with lowest-index tie-breaking.
    pub fn greedy_policy(&self) -> Policy {
        let Shape {
            states, horizon, ..
        } = self.shape;
        let table = (0..horizon)
            .flat_map(|h| (0..states).map(move |s| (h, s)))
            .map(|(h, s)| argmax(self.actions_at(h, s)))
            .collect();
        Policy {
            states,
            actions: self.shape.actions,
            horizon,
            table,
        }
    }
}

/// Index of the first maximal entry.
#[inline]
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub(crate) fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Optimal `Q*` and `V*` by backward induction.
pub fn backward_induction_optimal(mdp: &TabularMdp) -> (QTable, ValueTable) {
    let shape = mdp.shape();
    let mut q = QTable::zeros(shape);
    let mut v = ValueTable::zeros(shape.states, shape.horizon);
    for h in (0..shape.horizon).rev() {
        for s in 0..shape.states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..shape.actions {
                let value = mdp.reward(h, s, a) + dot(mdp.transition_row(h, s, a), v.row(h + 1));
                q.set(h, s, a, value);
                best = best.max(value);
            }
            v.set(h, s, best);
        }
    }
    (q, v)
}

/// Exact `V^pi` by backward induction along `pi`.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &Policy) -> ValueTable {
    let shape = mdp.shape();
    assert_eq!(pi.shape(), shape, "policy shape does not match the MDP");
    let mut v = ValueTable::zeros(shape.states, shape.horizon);
    for h in (0..shape.horizon).rev() {
        for s in 0..shape.states {
            let a = pi.action(h, s);
            let value = mdp.reward(h, s, a) + dot(mdp.transition_row(h, s, a), v.row(h + 1));
            v.set(h, s, value);
        }
    }
    v
}

/// One `(h, s, a, s')` transition of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub next: usize,
}

/// Runs one episode of exactly `H` steps from the initial state.
pub fn simulate_episode<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi: &Policy,
    rng: &mut R,
) -> Vec<Transition> {
    simulate_with(mdp, |h, s| pi.action(h, s), rng)
}

/// Like [`simulate_episode`] but asks `act` for each action online.
pub fn simulate_with<R, F>(mdp: &TabularMdp, mut act: F, rng: &mut R) -> Vec<Transition>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize) -> usize,
{
    let mut s = mdp.initial_state;
    let mut trajectory = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let a = act(h, s);
        let next = mdp.step(h, s, a, rng);
        trajectory.push(Transition { h, s, a, next });
        s = next;
    }
    trajectory
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    /// Two states, two actions. Action 1 in state 0 moves to the goal (state
    /// 1), which self-loops and pays 1 per step.
    pub(crate) fn two_state_chain(horizon: usize) -> TabularMdp {
        let shape = Shape {
            states: 2,
            actions: 2,
            horizon,
        };
        let mut p = Vec::new();
        let mut r = Vec::new();
        for _h in 0..horizon {
            // s = 0
            p.extend_from_slice(&[1.0, 0.0]);
            p.extend_from_slice(&[0.0, 1.0]);
            r.extend_from_slice(&[0.0, 0.0]);
            // s = 1
            p.extend_from_slice(&[0.0, 1.0]);
            p.extend_from_slice(&[0.0, 1.0]);
            r.extend_from_slice(&[1.0, 1.0]);
        }
        TabularMdp::new(shape, p, r, 0).unwrap()
    }

    fn random_mdp(seed: u64, shape: Shape) -> TabularMdp {
        let mut rng = StreamKey::root(seed).rng();
        let mut p = Vec::new();
        for _ in 0..shape.horizon * shape.states * shape.actions {
            let row: Vec<f64> = (0..shape.states).map(|_| rng.random::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            p.extend(row.iter().map(|x| x / sum));
        }
        let r = (0..shape.horizon * shape.states * shape.actions)
            .map(|_| rng.random::<f64>())
            .collect();
        // Renormalized rows may drift by an ulp; construction tolerates it.
        TabularMdp::new(shape, p, r, 0).unwrap()
    }

    #[test]
    fn horizon_one_q_equals_reward() {
        let mdp = random_mdp(1, Shape { states: 3, actions: 2, horizon: 1 });
        let (q, _) = backward_induction_optimal(&mdp);
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(q.get(0, s, a), mdp.reward(0, s, a));
            }
        }
    }

    #[test]
    fn two_state_chain_value_by_hand() {
        // Move at step 1, collect at steps 2 and 3.
        let mdp = two_state_chain(3);
        let (_, v) = backward_induction_optimal(&mdp);
        assert_eq!(v.get(0, 0), 2.0);
        assert_eq!(v.get(0, 1), 3.0);
    }

    #[test]
    fn bellman_residual_and_bounds() {
        let shape = Shape { states: 4, actions: 3, horizon: 6 };
        let mdp = random_mdp(2, shape);
        let (q, v) = backward_induction_optimal(&mdp);
        for h in 0..6 {
            for s in 0..4 {
                for a in 0..3 {
                    let target = mdp.reward(h, s, a) + dot(mdp.transition_row(h, s, a), v.row(h + 1));
                    assert!((q.get(h, s, a) - target).abs() <= 1e-10);
                }
                assert!(v.get(h, s) >= 0.0 && v.get(h, s) <= (6 - h) as f64);
            }
        }
        assert!(v.row(6).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn greedy_policy_is_optimal_and_dominates() {
        let shape = Shape { states: 5, actions: 3, horizon: 4 };
        let mdp = random_mdp(3, shape);
        let (q, v_star) = backward_induction_optimal(&mdp);
        let v_greedy = policy_evaluation(&mdp, &q.greedy_policy());
        assert!((v_greedy.get(0, 0) - v_star.get(0, 0)).abs() <= 1e-9);
        for a in 0..3 {
            let v = policy_evaluation(&mdp, &Policy::constant(shape, a).unwrap());
            for h in 0..4 {
                for s in 0..5 {
                    assert!(v.get(h, s) <= v_star.get(h, s) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn horizon_one_policy_value_is_reward() {
        let shape = Shape { states: 3, actions: 2, horizon: 1 };
        let mdp = random_mdp(4, shape);
        let pi = Policy::new(shape, vec![1, 0, 1]).unwrap();
        let v = policy_evaluation(&mdp, &pi);
        for s in 0..3 {
            assert_eq!(v.get(0, s), mdp.reward(0, s, pi.action(0, s)));
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn deterministic_chain_trajectory() {
        let mdp = two_state_chain(4);
        let pi = Policy::constant(mdp.shape(), 1).unwrap();
        let traj = simulate_episode(&mdp, &pi, &mut StreamKey::root(0).rng());
        let states: Vec<usize> = traj.iter().map(|t| t.s).collect();
        assert_eq!(states, vec![0, 1, 1, 1]);
        assert_eq!(traj.len(), 4);
    }

    #[test]
    fn fixed_seed_reproduces_trajectory() {
        let mdp = random_mdp(5, Shape { states: 6, actions: 2, horizon: 10 });
        let pi = Policy::constant(mdp.shape(), 0).unwrap();
        let a = simulate_episode(&mdp, &pi, &mut StreamKey::root(11).rng());
        let b = simulate_episode(&mdp, &pi, &mut StreamKey::root(11).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_rows_and_rewards() {
        let shape = Shape { states: 2, actions: 1, horizon: 1 };
        assert!(TabularMdp::new(shape, vec![0.5, 0.6, 1.0, 0.0], vec![0.0, 0.0], 0).is_err());
        assert!(TabularMdp::new(shape, vec![1.0, 0.0, 1.0, 0.0], vec![1.5, 0.0], 0).is_err());
        assert!(TabularMdp::new(shape, vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0], 2).is_err());
        let tiny = 1.0 + 5e-13;
        let m = TabularMdp::new(shape, vec![tiny, 0.0, 1.0, 0.0], vec![0.0, 0.0], 0).unwrap();
        assert_eq!(m.transition_row(0, 0, 0)[0], 1.0);
    }

    #[test]
    fn json_golden_layout() {
        let mdp = two_state_chain(1);
        let text = mdp.to_json().unwrap();
        assert_eq!(
            text,
            r#"{"S":2,"A":2,"H":1,"p":[[[[1.0,0.0],[0.0,1.0]],[[0.0,1.0],[0.0,1.0]]]],"r":[[[0.0,0.0],[1.0,1.0]]],"s1":0}"#
        );
        assert_eq!(TabularMdp::from_json(&text).unwrap(), mdp);
    }

    #[test]
    fn categorical_inverse_cdf() {
        let row = [0.25, 0.0, 0.75];
        assert_eq!(sample_categorical(&row, 0.0), 0);
        assert_eq!(sample_categorical(&row, 0.2499), 0);
        assert_eq!(sample_categorical(&row, 0.25), 2);
        assert_eq!(sample_categorical(&row, 0.999_999_999), 2);
    }
}
