//! Benchmark environments.
//!
//! The only family is a noisy grid-world. Cells are addressed one-based as
//! `(i, j)` with `i` the column and `j` the row; the state index of a cell is
//! `(j - 1) * width + (i - 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Shape, TabularMdp};

/// Grid actions, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Left, Move::Right, Move::Up, Move::Down];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    /// Probability that the chosen move is replaced by a uniformly random one.
    pub eps: f64,
    pub reward_cell: (usize, usize),
    pub start_cell: (usize, usize),
}

impl GridSpec {
    /// Reward in the far corner, start in `(1, 1)`.
    pub fn corner_to_corner(width: usize, height: usize, horizon: usize, eps: f64) -> Self {
        GridSpec {
            width,
            height,
            horizon,
            eps,
            reward_cell: (width, height),
            start_cell: (1, 1),
        }
    }

    /// The 10x10, `H = 50`, `eps = 0.2` benchmark.
    pub fn benchmark() -> Self {
        Self::corner_to_corner(10, 10, 50, 0.2)
    }

    pub fn states(&self) -> usize {
        self.width * self.height
    }

    pub fn state_of(&self, (i, j): (usize, usize)) -> usize {
        (j - 1) * self.width + (i - 1)
    }

    pub fn cell_of(&self, state: usize) -> (usize, usize) {
        (state % self.width + 1, state / self.width + 1)
    }

    /// Cell reached by a move; moves off the grid stay in place.
    pub fn neighbor(&self, (i, j): (usize, usize), m: Move) -> (usize, usize) {
        match m {
            Move::Left if i > 1 => (i - 1, j),
            Move::Right if i < self.width => (i + 1, j),
            Move::Up if j < self.height => (i, j + 1),
            Move::Down if j > 1 => (i, j - 1),
            _ => (i, j),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidModel("grid has no cells".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidModel("grid horizon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::InvalidModel(format!("noise {} outside [0, 1]", self.eps)));
        }
        for (name, (i, j)) in [("reward", self.reward_cell), ("start", self.start_cell)] {
            if i == 0 || j == 0 || i > self.width || j > self.height {
                return Err(Error::InvalidModel(format!(
                    "{name} cell ({i}, {j}) outside the {}x{} grid",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Builds the grid-world MDP.
///
/// With probability `1 - eps` the chosen move is executed; with probability
/// `eps` one of the four moves is drawn uniformly instead. Reward is 1 for
/// every action taken in the reward cell, which is not absorbing.
pub fn build_gridworld(spec: &GridSpec) -> Result<TabularMdp> {
    spec.validate()?;
    let states = spec.states();
    let shape = Shape {
        states,
        actions: 4,
        horizon: spec.horizon,
    };
    let reward_state = spec.state_of(spec.reward_cell);

    let mut stage_p = vec![0.0; states * 4 * states];
    let mut stage_r = vec![0.0; states * 4];
    for s in 0..states {
        let cell = spec.cell_of(s);
        for m in Move::ALL {
            let a = m as usize;
            let row = &mut stage_p[(s * 4 + a) * states..(s * 4 + a + 1) * states];
            row[spec.state_of(spec.neighbor(cell, m))] += 1.0 - spec.eps;
            for d in Move::ALL {
                row[spec.state_of(spec.neighbor(cell, d))] += spec.eps / 4.0;
            }
            stage_r[s * 4 + a] = if s == reward_state { 1.0 } else { 0.0 };
        }
    }

    let transitions = stage_p.repeat(spec.horizon);
    let rewards = stage_r.repeat(spec.horizon);
    TabularMdp::new(shape, transitions, rewards, spec.state_of(spec.start_cell))
}

/// Environment selector accepted by the CLI and experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnvSpec {
    Grid(GridSpec),
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            EnvSpec::Grid(g) => build_gridworld(g),
        }
    }
}

/// Parses `grid:WxH,H=..,eps=..[,reward=I:J][,start=I:J]`.
impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(input: &str) -> Result<Self> {
        let bad = |reason: &str| Error::parse("environment", input, reason);
        let rest = input
            .strip_prefix("grid:")
            .ok_or_else(|| bad("only the `grid:` family is available"))?;
        let mut parts = rest.split(',');
        let dims = parts.next().unwrap_or_default();
        let (w, h) = dims
            .split_once('x')
            .ok_or_else(|| bad("expected WIDTHxHEIGHT"))?;
        let width: usize = w.trim().parse().map_err(|_| bad("bad width"))?;
        let height: usize = h.trim().parse().map_err(|_| bad("bad height"))?;

        let mut horizon = None;
        let mut eps = 0.0;
        let mut reward_cell = (width, height);
        let mut start_cell = (1, 1);
        let cell = |v: &str| -> Result<(usize, usize)> {
            let (i, j) = v.split_once(':').ok_or_else(|| bad("cells are written I:J"))?;
            Ok((
                i.parse().map_err(|_| bad("bad cell column"))?,
                j.parse().map_err(|_| bad("bad cell row"))?,
            ))
        };
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match k.trim() {
                "H" => horizon = Some(v.parse().map_err(|_| bad("bad horizon"))?),
                "eps" => eps = v.parse().map_err(|_| bad("bad eps"))?,
                "reward" => reward_cell = cell(v)?,
                "start" => start_cell = cell(v)?,
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let spec = GridSpec {
            width,
            height,
            horizon: horizon.ok_or_else(|| bad("missing H="))?,
            eps,
            reward_cell,
            start_cell,
        };
        spec.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(EnvSpec::Grid(spec))
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::Grid(g) => {
                write!(f, "grid:{}x{},H={},eps={}", g.width, g.height, g.horizon, g.eps)?;
                if g.reward_cell != (g.width, g.height) {
                    write!(f, ",reward={}:{}", g.reward_cell.0, g.reward_cell.1)?;
                }
                if g.start_cell != (1, 1) {
                    write!(f, ",start={}:{}", g.start_cell.0, g.start_cell.1)?;
                }
                Ok(())
            }
        }
    }
}

impl TryFrom<String> for EnvSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnvSpec> for String {
    fn from(e: EnvSpec) -> String {
        e.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{backward_induction_optimal, policy_evaluation, Policy};
    use crate::rng::StreamKey;

    #[test]
    fn benchmark_shape() {
        let mdp = build_gridworld(&GridSpec::benchmark()).unwrap();
        assert_eq!((mdp.states(), mdp.actions(), mdp.horizon()), (100, 4, 50));
        assert_eq!(mdp.initial_state(), 0);
    }

    #[test]
    fn noiseless_rows_are_one_hot() {
        let mdp = build_gridworld(&GridSpec::corner_to_corner(4, 3, 2, 0.0)).unwrap();
        for h in 0..2 {
            for s in 0..12 {
                for a in 0..4 {
                    let row = mdp.transition_row(h, s, a);
                    assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
                    assert_eq!(row.iter().filter(|&&x| x == 0.0).count(), 11);
                }
            }
        }
    }

    #[test]
    fn fully_noisy_rows_match_neighbor_enumeration() {
        let spec = GridSpec::corner_to_corner(3, 4, 1, 1.0);
        let mdp = build_gridworld(&spec).unwrap();
        for s in 0..12 {
            let (i, j) = spec.cell_of(s);
            // Independent enumeration: four candidate cells, clamped to the grid.
            let mut expected = vec![0.0; 12];
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, 1), (0, -1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                let target = if ni < 1 || nj < 1 || ni > 3 || nj > 4 {
                    s
                } else {
                    (nj as usize - 1) * 3 + (ni as usize - 1)
                };
                expected[target] += 0.25;
            }
            for a in 0..4 {
                for (x, y) in mdp.transition_row(0, s, a).iter().zip(&expected) {
                    assert!((x - y).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn noiseless_benchmark_optimal_value() {
        // 18 moves to reach (10, 10), then reward on each of the remaining 32 steps.
        let mut spec = GridSpec::benchmark();
        spec.eps = 0.0;
        let mdp = build_gridworld(&spec).unwrap();
        let (_, v) = backward_induction_optimal(&mdp);
        assert_eq!(v.get(0, mdp.initial_state()), 32.0);
    }

    #[test]
    fn fully_noisy_values_do_not_depend_on_policy() {
        let mdp = build_gridworld(&GridSpec::corner_to_corner(3, 3, 6, 1.0)).unwrap();
        let base = policy_evaluation(&mdp, &Policy::constant(mdp.shape(), 0).unwrap());
        for a in 1..4 {
            let v = policy_evaluation(&mdp, &Policy::constant(mdp.shape(), a).unwrap());
            for h in 0..6 {
                for s in 0..9 {
                    assert!((v.get(h, s) - base.get(h, s)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn reachable_reward_has_positive_value() {
        for eps in [0.0, 0.3, 0.9] {
            let mdp = build_gridworld(&GridSpec::corner_to_corner(4, 4, 7, eps)).unwrap();
            let (_, v) = backward_induction_optimal(&mdp);
            assert!(v.get(0, 0) > 0.0, "eps = {eps}");
        }
    }

    #[test]
    fn empirical_next_state_frequencies() {
        let spec = GridSpec::corner_to_corner(5, 5, 3, 0.2);
        let mdp = build_gridworld(&spec).unwrap();
        let (h, s, a) = (1, spec.state_of((1, 3)), Move::Right as usize);
        let n = 100_000;
        let mut rng = StreamKey::root(9).rng();
        let mut hits = [0usize; 25];
        for _ in 0..n {
            hits[mdp.step(h, s, a, &mut rng)] += 1;
        }
        for (k, &p) in mdp.transition_row(h, s, a).iter().enumerate() {
            let freq = hits[k] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se + 1e-12, "state {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn spec_string_round_trip() {
        let e: EnvSpec = "grid:5x5,H=20,eps=0.2".parse().unwrap();
        assert_eq!(e, EnvSpec::Grid(GridSpec::corner_to_corner(5, 5, 20, 0.2)));
        assert_eq!(e.to_string(), "grid:5x5,H=20,eps=0.2");
        let custom: EnvSpec = "grid:4x3,H=9,eps=0,reward=2:2,start=4:1".parse().unwrap();
        assert_eq!(custom.to_string().parse::<EnvSpec>().unwrap(), custom);
        assert!("grid:0x3,H=2".parse::<EnvSpec>().is_err());
        assert!("grid:3x3".parse::<EnvSpec>().is_err());
        assert!("chain:3".parse::<EnvSpec>().is_err());
    }
}
