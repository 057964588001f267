//! Learning agents behind one episodic interface.
//!
//! Each episode the harness calls [`Agent::plan_before_episode`], asks for
//! the policy to be evaluated with [`Agent::current_policy`], then alternates
//! [`Agent::act`] and [`Agent::observe`] for `H` steps. Rewards are known to
//! every agent; only transitions are learned.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp, Transition};
use crate::rng::StreamKey;

mod baselines;
mod counts;
mod opsrl;
mod reference;

pub use baselines::{
    bernstein_width, hoeffding_width, BonusKind, PsrlAgent, RlsviAgent, UcbviAgent,
};
pub use counts::PseudoCounts;
pub use opsrl::{
    theoretical_params, LazyOpsrlAgent, OpsrlAgent, OpsrlConfig, PriorMassRule,
};
pub use reference::{OptimalAgent, RandomAgent};

pub trait Agent: Send {
    /// Prepares episode `episode` (zero-based).
    fn plan_before_episode(&mut self, episode: usize) -> Result<()>;

    /// The deterministic policy the agent follows in the current episode.
    fn current_policy(&mut self) -> Result<Policy>;

    fn act(&mut self, h: usize, s: usize) -> usize;

    fn observe(&mut self, tr: &Transition);
}

/// How an OPSRL agent obtains its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OpsrlParams {
    Fixed(OpsrlConfig),
    /// [`theoretical_params`] for the run's horizon `T`.
    Theory { delta: f64, rule: PriorMassRule },
}

/// Agent selector, written as in `opsrl:J=8,kappa=1,n0=1,rbar=2`,
/// `opsrl-lazy:theory,delta=0.1`, `psrl`, `ucbvi-h`, `ucbvi-b`, `rlsvi`,
/// `optimal` or `random`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AgentSpec {
    Opsrl { params: OpsrlParams, lazy: bool },
    Psrl,
    Ucbvi(BonusKind),
    Rlsvi,
    Optimal,
    Random,
}

impl AgentSpec {
    /// Instantiates the agent for `mdp`. `episodes` is the run length `T`,
    /// used only by theory-driven parameters.
    pub fn build(&self, mdp: &TabularMdp, key: StreamKey, episodes: usize) -> Result<Box<dyn Agent>> {
        Ok(match *self {
            AgentSpec::Opsrl { params, lazy } => {
                let cfg = match params {
                    OpsrlParams::Fixed(cfg) => cfg,
                    OpsrlParams::Theory { delta, rule } => {
                        theoretical_params(delta, mdp.shape(), episodes, rule)?
                    }
                };
                if lazy {
                    Box::new(LazyOpsrlAgent::new(cfg, mdp, key)?)
                } else {
                    Box::new(OpsrlAgent::new(cfg, mdp, key)?)
                }
            }
            AgentSpec::Psrl => Box::new(PsrlAgent::new(mdp, key)?),
            AgentSpec::Ucbvi(kind) => Box::new(UcbviAgent::new(mdp, kind)?),
            AgentSpec::Rlsvi => Box::new(RlsviAgent::new(mdp, key)?),
            AgentSpec::Optimal => Box::new(OptimalAgent::new(mdp)),
            AgentSpec::Random => Box::new(RandomAgent::new(mdp, key)?),
        })
    }
}

impl FromStr for AgentSpec {
    type Err = Error;

    fn from_str(input: &str) -> Result<Self> {
        let bad = |reason: &str| Error::parse("agent", input, reason);
        let (family, args) = match input.split_once(':') {
            Some((f, a)) => (f.trim(), Some(a)),
            None => (input.trim(), None),
        };
        let simple = |spec: AgentSpec| match args {
            None => Ok(spec),
            Some(_) => Err(bad("this agent takes no parameters")),
        };
        match family {
            "opsrl" | "opsrl-lazy" => {
                let lazy = family == "opsrl-lazy";
                let params = parse_opsrl_args(args.unwrap_or(""), &bad)?;
                Ok(AgentSpec::Opsrl { params, lazy })
            }
            "psrl" => simple(AgentSpec::Psrl),
            "ucbvi-h" => simple(AgentSpec::Ucbvi(BonusKind::Hoeffding)),
            "ucbvi-b" => simple(AgentSpec::Ucbvi(BonusKind::Bernstein)),
            "rlsvi" => simple(AgentSpec::Rlsvi),
            "optimal" => simple(AgentSpec::Optimal),
            "random" => simple(AgentSpec::Random),
            _ => Err(bad("unknown agent family")),
        }
    }
}

fn parse_opsrl_args(args: &str, bad: &dyn Fn(&str) -> Error) -> Result<OpsrlParams> {
    let mut cfg = OpsrlConfig::PRACTICAL;
    let mut theory = false;
    let mut delta = None;
    let mut rule = PriorMassRule::Horizon;
    let num = |v: &str, name: &str| -> Result<f64> {
        v.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("bad value for {name}")))
    };
    for item in args.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        if item == "theory" {
            theory = true;
            continue;
        }
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| bad("expected key=value"))?;
        match k.trim() {
            "J" => cfg.j = v.trim().parse().map_err(|_| bad("bad value for J"))?,
            "kappa" => cfg.kappa = num(v, "kappa")?,
            "n0" => cfg.n0 = num(v, "n0")?,
            "rbar" => cfg.r_bar = num(v, "rbar")?,
            "delta" => delta = Some(num(v, "delta")?),
            "n0rule" => {
                rule = match v.trim() {
                    "horizon" => PriorMassRule::Horizon,
                    "inflated" => PriorMassRule::InflatedHorizon,
                    _ => return Err(bad("n0rule is `horizon` or `inflated`")),
                }
            }
            other => return Err(bad(&format!("unknown key `{other}`"))),
        }
    }
    if theory {
        let delta = delta.ok_or_else(|| bad("theory parameters need delta="))?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(bad("delta must lie in (0, 1)"));
        }
        Ok(OpsrlParams::Theory { delta, rule })
    } else {
        if delta.is_some() || rule != PriorMassRule::Horizon {
            return Err(bad("delta and n0rule only apply with `theory`"));
        }
        cfg.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(OpsrlParams::Fixed(cfg))
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::Opsrl { params, lazy } => {
                f.write_str(if *lazy { "opsrl-lazy:" } else { "opsrl:" })?;
                match params {
                    OpsrlParams::Fixed(c) => write!(
                        f,
                        "J={},kappa={},n0={},rbar={}",
                        c.j, c.kappa, c.n0, c.r_bar
                    ),
                    OpsrlParams::Theory { delta, rule } => {
                        write!(f, "theory,delta={delta}")?;
                        if *rule == PriorMassRule::InflatedHorizon {
                            f.write_str(",n0rule=inflated")?;
                        }
                        Ok(())
                    }
                }
            }
            AgentSpec::Psrl => f.write_str("psrl"),
            AgentSpec::Ucbvi(BonusKind::Hoeffding) => f.write_str("ucbvi-h"),
            AgentSpec::Ucbvi(BonusKind::Bernstein) => f.write_str("ucbvi-b"),
            AgentSpec::Rlsvi => f.write_str("rlsvi"),
            AgentSpec::Optimal => f.write_str("optimal"),
            AgentSpec::Random => f.write_str("random"),
        }
    }
}

impl TryFrom<String> for AgentSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AgentSpec> for String {
    fn from(a: AgentSpec) -> String {
        a.to_string()
    }
}
