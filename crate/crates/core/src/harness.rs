//! Seeded regret experiments.
//!
//! Every `(agent, seed)` pair is an independent task. Each episode the agent
//! plans, the policy it will follow is evaluated exactly, one trajectory is
//! simulated and the agent observes it. Regret rows are written to one CSV
//! per task; files appear under their final name only once the task is done.
//!
//! Random streams are addressed by `(seed, consumer, episode, ..)`, so the
//! environment noise in episode `t` is the same for every agent run with the
//! same seed, and results do not depend on the number of workers.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Agent, AgentSpec};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mdp::{backward_induction_optimal, policy_evaluation, simulate_with, TabularMdp, Transition};
use crate::rng::{tag, StreamKey};

/// Header of every per-run regret file.
pub const REGRET_HEADER: &str = "agent,seed,episode,episodic_regret,cumulative_regret,wallclock_ms";
/// Header of the across-seed summary file.
pub const AGGREGATE_HEADER: &str =
    "agent,episode,seeds,mean_cumulative_regret,min_cumulative_regret,max_cumulative_regret";
/// Header of verbose trajectory logs.
pub const TRAJECTORY_HEADER: &str = "episode,h,s,a,next";

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const METADATA_FILE: &str = "metadata.json";

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_eval_every() -> usize {
    1
}

/// Experiment description, read from JSON.
///
/// ```json
/// {
///   "env": "grid:5x5,H=20,eps=0.2",
///   "agents": ["opsrl:J=8,kappa=1,n0=1,rbar=2", "ucbvi-h"],
///   "episodes": 3000,
///   "seeds": [0, 1, 2, 3],
///   "out_dir": "out",
///   "eval_every": 1,
///   "verbose_log": false,
///   "workers": 4
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agents: Vec<AgentSpec>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Regret is evaluated on episodes `t` with `t % eval_every == 0`
    /// (one-based); other episodes produce no row.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Also write every transition to `<run>.traj.csv`.
    #[serde(default)]
    pub verbose_log: bool,
    /// Worker threads; defaults to the number of available cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::domain("episodes must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::domain("at least one seed is required"));
        }
        if self.agents.is_empty() {
            return Err(Error::domain("at least one agent is required"));
        }
        if self.eval_every == 0 {
            return Err(Error::domain("eval_every must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::domain("workers must be at least 1"));
        }
        let mut labels: Vec<String> = self.agents.iter().map(|a| a.to_string()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("agents must be distinct"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("seeds must be distinct"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory
    /// and worker count, which do not affect results.
    pub fn hash(&self) -> String {
        let canonical = serde_json::json!({
            "env": self.env,
            "agents": self.agents,
            "episodes": self.episodes,
            "seeds": self.seeds,
            "eval_every": self.eval_every,
            "verbose_log": self.verbose_log,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One row of a regret file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub agent: String,
    pub seed: u64,
    /// One-based episode index.
    pub episode: usize,
    pub episodic_regret: f64,
    pub cumulative_regret: f64,
    pub wallclock_ms: f64,
}

/// Result of one `(agent, seed)` task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub agent: String,
    pub seed: u64,
    pub file: PathBuf,
    pub trajectory_file: Option<PathBuf>,
    #[serde(skip)]
    pub records: Vec<RegretRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunMetadata>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub agent: String,
    pub seed: u64,
    pub file: String,
    pub trajectory_file: Option<String>,
    pub error: Option<String>,
}

/// File stem for a run, with the agent label reduced to `[A-Za-z0-9_.-]`.
pub fn run_stem(agent: &str, seed: u64) -> String {
    let clean: String = agent
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}__seed{seed}")
}

/// Runs every `(agent, seed)` pair and writes all outputs under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let mdp = cfg.env.build()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let tasks: Vec<(AgentSpec, u64)> = cfg
        .agents
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (*a, s)))
        .collect();
    let run_all = || -> Vec<Result<RunOutcome>> {
        tasks
            .par_iter()
            .map(|(agent, seed)| run_single(cfg, &mdp, agent, *seed))
            .collect()
    };
    let results = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;

    write_aggregate(&cfg.out_dir.join(AGGREGATE_FILE), &outcomes)?;
    let relative = |p: &Path| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        runs: outcomes
            .iter()
            .map(|o| RunMetadata {
                agent: o.agent.clone(),
                seed: o.seed,
                file: relative(&o.file),
                trajectory_file: o.trajectory_file.as_deref().map(relative),
                error: o.error.clone(),
            })
            .collect(),
    };
    let meta_path = cfg.out_dir.join(METADATA_FILE);
    write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(outcomes)
}

/// Runs one `(agent, seed)` task. Agent failures end the run early with a
/// final row whose regret fields are `NaN`; I/O failures are returned.
pub fn run_single(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    spec: &AgentSpec,
    seed: u64,
) -> Result<RunOutcome> {
    let label = spec.to_string();
    let stem = run_stem(&label, seed);
    let file = cfg.out_dir.join(format!("{stem}.csv"));
    let trajectory_file = cfg
        .verbose_log
        .then(|| cfg.out_dir.join(format!("{stem}.traj.csv")));

    let (_, v_star) = backward_induction_optimal(mdp);
    let s1 = mdp.initial_state();
    let optimum = v_star.get(0, s1);
    let root = StreamKey::root(seed);
    let env_key = root.child(tag::ENV);

    let mut records = Vec::new();
    let mut trajectories: Vec<Vec<Transition>> = Vec::new();
    let mut cumulative = 0.0;
    let mut error = None;

    let mut agent: Option<Box<dyn Agent>> = None;
    match spec.build(mdp, root.child(tag::AGENT), cfg.episodes) {
        Ok(a) => agent = Some(a),
        Err(e) => error = Some((0, 0.0, e.to_string())),
    }
    if let Some(agent) = agent.as_mut() {
        for t in 0..cfg.episodes {
            let clock = Instant::now();
            let episode = t + 1;
            let evaluate = episode % cfg.eval_every == 0;
            let step = (|| -> Result<Option<f64>> {
                agent.plan_before_episode(t)?;
                let regret = if evaluate {
                    let pi = agent.current_policy()?;
                    Some(optimum - policy_evaluation(mdp, &pi).get(0, s1))
                } else {
                    None
                };
                let mut rng = env_key.child(t as u64).rng();
                let trajectory = simulate_with(mdp, |h, s| agent.act(h, s), &mut rng);
                for tr in &trajectory {
                    agent.observe(tr);
                }
                if cfg.verbose_log {
                    trajectories.push(trajectory);
                }
                Ok(regret)
            })();
            let ms = clock.elapsed().as_secs_f64() * 1e3;
            match step {
                Ok(Some(regret)) => {
                    cumulative += regret;
                    records.push(RegretRecord {
                        agent: label.clone(),
                        seed,
                        episode,
                        episodic_regret: regret,
                        cumulative_regret: cumulative,
                        wallclock_ms: round_ms(ms),
                    });
                }
                Ok(None) => {}
                Err(e) => {
                    error = Some((episode, ms, e.to_string()));
                    break;
                }
            }
        }
    }
    let mut rows = records.clone();
    if let Some((episode, ms, _)) = &error {
        rows.push(RegretRecord {
            agent: label.clone(),
            seed,
            episode: *episode,
            episodic_regret: f64::NAN,
            cumulative_regret: f64::NAN,
            wallclock_ms: round_ms(*ms),
        });
    }

    write_atomic(&file, &regret_csv(&rows)?)?;
    if let Some(path) = &trajectory_file {
        write_atomic(path, &trajectory_csv(&trajectories)?)?;
    }
    Ok(RunOutcome {
        agent: label,
        seed,
        file,
        trajectory_file,
        records,
        error: error.map(|(_, _, msg)| msg),
    })
}

fn round_ms(ms: f64) -> f64 {
    (ms * 1e3).round() / 1e3
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::domain(format!("csv: {other:?}")),
    }
}

fn regret_csv(rows: &[RegretRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(REGRET_HEADER.split(',')).map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::domain(e.to_string()))
}

fn trajectory_csv(trajectories: &[Vec<Transition>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_HEADER.split(',')).map_err(csv_error)?;
    for (t, traj) in trajectories.iter().enumerate() {
        for tr in traj {
            w.write_record(&[
                (t + 1).to_string(),
                tr.h.to_string(),
                tr.s.to_string(),
                tr.a.to_string(),
                tr.next.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.into_inner().map_err(|e| Error::domain(e.to_string()))
}

/// Writes `bytes` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Across-seed summary per `(agent, episode)`, over the seeds that have a
/// row for that episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub agent: String,
    pub episode: usize,
    pub seeds: usize,
    pub mean_cumulative_regret: f64,
    pub min_cumulative_regret: f64,
    pub max_cumulative_regret: f64,
}

pub fn aggregate(outcomes: &[RunOutcome]) -> Vec<AggregateRecord> {
    use std::collections::BTreeMap;
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        let idx = match order.iter().position(|a| *a == o.agent) {
            Some(i) => i,
            None => {
                order.push(&o.agent);
                order.len() - 1
            }
        };
        for r in &o.records {
            groups.entry((idx, r.episode)).or_default().push(r.cumulative_regret);
        }
    }
    groups
        .into_iter()
        .map(|((idx, episode), values)| {
            let n = values.len();
            AggregateRecord {
                agent: order[idx].to_owned(),
                episode,
                seeds: n,
                mean_cumulative_regret: values.iter().sum::<f64>() / n as f64,
                min_cumulative_regret: values.iter().cloned().fold(f64::INFINITY, f64::min),
                max_cumulative_regret: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

fn write_aggregate(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let rows = aggregate(outcomes);
    if rows.is_empty() {
        w.write_record(AGGREGATE_HEADER.split(',')).map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_regret_csv(path: &Path) -> Result<Vec<RegretRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn read_metadata(dir: &Path) -> Result<Metadata> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a verbose trajectory log into per-episode transition lists. Episodes
/// are numbered from one and must appear in order.
pub fn read_trajectories(path: &Path) -> Result<Vec<Vec<Transition>>> {
    #[derive(Deserialize)]
    struct Row {
        episode: usize,
        h: usize,
        s: usize,
        a: usize,
        next: usize,
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let mut out: Vec<Vec<Transition>> = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(csv_error)?;
        if row.episode == 0 || row.episode < out.len() {
            return Err(Error::parse("trajectory log", &path.display().to_string(), "episodes out of order"));
        }
        while out.len() < row.episode {
            out.push(Vec::new());
        }
        out[row.episode - 1].push(Transition {
            h: row.h,
            s: row.s,
            a: row.a,
            next: row.next,
        });
    }
    Ok(out)
}
