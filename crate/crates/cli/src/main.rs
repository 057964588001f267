//! `opsrl` command-line driver.
//!
//! ```text
//! opsrl run --config exp.json [--workers N] [--out DIR] [overrides..]
//! opsrl bounds verify [--instances N] [--samples N] [--valid-regime]
//! opsrl diagnose --run DIR [--delta 0.1]
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use opsrl::agents::AgentSpec;
use opsrl::diagnostics::{monitor_kinf_event, monitor_kl_event, ViolationReport};
use opsrl::dirichlet::{check_bounds, min_valid_alpha0, BoundCheck};
use opsrl::envs::EnvSpec;
use opsrl::harness::{aggregate, read_metadata, read_trajectories, run_experiment, ExperimentConfig};
use opsrl::kinf::BoundedFn;
use opsrl::rng::{tag, StreamKey};

#[derive(Parser)]
#[command(name = "opsrl", version, about = "Optimistic posterior sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a regret experiment.
    Run(RunArgs),
    /// Check the Dirichlet tail bounds against Monte Carlo.
    Bounds {
        #[command(subcommand)]
        action: BoundsAction,
    },
    /// Check the concentration events on the logs of a finished run.
    Diagnose(DiagnoseArgs),
}

#[derive(Subcommand)]
enum BoundsAction {
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Environment, e.g. `grid:5x5,H=20,eps=0.2`.
    #[arg(long)]
    env: Option<EnvSpec>,
    /// Agent, repeatable; replaces the configured list.
    #[arg(long = "agent")]
    agents: Vec<AgentSpec>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Also log every transition (needed by `diagnose`).
    #[arg(long)]
    verbose_log: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Largest number of atoms besides the top one.
    #[arg(long, default_value_t = 7)]
    max_atoms: usize,
    /// Build instances that satisfy every precondition of the Gaussian bound.
    #[arg(long)]
    valid_regime: bool,
    /// Output CSV; standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Output directory of a run made with `verbose_log`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Summary CSV; standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every violation to this CSV.
    #[arg(long)]
    violations: Option<PathBuf>,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Bounds {
            action: BoundsAction::Verify(args),
        } => verify(args),
        Command::Diagnose(args) => diagnose(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn build_config(args: RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let missing = |what: &str| format!("without --config, --{what} is required");
            ExperimentConfig {
                env: args.env.clone().ok_or_else(|| missing("env"))?,
                agents: if args.agents.is_empty() {
                    return Err(missing("agent").into());
                } else {
                    args.agents.clone()
                },
                episodes: args.episodes.ok_or_else(|| missing("episodes"))?,
                seeds: if args.seeds.is_empty() { vec![0] } else { args.seeds.clone() },
                out_dir: PathBuf::from("out"),
                eval_every: 1,
                verbose_log: false,
                workers: None,
            }
        }
    };
    if let Some(env) = args.env {
        cfg.env = env;
    }
    if !args.agents.is_empty() {
        cfg.agents = args.agents;
    }
    if let Some(t) = args.episodes {
        cfg.episodes = t;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(k) = args.eval_every {
        cfg.eval_every = k;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.verbose_log |= args.verbose_log;
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> CliResult<ExitCode> {
    let cfg = build_config(args)?;
    let outcomes = run_experiment(&cfg)?;
    let summary = aggregate(&outcomes);
    let mut failed = false;
    for o in &outcomes {
        if let Some(e) = &o.error {
            failed = true;
            eprintln!("run {} seed {} failed: {e}", o.agent, o.seed);
        }
    }
    for agent in &cfg.agents {
        let label = agent.to_string();
        if let Some(last) = summary.iter().rev().find(|r| r.agent == label) {
            println!(
                "{label}: mean cumulative regret {:.3} after {} episodes over {} seeds",
                last.mean_cumulative_regret, last.episode, last.seeds
            );
        }
    }
    println!("results in {}", cfg.out_dir.display());
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn output(path: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// A random instance `(alpha0, tail, f, mu)` with `f(0) = 1`.
fn bound_instance(args: &VerifyArgs, rng: &mut impl Rng) -> CliResult<(f64, Vec<f64>, BoundedFn, f64)> {
    if args.valid_regime {
        let alpha0 = min_valid_alpha0(args.eps)?;
        let m = rng.random_range(1..=2usize);
        let split = simplex(rng, m);
        let tail: Vec<f64> = split.iter().map(|x| x * alpha0).collect();
        let mut values = vec![1.0];
        values.extend((0..m).map(|_| 0.4 * rng.random::<f64>()));
        let f = BoundedFn::new(values.clone(), 1.0)?.with_sub_bound(0.4)?;
        let total = 2.0 * alpha0;
        let mut p = vec![alpha0 / total];
        p.extend(tail.iter().map(|a| a / total));
        let mean: f64 = p.iter().zip(&values).map(|(a, b)| a * b).sum();
        let var: f64 = p.iter().zip(&values).map(|(a, b)| a * (b - mean) * (b - mean)).sum();
        let mu = mean + rng.random_range(0.0..3.0) * (var / total).sqrt();
        Ok((alpha0, tail, f, mu))
    } else {
        let m = rng.random_range(1..=args.max_atoms.max(1));
        let total = rng.random_range(2.0..200.0);
        let split = simplex(rng, m + 1);
        let alpha0 = split[0] * total;
        let tail: Vec<f64> = split[1..].iter().map(|x| x * total).collect();
        let mut values = vec![1.0];
        values.extend((0..m).map(|_| rng.random::<f64>()));
        let sampled_total = total + 1.0;
        let mean = (alpha0 + 1.0) / sampled_total
            + tail.iter().zip(&values[1..]).map(|(a, b)| a * b).sum::<f64>() / sampled_total;
        let mu = mean + rng.random_range(0.0..1.0) * (1.0 - mean);
        Ok((alpha0, tail, BoundedFn::new(values, 1.0)?, mu))
    }
}

fn simplex(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn verify(args: VerifyArgs) -> CliResult<ExitCode> {
    let mut w = output(args.out.as_deref())?;
    w.write_record([
        "instance",
        "alpha0",
        "tail",
        "f",
        "mu",
        "mc_estimate",
        "mc_stderr",
        "exp_bound",
        "gaussian_bound",
        "upper_ok",
        "lower_ok",
        "preconditions_hold",
        "failed_preconditions",
    ])?;
    let root = StreamKey::root(args.seed);
    let mut all_ok = true;
    for i in 0..args.instances {
        let mut rng = root.children(&[tag::INSTANCE, i as u64]).rng();
        let (alpha0, tail, f, mu) = bound_instance(&args, &mut rng)?;
        let mut mc = root.children(&[tag::MONTE_CARLO, i as u64]).rng();
        let c: BoundCheck = check_bounds(alpha0, &tail, &f, mu, args.eps, args.samples, &mut mc)?;
        let (upper, lower) = (c.upper_ok(3.0), c.lower_ok(3.0));
        all_ok &= upper && lower;
        let failed: Vec<&str> = c
            .gaussian
            .preconditions
            .iter()
            .filter(|p| !p.holds)
            .map(|p| p.name)
            .collect();
        w.write_record([
            i.to_string(),
            c.alpha0.to_string(),
            join(&c.tail),
            join(&c.f),
            c.mu.to_string(),
            c.mc.estimate.to_string(),
            c.mc.stderr.to_string(),
            c.exp_bound.to_string(),
            c.gaussian.bound.to_string(),
            upper.to_string(),
            lower.to_string(),
            c.gaussian.preconditions_hold().to_string(),
            failed.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn diagnose(args: DiagnoseArgs) -> CliResult<ExitCode> {
    let meta = read_metadata(&args.run)?;
    let mdp = meta.config.env.build()?;
    let mut summary = output(args.out.as_deref())?;
    summary.write_record(["agent", "seed", "event", "checks", "violations", "first_episode"])?;
    let mut detail = match &args.violations {
        Some(p) => {
            let mut w = csv::Writer::from_path(p)?;
            w.write_record(["agent", "seed", "event", "episode", "h", "s", "a", "n", "statistic", "threshold"])?;
            Some(w)
        }
        None => None,
    };
    let mut any = false;
    for run in &meta.runs {
        let Some(traj) = &run.trajectory_file else {
            return Err(format!(
                "run {} seed {} has no trajectory log; rerun with --verbose-log",
                run.agent, run.seed
            )
            .into());
        };
        let log = read_trajectories(&args.run.join(traj))?;
        let reports: [ViolationReport; 2] = [
            monitor_kinf_event(&log, &mdp, args.delta)?,
            monitor_kl_event(&log, &mdp, args.delta)?,
        ];
        for r in &reports {
            any |= !r.held();
            summary.write_record([
                run.agent.clone(),
                run.seed.to_string(),
                r.event.label().to_owned(),
                r.checks.to_string(),
                r.violations.len().to_string(),
                r.violations.first().map(|v| v.episode.to_string()).unwrap_or_default(),
            ])?;
            if let Some(w) = detail.as_mut() {
                for v in &r.violations {
                    w.write_record([
                        run.agent.clone(),
                        run.seed.to_string(),
                        r.event.label().to_owned(),
                        v.episode.to_string(),
                        v.h.to_string(),
                        v.s.to_string(),
                        v.a.to_string(),
                        v.n.to_string(),
                        v.statistic.to_string(),
                        v.threshold.to_string(),
                    ])?;
                }
            }
        }
    }
    summary.flush()?;
    if let Some(mut w) = detail {
        w.flush()?;
    }
    if any {
        eprintln!("some events failed; see the violations column");
    }
    Ok(ExitCode::SUCCESS)
}
