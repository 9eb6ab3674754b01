use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rampmerge::harness::config::ControllerKind;
use rampmerge::harness::output::{write_csv, write_json};
use rampmerge::harness::{aor, compare, objective_eval, peor, read_control_events, run_scenario, write_outputs, SimConfig};
use rampmerge::mac::Scheme;
use rampmerge::rl::{evaluate, summarize, Checkpoint, Driver, EvalSummary, Policy, Trainer};
use rampmerge::Error;

#[derive(Parser)]
#[command(name = "rampmerge", version, about = "Sidelink-coupled on-ramp merging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one coupled scenario and write its logs and summary.
    Simulate(SimulateArgs),
    /// Train the merging policy with PPO.
    Train(TrainArgs),
    /// Score a policy and the two-point baseline on held-out episodes.
    Evaluate(EvaluateArgs),
    /// Recompute AOR and PEOR from a control-event log.
    Metrics(MetricsArgs),
    /// Run both schemes over seeds and interference levels.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Standard,
    Enhanced,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Standard => Scheme::Standard,
            SchemeArg::Enhanced => Scheme::Enhanced,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Scenario configuration file (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy checkpoint; selects the learned controller.
    #[arg(long)]
    policy: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(SimConfig, Option<Policy>)> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => SimConfig::default(),
        };
        let policy = self.policy.as_deref().map(load_policy).transpose()?;
        if policy.is_some() {
            cfg.controller = ControllerKind::Rl;
        }
        Ok((cfg, policy))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of interference vehicles.
    #[arg(long)]
    interference: Option<usize>,
    /// Simulated time after warm-up, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs to run; defaults to the configured count.
    #[arg(long)]
    epochs: Option<u64>,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint written at the end and every `--save-every` epochs.
    #[arg(long, default_value = "policy.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    save_every: u64,
    /// Per-epoch reward trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    policy: PathBuf,
    /// Defaults to the configured count.
    #[arg(long)]
    episodes: Option<u64>,
    /// Write the report here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Control-event CSV written by `simulate`.
    events: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Number of seeds, starting at `--first-seed`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,20,40")]
    interference: Vec<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value = "compare.json")]
    out: PathBuf,
}

fn load_policy(path: &Path) -> anyhow::Result<Policy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Checkpoint::from_json(&text)?.policy)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<SimConfig> {
    Ok(match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SimConfig::default(),
    })
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let (mut cfg, policy) = a.common.load()?;
    if let Some(s) = a.scheme {
        cfg.scheme = s.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.interference {
        cfg.interference_vehicles = n;
    }
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    let r = run_scenario(&cfg, policy.as_ref())?;
    write_outputs(&r, &a.out)?;
    let s = &r.summary;
    println!(
        "{} seed {} interference {}: {} control ticks, {} transmissions, merges {}/{} clean, objective {:.1}",
        s.scheme.name(),
        s.seed,
        s.interference_vehicles,
        s.control_ticks,
        s.transmissions,
        s.merges.clean_success,
        s.merges.agents,
        s.objective.total
    );
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let epochs = a.epochs.unwrap_or(cfg.epochs);
    let mut t = match &a.resume {
        Some(p) => Trainer::from_checkpoint(Checkpoint::from_json(&std::fs::read_to_string(p)?)?),
        None => Trainer::new(cfg.env(), cfg.ppo(), a.seed)?,
    };
    let save = |t: &Trainer| -> anyhow::Result<()> {
        std::fs::write(&a.out, t.checkpoint().to_json()?).with_context(|| format!("writing {}", a.out.display()))
    };
    let mut trace = Vec::new();
    for _ in 0..epochs {
        let row = t.run_epoch()?;
        if a.save_every > 0 && (row.epoch + 1) % a.save_every == 0 {
            println!(
                "epoch {:6} reward {:9.2} success {:.3} collision {:.3}",
                row.epoch, row.mean_reward, row.success_rate, row.collision_rate
            );
            save(&t)?;
        }
        trace.push(row);
    }
    save(&t)?;
    if let Some(p) = &a.trace {
        write_csv(p, &trace)?;
    }
    println!("checkpoint at epoch {} written to {}", t.epoch, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ControllerReport {
    summary: EvalSummary,
    /// Per-episode objective over merging-area trajectories.
    objective: Vec<f64>,
}

#[derive(Serialize)]
struct EvaluateReport {
    policy: ControllerReport,
    two_point: ControllerReport,
    /// Episodes where the policy's objective is below the baseline's.
    policy_lower_objective: usize,
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let policy = load_policy(&a.policy)?;
    let env = cfg.env();
    let episodes = a.episodes.unwrap_or(cfg.eval_episodes);
    let dt = env.world.dt;
    let run = |driver| {
        let res = evaluate(&env, driver, episodes, cfg.gamma);
        let objective = res
            .iter()
            .map(|r| objective_eval(&r.agents.iter().map(|g| g.segment.clone()).collect::<Vec<_>>(), dt).total)
            .collect();
        ControllerReport {
            summary: summarize(&res),
            objective,
        }
    };
    let p = run(Driver::Mean(&policy));
    let b = run(Driver::TwoPoint);
    let lower = p.objective.iter().zip(&b.objective).filter(|(x, y)| x < y).count();
    for (name, r) in [("policy", &p), ("two-point", &b)] {
        let s = &r.summary;
        println!(
            "{name:10} agents {:4} clean success {:.3} collisions {:3} road violations {:3} timeouts {:3} mean reward {:9.2}",
            s.agents, s.success_rate, s.collisions, s.road_violations, s.timeouts, s.mean_reward
        );
    }
    println!("policy objective lower in {lower}/{episodes} episodes");
    if let Some(out) = &a.out {
        write_json(
            out,
            &EvaluateReport {
                policy: p,
                two_point: b,
                policy_lower_objective: lower,
            },
        )?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let events = read_control_events(&a.events)?;
    if events.is_empty() {
        bail!("{} holds no control events", a.events.display());
    }
    for (name, ths, f) in [
        ("AOR", &cfg.aoi_thresholds_ms, aor as fn(&_, f64, f64) -> Option<f64>),
        ("PEOR", &cfg.error_thresholds_m, peor),
    ] {
        println!("{name}");
        print!("{:>10}", "th \\ d");
        for d in &cfg.distances_m {
            print!("{d:>12}");
        }
        println!();
        for &t in ths {
            print!("{t:>10}");
            for &d in &cfg.distances_m {
                print!("{:>12}", fmt_rate(f(&events, t, d)));
            }
            println!();
        }
    }
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> anyhow::Result<()> {
    let (mut cfg, policy) = a.common.load()?;
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    let seeds: Vec<u64> = (a.first_seed..a.first_seed + a.seeds).collect();
    let report = compare(&cfg, &seeds, &a.interference, policy.as_ref())?;
    for row in &report.rows {
        println!(
            "interference {:3}: AOR enhanced <= standard at {}/{} points ({} strict), PEOR {}/{} ({} strict)",
            row.interference_vehicles,
            row.aor.no_worse,
            row.aor.points,
            row.aor.strictly_better,
            row.peor.no_worse,
            row.peor.points,
            row.peor.strictly_better
        );
    }
    write_json(&a.out, &report)?;
    println!("report written to {}", a.out.display());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Toml(_)) => 2,
        Some(Error::NonFinite { .. }) => 3,
        _ => 1,
    }
}

/// Joins the error chain, dropping sources whose text the outer message
/// already carries.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Compare(a) => compare_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
