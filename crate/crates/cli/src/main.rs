//! Command-line harness: seeded training runs, greedy evaluation, rollout
//! dumps, and reward-curve plots over the block-construction tasks.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use construct::graph_net::load_checkpoint;
use construct::harness::{
    evaluate, read_trace_csv, render_reward_curve_svg, rollout_dump, run_experiment, summarize,
    write_eval_csv, EvalSpec, RunConfig,
};
use construct::hierarchy::AgentMode;
use construct::learning::episode_seed;
use construct::tasks::{Scale, TaskKind};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "construct",
    about = "Hierarchical scene-graph agents for 2D block construction",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a low-level policy on a pretraining task distribution.
    Pretrain(RunArgs),
    /// Train/evaluate an agent mode on a transfer task.
    Transfer(RunArgs),
    /// Greedy evaluation of a composition on a fixed seed set.
    Evaluate(EvalArgs),
    /// Dump one greedy episode as per-step scene records.
    Rollout(RolloutArgs),
    /// Render a reward-curve SVG from trace CSVs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Task name, e.g. edit-pretrain-connect, delete-transfer, combined-transfer.
    #[arg(long)]
    task: Option<String>,
    /// Agent mode (transfer only), e.g. direct-model-free, neural-hrl-frozen-low.
    #[arg(long)]
    mode: Option<String>,
    /// Scene scale: full or reduced.
    #[arg(long)]
    scale: Option<String>,
    /// Comma-separated run seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Learner-step budget per seed.
    #[arg(long)]
    budget: Option<u64>,
    /// MCTS simulations per acting step (0 disables planning).
    #[arg(long)]
    planning_budget: Option<u32>,
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Checkpoint of a pretrained low-level policy.
    #[arg(long)]
    pretrained_low: Option<PathBuf>,
    /// Run seeds concurrently (per-seed pipelines stay single-threaded).
    #[arg(long)]
    parallel: bool,
}

impl RunArgs {
    fn build(&self, default_mode: Option<AgentMode>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_file_text(&text)?;
        }
        if let Some(mode) = default_mode {
            cfg.mode = mode;
        }
        if let Some(t) = &self.task {
            cfg.set("task", t)?;
        }
        if let Some(m) = &self.mode {
            cfg.set("mode", m)?;
        }
        if let Some(s) = &self.scale {
            cfg.set("scale", s)?;
        }
        if let Some(s) = &self.seeds {
            cfg.set("seeds", s)?;
        }
        if let Some(b) = self.budget {
            cfg.train.budget = b;
        }
        if let Some(p) = self.planning_budget {
            cfg.train.planning_budget = p;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(p) = &self.pretrained_low {
            cfg.pretrained_low = Some(p.clone());
        }
        if self.parallel {
            cfg.parallel = true;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "reduced")]
    scale: String,
    /// Controller: heuristic, neural, or none.
    #[arg(long, default_value = "none")]
    controller: String,
    /// Controller checkpoint (for --controller neural).
    #[arg(long)]
    controller_ckpt: Option<PathBuf>,
    /// Low-level policy: "oracle" or a checkpoint path.
    #[arg(long, default_value = "oracle")]
    low: String,
    #[arg(long, default_value_t = 0)]
    planning_budget: u32,
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    /// Base seed for the evaluation episode set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    task: String,
    #[arg(long, default_value = "reduced")]
    scale: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "none")]
    controller: String,
    #[arg(long)]
    controller_ckpt: Option<PathBuf>,
    #[arg(long, default_value = "oracle")]
    low: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Per-seed trace CSVs to aggregate.
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bin_size: u64,
    #[arg(long, default_value = "reward-curve.svg")]
    out: PathBuf,
    #[arg(long, default_value = "episode reward")]
    title: String,
}

fn parse_task(name: &str) -> Result<TaskKind> {
    TaskKind::from_name(name).ok_or_else(|| {
        anyhow!(
            "unknown task `{name}`; expected one of: {}",
            TaskKind::ALL.map(|t| t.name()).join(", ")
        )
    })
}

fn parse_scale(name: &str) -> Result<Scale> {
    Scale::from_name(name).ok_or_else(|| anyhow!("unknown scale `{name}` (full or reduced)"))
}

fn build_spec(
    controller: &str,
    controller_ckpt: &Option<PathBuf>,
    low: &str,
    planning_budget: u32,
) -> Result<EvalSpec> {
    let low_params = match low {
        "oracle" => None,
        path => Some(load_checkpoint(std::path::Path::new(path))?),
    };
    let (mode, controller_params) = match controller {
        "none" => (
            if planning_budget > 0 {
                AgentMode::DirectModelBased
            } else {
                AgentMode::DirectModelFree
            },
            None,
        ),
        "heuristic" => (AgentMode::HeuristicHrlFinetune, None),
        "neural" => {
            let path = controller_ckpt
                .as_ref()
                .ok_or_else(|| anyhow!("--controller neural requires --controller-ckpt"))?;
            let params = load_checkpoint(path)?;
            let mode = if planning_budget > 0 {
                AgentMode::NeuralHrlPlanning
            } else {
                AgentMode::NeuralHrlFrozenLow
            };
            (mode, Some(params))
        }
        other => bail!("unknown controller `{other}` (heuristic, neural, none)"),
    };
    let label = format!("{}+{}", controller, if low == "oracle" { "oracle" } else { "neural" });
    Ok(EvalSpec { label, mode, low: low_params, controller: controller_params, planning_budget })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Pretrain(args) => {
            let cfg = args.build(Some(AgentMode::DirectModelFree))?;
            let out = run_experiment(&cfg)?;
            println!("task: {} mode: {}", cfg.task.name(), cfg.mode.name());
            for p in &out.checkpoint_paths {
                println!("checkpoint: {}", p.display());
            }
            println!("summary: {}", out.summary_path.display());
            println!("eval: {}", out.eval_path.display());
        }
        Command::Transfer(args) => {
            if args.mode.is_none() && args.config.is_none() {
                bail!("transfer requires --mode (or a config file setting it)");
            }
            let cfg = args.build(None)?;
            let out = run_experiment(&cfg)?;
            println!("task: {} mode: {}", cfg.task.name(), cfg.mode.name());
            for p in &out.trace_paths {
                println!("trace: {}", p.display());
            }
            println!("summary: {}", out.summary_path.display());
            println!("eval: {}", out.eval_path.display());
        }
        Command::Evaluate(args) => {
            let task = parse_task(&args.task)?;
            let scale = parse_scale(&args.scale)?;
            let spec =
                build_spec(&args.controller, &args.controller_ckpt, &args.low, args.planning_budget)?;
            let seeds: Vec<u64> =
                (0..args.episodes as u64).map(|i| episode_seed(args.seed, i)).collect();
            let rows = evaluate(&[spec], task, scale, &seeds)?;
            let csv = write_eval_csv(&rows);
            match &args.out {
                Some(path) => std::fs::write(path, &csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Rollout(args) => {
            let task = parse_task(&args.task)?;
            let scale = parse_scale(&args.scale)?;
            let spec = build_spec(&args.controller, &args.controller_ckpt, &args.low, 0)?;
            let dump = rollout_dump(task, scale, args.seed, &spec)?;
            match &args.out {
                Some(path) => std::fs::write(path, &dump)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{dump}"),
            }
        }
        Command::Plot(args) => {
            let mut traces = Vec::new();
            for path in &args.traces {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                traces.push(read_trace_csv(&text)?);
            }
            let rows = summarize(&traces, args.bin_size);
            let svg = render_reward_curve_svg(&rows, &args.title);
            std::fs::write(&args.out, svg)
                .with_context(|| format!("writing {}", args.out.display()))?;
            println!("plot: {}", args.out.display());
        }
    }
    Ok(())
}
