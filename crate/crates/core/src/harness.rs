//! Experiment orchestration: seeded runs of the agent modes, CSV metrics
//! with binned summaries, greedy evaluation, and the scripted oracle
//! low-level policy used to test controllers without any learning.

use crate::actions;
use crate::error::{Error, Result};
use crate::geom::Box2;
use crate::graph_net::{
    forward, load_checkpoint, masked_argmax, save_checkpoint, GraphNetParams,
};
use crate::heuristics::{obstacle_layer, target_filled};
use crate::hierarchy::{
    finetune_low_level, pretrain_low_level, train_controller, AgentMode, ControllerEnv,
    GreedyNeuralLow, LowLevelPolicy, ModifiedObsEnv,
};
use crate::learning::{
    episode_seed, ConstructionEnv, Environment, EpisodeRecord, TrainConfig, TrainResult,
};
use crate::mcts::mcts_search;
use crate::physics::{covered_length, drop_block, BlockShape, SettleResult, World};
use crate::scene::{
    write_records, LowLevelAction, ObjectKind, SceneGraph, SceneNode, LOW_LEVEL_OFFSETS,
};
use crate::tasks::{layer_y, Scale, TaskKind, COVER_FRACTION, FILL_OVERLAP};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// --- the scripted oracle --------------------------------------------------------------

/// Rebuild a simulation world from an observation so drops can be previewed.
/// Injected nodes (controller-added targets) come along for free.
pub fn graph_to_world(g: &SceneGraph) -> World {
    let scene_width = g
        .nodes_of_kind(ObjectKind::Floor)
        .next()
        .map_or(16.0, |f| f.width);
    let mut world = World::new(scene_width);
    for n in &g.nodes {
        match n.kind {
            ObjectKind::Obstacle => world.obstacles.push(n.bbox()),
            ObjectKind::Target => world.targets.push(n.bbox()),
            ObjectKind::PlacedBlock => world
                .placed
                .push(crate::physics::PlacedBlock { bbox: n.bbox(), sticky: n.sticky }),
            _ => {}
        }
    }
    world
}

fn offset_value(anchor_w: f64, picked_w: f64, idx: usize) -> f64 {
    crate::physics::placement_offset(anchor_w, picked_w, idx)
}

/// Offset indices ordered center-out (7, 6, 8, 5, 9, ...).
fn center_out() -> impl Iterator<Item = usize> {
    (0..LOW_LEVEL_OFFSETS).map(|k| {
        let step = k.div_ceil(2);
        if k % 2 == 1 {
            7 - step
        } else {
            7 + step
        }
    })
}

struct Candidate {
    action: LowLevelAction,
    rested: Box2,
}

/// Preview a drop of `picked` anchored on `anchor`; `None` unless it rests.
fn preview(
    world: &World,
    picked: &SceneNode,
    anchor: &SceneNode,
    idx: usize,
) -> Option<Candidate> {
    let x = anchor.x + offset_value(anchor.width, picked.width, idx);
    let shape = BlockShape { width: picked.width, height: picked.height };
    let (_, settle) = drop_block(world, shape, x, false);
    match settle {
        SettleResult::Rested { x, y } => Some(Candidate {
            action: LowLevelAction {
                picked: picked.id,
                anchor: anchor.id,
                offset_index: idx,
                sticky: false,
            },
            rested: Box2::new(x, y, picked.width, picked.height),
        }),
        _ => None,
    }
}

fn palette_sorted(g: &SceneGraph) -> Vec<&SceneNode> {
    let mut blocks: Vec<&SceneNode> = g.nodes_of_kind(ObjectKind::AvailableBlock).collect();
    blocks.sort_by(|a, b| a.width.total_cmp(&b.width).then(a.id.cmp(&b.id)));
    blocks.dedup_by(|a, b| (a.width - b.width).abs() < 1e-9);
    blocks
}

/// Connect a goal target: first try drops whose resting box contains the
/// target's center, then scaffold upward under the center. Smallest block
/// first, smallest lateral shift first.
fn connect_target(world: &World, g: &SceneGraph, goal: &SceneNode) -> Option<LowLevelAction> {
    let palette = palette_sorted(g);
    for picked in &palette {
        for idx in center_out() {
            if let Some(c) = preview(world, picked, goal, idx) {
                if c.rested.contains_point(goal.x, goal.y) {
                    return Some(c.action);
                }
            }
        }
    }
    // Scaffold: raise the column under the target center without overshooting.
    let mut best: Option<Candidate> = None;
    for picked in &palette {
        for idx in center_out() {
            if let Some(c) = preview(world, picked, goal, idx) {
                let productive = c.rested.x_interval().contains(goal.x)
                    && c.rested.top() <= goal.y
                    && best.as_ref().is_none_or(|b| c.rested.top() > b.rested.top());
                if productive {
                    best = Some(c);
                }
            }
        }
    }
    best.map(|c| c.action)
}

/// One step of covering an obstacle from above: prefer the bridge placement
/// with the largest coverage gain; otherwise raise a support tower beside the
/// obstacle within bridging reach.
fn cover_obstacle(world: &World, g: &SceneGraph, ob: &SceneNode) -> Option<LowLevelAction> {
    let placed = world.placed_boxes();
    let before = covered_length(&ob.bbox(), &placed);
    let anchors: Vec<&SceneNode> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.kind, ObjectKind::PlacedBlock | ObjectKind::Target))
        .collect();
    let palette = palette_sorted(g);

    // Bridges: any resting placement that covers more of the obstacle.
    let mut best: Option<(f64, Candidate)> = None;
    for picked in palette.iter().rev() {
        // widest first: better bridges
        for anchor in &anchors {
            for idx in center_out() {
                if let Some(c) = preview(world, picked, anchor, idx) {
                    if c.rested.bottom() < ob.bbox().top() {
                        continue;
                    }
                    let mut after_boxes = placed.clone();
                    after_boxes.push(c.rested);
                    let gain = covered_length(&ob.bbox(), &after_boxes) - before;
                    if gain > 1e-9 && best.as_ref().is_none_or(|(g0, _)| gain > *g0) {
                        best = Some((gain, c));
                    }
                }
            }
        }
    }
    if let Some((_, c)) = best {
        return Some(c.action);
    }

    // Tower: medium blocks beside the obstacle, inside the window from which
    // a large bridge can still both rest on the tower and span the slab.
    let scene_w = world.scene_width;
    let layer = obstacle_layer(ob);
    let tower_top_limit = layer_y(layer + 1) + 1e-9;
    let side = if ob.x >= scene_w / 2.0 { -1.0 } else { 1.0 };
    let windows = [side, -side].map(|s| {
        let near = ob.width / 2.0 + 1.05 + 0.1;
        (ob.x + s * 3.4, ob.x + s * near, s)
    });
    let medium = palette.iter().find(|p| (p.width - 2.1).abs() < 1e-9)?;
    let floor = g.nodes_of_kind(ObjectKind::Floor).next()?;
    let mut tower_anchors: Vec<&SceneNode> = vec![floor];
    tower_anchors.extend(anchors.iter().copied());
    let mut best_tower: Option<Candidate> = None;
    for (far, near, _s) in windows {
        let lo = far.min(near);
        let hi = far.max(near);
        if hi < 0.3 || lo > scene_w - 0.3 {
            continue;
        }
        for anchor in &tower_anchors {
            for idx in 0..LOW_LEVEL_OFFSETS {
                if let Some(c) = preview(world, medium, anchor, idx) {
                    if c.rested.top() > tower_top_limit
                        || c.rested.x < lo
                        || c.rested.x > hi
                    {
                        continue;
                    }
                    let better = match &best_tower {
                        None => true,
                        Some(b) => {
                            let (bt, ct) = (b.rested.top(), c.rested.top());
                            ct > bt + 1e-9
                                || ((ct - bt).abs() <= 1e-9
                                    && (c.rested.x - ob.x).abs() < (b.rested.x - ob.x).abs())
                        }
                    };
                    if better {
                        best_tower = Some(c);
                    }
                }
            }
        }
        if best_tower.is_some() {
            break;
        }
    }
    best_tower.map(|c| c.action)
}

/// Fill silhouettes bottom-up: drop a same-width block straight onto the
/// lowest unfilled target that accepts one.
fn fill_targets(world: &World, g: &SceneGraph) -> Option<LowLevelAction> {
    let mut unfilled: Vec<&SceneNode> = g
        .nodes_of_kind(ObjectKind::Target)
        .filter(|t| !target_filled(g, t))
        .collect();
    unfilled.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)).then(a.id.cmp(&b.id)));
    for target in unfilled {
        let Some(picked) = g
            .nodes_of_kind(ObjectKind::AvailableBlock)
            .find(|p| (p.width - target.width).abs() < 1e-9)
        else {
            continue;
        };
        let tb = target.bbox();
        for idx in center_out() {
            if let Some(c) = preview(world, picked, target, idx) {
                if c.rested.intersection_area(&tb) / tb.area() >= FILL_OVERLAP {
                    return Some(c.action);
                }
            }
        }
    }
    None
}

/// Park a block at the scene corner: deterministic, reward-free, safe.
fn corner_placement(g: &SceneGraph) -> Result<LowLevelAction> {
    let picked = g
        .nodes_of_kind(ObjectKind::AvailableBlock)
        .next()
        .ok_or_else(|| Error::Contract("graph has no palette".into()))?;
    let floor = g
        .nodes_of_kind(ObjectKind::Floor)
        .next()
        .ok_or_else(|| Error::Contract("graph has no floor".into()))?;
    Ok(LowLevelAction { picked: picked.id, anchor: floor.id, offset_index: 0, sticky: false })
}

/// Scripted stand-in for a converged low-level policy.
///
/// Plans one placement by previewing drops in the settling model:
/// - an active target is connected (scaffolding under it as needed);
/// - an active obstacle is covered from above via side towers and bridges;
/// - otherwise a lone goal target (the addition pretraining shape) is
///   connected, then its obstacle's remaining cover is completed;
/// - otherwise unfilled silhouettes are filled bottom-up;
/// - with nothing actionable, a block is parked at the scene corner.
pub fn oracle_low_level_policy(g: &SceneGraph) -> Result<LowLevelAction> {
    let world = graph_to_world(g);
    let active = g.nodes.iter().find(|n| n.active);

    if let Some(goal) = active.filter(|n| n.kind == ObjectKind::Target) {
        if !crate::heuristics::point_connected(g, goal.x, goal.y) {
            if let Some(action) = connect_target(&world, g, goal) {
                return Ok(action);
            }
        }
        return corner_placement(g);
    }
    if let Some(ob) = active.filter(|n| n.kind == ObjectKind::Obstacle) {
        if let Some(action) = cover_obstacle(&world, g, ob) {
            return Ok(action);
        }
        return corner_placement(g);
    }

    let targets: Vec<&SceneNode> = g.nodes_of_kind(ObjectKind::Target).collect();
    if targets.len() == 1 && !g.nodes_of_kind(ObjectKind::Obstacle).next().is_none() {
        // Addition-style scene: one goal target near an obstacle.
        let goal = targets[0];
        if !crate::heuristics::point_connected(g, goal.x, goal.y) {
            if let Some(action) = connect_target(&world, g, goal) {
                return Ok(action);
            }
        } else {
            // Goal reached: finish covering the obstacle underneath it.
            let under = g
                .nodes_of_kind(ObjectKind::Obstacle)
                .filter(|ob| {
                    ob.bbox().x_interval().touches(&goal.bbox().x_interval())
                })
                .min_by(|a, b| {
                    (a.x - goal.x).abs().total_cmp(&(b.x - goal.x).abs()).then(a.id.cmp(&b.id))
                });
            if let Some(ob) = under {
                let cov = covered_length(&ob.bbox(), &world.placed_boxes());
                if cov < COVER_FRACTION * ob.width {
                    if let Some(action) = cover_obstacle(&world, g, ob) {
                        return Ok(action);
                    }
                }
            }
        }
        return corner_placement(g);
    }
    if !targets.is_empty() {
        if let Some(action) = fill_targets(&world, g) {
            return Ok(action);
        }
    }
    corner_placement(g)
}

/// [`LowLevelPolicy`] wrapper around the scripted oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleLowLevel;

impl LowLevelPolicy for OracleLowLevel {
    fn act(&mut self, observation: &SceneGraph) -> Result<LowLevelAction> {
        oracle_low_level_policy(observation)
    }
}

// --- greedy evaluation ------------------------------------------------------------------

/// How an evaluation rollout chooses actions in its environment's space.
pub enum Actor<'a> {
    Greedy(&'a GraphNetParams),
    Planning { params: &'a GraphNetParams, budget: u32, uct_c: f64, gamma: f64 },
    Oracle,
}

/// One greedy episode; returns (reward, reward fraction).
pub fn greedy_rollout<E: Environment>(env: &mut E, actor: &Actor, seed: u64) -> Result<(f64, f64)> {
    env.reset(seed)?;
    let max_reward = env.max_reward();
    let mut total = 0.0;
    while !env.is_terminal() {
        let action = match actor {
            Actor::Greedy(params) => {
                let q = forward(params, env.observation())?.flatten();
                masked_argmax(&q, &env.valid_mask())
                    .ok_or_else(|| Error::Contract("no valid action".into()))?
            }
            Actor::Planning { params, budget, uct_c, gamma } => {
                let evaluate = |g: &SceneGraph| forward(params, g).map(|q| q.flatten());
                mcts_search(env, &evaluate, *budget, *uct_c, *gamma)?.chosen
            }
            Actor::Oracle => {
                let a = oracle_low_level_policy(env.observation())?;
                actions::encode_low_level(env.observation(), &a)?
            }
        };
        total += env.step(action)?.reward;
    }
    let fraction = if max_reward > 0.0 { total / max_reward } else { 0.0 };
    Ok((total, fraction))
}

/// A named agent composition to evaluate.
pub struct EvalSpec {
    pub label: String,
    pub mode: AgentMode,
    /// Low-level checkpoint, where the mode needs one. `None` selects the
    /// scripted oracle for hierarchical modes.
    pub low: Option<GraphNetParams>,
    /// Controller checkpoint for the neural HRL modes.
    pub controller: Option<GraphNetParams>,
    pub planning_budget: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub task: TaskKind,
    pub episodes: usize,
    pub mean_reward: f64,
    pub median_reward: f64,
    pub mean_fraction: f64,
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Greedy rollouts of each spec over a fixed seed set.
pub fn evaluate(
    specs: &[EvalSpec],
    task: TaskKind,
    scale: Scale,
    seeds: &[u64],
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut rewards = Vec::with_capacity(seeds.len());
        let mut fractions = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let (r, f) = eval_episode(spec, task, scale, seed)?;
            rewards.push(r);
            fractions.push(f);
        }
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let mean_fraction = fractions.iter().sum::<f64>() / fractions.len() as f64;
        rows.push(EvalRow {
            label: spec.label.clone(),
            task,
            episodes: seeds.len(),
            mean_reward: mean,
            median_reward: median(&mut rewards),
            mean_fraction,
        });
    }
    Ok(rows)
}

fn require_low(spec: &EvalSpec) -> Result<&GraphNetParams> {
    spec.low
        .as_ref()
        .ok_or_else(|| Error::MissingCheckpoint(spec.mode.name().into()))
}

fn eval_episode(spec: &EvalSpec, task: TaskKind, scale: Scale, seed: u64) -> Result<(f64, f64)> {
    match spec.mode {
        AgentMode::ZeroShotPretrained | AgentMode::DirectModelFree => {
            let mut env = ConstructionEnv::new(task, scale);
            match &spec.low {
                Some(p) => greedy_rollout(&mut env, &Actor::Greedy(p), seed),
                None => greedy_rollout(&mut env, &Actor::Oracle, seed),
            }
        }
        AgentMode::DirectModelBased => {
            let params = require_low(spec)?;
            let mut env = ConstructionEnv::new(task, scale);
            let actor = Actor::Planning {
                params,
                budget: spec.planning_budget,
                uct_c: 2.0,
                gamma: 0.98,
            };
            greedy_rollout(&mut env, &actor, seed)
        }
        AgentMode::HeuristicHrlFinetune => {
            let mut env = ModifiedObsEnv::new(task, scale)?;
            match &spec.low {
                Some(p) => greedy_rollout(&mut env, &Actor::Greedy(p), seed),
                None => greedy_rollout(&mut env, &Actor::Oracle, seed),
            }
        }
        AgentMode::NeuralHrlFrozenLow | AgentMode::NeuralHrlPlanning => {
            let controller = spec
                .controller
                .as_ref()
                .ok_or_else(|| Error::MissingCheckpoint(spec.mode.name().into()))?;
            let low = GreedyNeuralLow { params: require_low(spec)?.clone() };
            let mut env = ControllerEnv::new(task, scale, low);
            let actor = if spec.mode == AgentMode::NeuralHrlPlanning {
                Actor::Planning {
                    params: controller,
                    budget: spec.planning_budget,
                    uct_c: 2.0,
                    gamma: 0.98,
                }
            } else {
                Actor::Greedy(controller)
            };
            greedy_rollout(&mut env, &actor, seed)
        }
    }
}

// --- metrics files ---------------------------------------------------------------------

pub const TRACE_HEADER: &str = "step,episode,reward,fraction,loss,epsilon";

pub fn write_trace_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.learner_step, r.episode, r.reward, r.reward_fraction, r.loss, r.epsilon
        );
    }
    out
}

pub fn read_trace_csv(text: &str) -> Result<Vec<EpisodeRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => return Err(Error::Config(format!("bad trace header: {other:?}"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Config(format!("trace line {}: wrong arity", i + 2)));
        }
        let bad = |what: &str| Error::Config(format!("trace line {}: bad {what}", i + 2));
        records.push(EpisodeRecord {
            learner_step: fields[0].parse().map_err(|_| bad("step"))?,
            episode: fields[1].parse().map_err(|_| bad("episode"))?,
            reward: fields[2].parse().map_err(|_| bad("reward"))?,
            reward_fraction: fields[3].parse().map_err(|_| bad("fraction"))?,
            loss: fields[4].parse().map_err(|_| bad("loss"))?,
            epsilon: fields[5].parse().map_err(|_| bad("epsilon"))?,
        });
    }
    Ok(records)
}

/// Cross-seed statistics of one learner-step bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinRow {
    pub bin_start: u64,
    pub bin_end: u64,
    pub seeds: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Bin each seed's episode rewards by learner step (mean within a bin), then
/// aggregate the per-seed bin values across seeds.
pub fn summarize(traces: &[Vec<EpisodeRecord>], bin_size: u64) -> Vec<BinRow> {
    assert!(bin_size > 0);
    let max_step = traces
        .iter()
        .flat_map(|t| t.iter().map(|r| r.learner_step))
        .max()
        .unwrap_or(0);
    let n_bins = max_step / bin_size + 1;
    let mut rows = Vec::new();
    for b in 0..n_bins {
        let (lo, hi) = (b * bin_size, (b + 1) * bin_size);
        let mut per_seed: Vec<f64> = Vec::new();
        for trace in traces {
            let in_bin: Vec<f64> = trace
                .iter()
                .filter(|r| r.learner_step >= lo && r.learner_step < hi)
                .map(|r| r.reward)
                .collect();
            if !in_bin.is_empty() {
                per_seed.push(in_bin.iter().sum::<f64>() / in_bin.len() as f64);
            }
        }
        if per_seed.is_empty() {
            continue;
        }
        let min = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push(BinRow {
            bin_start: lo,
            bin_end: hi,
            seeds: per_seed.len(),
            median: median(&mut per_seed),
            min,
            max,
        });
    }
    rows
}

pub const SUMMARY_HEADER: &str = "bin_start,bin_end,seeds,median,min,max";

pub fn write_summary_csv(rows: &[BinRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.bin_start, r.bin_end, r.seeds, r.median, r.min, r.max
        );
    }
    out
}

pub const EVAL_HEADER: &str = "label,task,episodes,mean_reward,median_reward,mean_fraction";

pub fn write_eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.label,
            r.task.name(),
            r.episodes,
            r.mean_reward,
            r.median_reward,
            r.mean_fraction
        );
    }
    out
}

/// Minimal reward-curve SVG: median line with a min–max band per bin.
pub fn render_reward_curve_svg(rows: &[BinRow], title: &str) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"20\" font-size=\"14\">{title}</text>", pad);
    if !rows.is_empty() {
        let x_max = rows.last().unwrap().bin_end as f64;
        let y_min = rows.iter().map(|r| r.min).fold(f64::INFINITY, f64::min).min(0.0);
        let y_max = rows.iter().map(|r| r.max).fold(f64::NEG_INFINITY, f64::max).max(1e-9);
        let sx = |x: f64| pad + (w - 2.0 * pad) * x / x_max;
        let sy = |y: f64| h - pad - (h - 2.0 * pad) * (y - y_min) / (y_max - y_min);
        let mid = |r: &BinRow| 0.5 * (r.bin_start + r.bin_end) as f64;
        let band: String = rows
            .iter()
            .map(|r| format!("{},{}", sx(mid(r)), sy(r.max)))
            .chain(rows.iter().rev().map(|r| format!("{},{}", sx(mid(r)), sy(r.min))))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, "<polygon points=\"{band}\" fill=\"#9ecae1\" opacity=\"0.5\"/>");
        let line: String = rows
            .iter()
            .map(|r| format!("{},{}", sx(mid(r)), sy(r.median)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            out,
            "<polyline points=\"{line}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>"
        );
        let _ = writeln!(
            out,
            "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>",
            h - pad,
            w - pad,
            h - pad
        );
    }
    out.push_str("</svg>\n");
    out
}

// --- experiment configuration ---------------------------------------------------------

/// Everything one experiment needs. Defaults are desk scale throughout.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: TaskKind,
    pub scale: Scale,
    pub mode: AgentMode,
    pub seeds: Vec<u64>,
    pub bin_size: u64,
    pub out_dir: PathBuf,
    pub eval_episodes: usize,
    /// Checkpoint with a pretrained low-level policy, for the modes that
    /// reuse one.
    pub pretrained_low: Option<PathBuf>,
    /// Run seeds concurrently (each seed stays internally single-threaded).
    pub parallel: bool,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::EditPretrainConnect,
            scale: Scale::Reduced,
            mode: AgentMode::DirectModelFree,
            seeds: vec![0, 1, 2],
            bin_size: 1000,
            out_dir: PathBuf::from("runs"),
            eval_episodes: 20,
            pretrained_low: None,
            parallel: false,
            train: TrainConfig { latent: 16, hidden: 32, ..Default::default() },
        }
    }
}

impl RunConfig {
    /// Apply one `key = value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value for `{key}`: {what}"));
        match key {
            "task" => {
                self.task =
                    TaskKind::from_name(value).ok_or_else(|| bad("unknown task"))?;
            }
            "scale" => {
                self.scale = Scale::from_name(value).ok_or_else(|| bad("unknown scale"))?;
            }
            "mode" => {
                self.mode = AgentMode::from_name(value).ok_or_else(|| bad("unknown mode"))?;
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("expected comma-separated integers"))?;
            }
            "budget" => self.train.budget = value.parse().map_err(|_| bad("integer"))?,
            "bin_size" => self.bin_size = value.parse().map_err(|_| bad("integer"))?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "eval_episodes" => self.eval_episodes = value.parse().map_err(|_| bad("integer"))?,
            "pretrained_low" => self.pretrained_low = Some(PathBuf::from(value)),
            "parallel" => self.parallel = value.parse().map_err(|_| bad("bool"))?,
            "batch_size" => self.train.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "replay_ratio" => self.train.replay_ratio = value.parse().map_err(|_| bad("float"))?,
            "warmup" => self.train.warmup = value.parse().map_err(|_| bad("integer"))?,
            "capacity" => self.train.capacity = value.parse().map_err(|_| bad("integer"))?,
            "lr" => self.train.lr = value.parse().map_err(|_| bad("float"))?,
            "gamma" => self.train.gamma = value.parse().map_err(|_| bad("float"))?,
            "target_period" => {
                self.train.target_period = value.parse().map_err(|_| bad("integer"))?
            }
            "eps_min" => self.train.eps_min = value.parse().map_err(|_| bad("float"))?,
            "planning_budget" => {
                self.train.planning_budget = value.parse().map_err(|_| bad("integer"))?
            }
            "uct_c" => self.train.uct_c = value.parse().map_err(|_| bad("float"))?,
            "ce_weight" => self.train.ce_weight = value.parse().map_err(|_| bad("float"))?,
            "latent" => self.train.latent = value.parse().map_err(|_| bad("integer"))?,
            "hidden" => self.train.hidden = value.parse().map_err(|_| bad("integer"))?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file (`#` starts a comment).
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// File locations written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub eval_path: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_pretrained(cfg: &RunConfig) -> Result<GraphNetParams> {
    let path = cfg
        .pretrained_low
        .as_ref()
        .ok_or_else(|| Error::MissingCheckpoint(cfg.mode.name().into()))?;
    load_checkpoint(path)
}

fn train_one_seed(cfg: &RunConfig, seed: u64) -> Result<(Option<TrainResult>, GraphNetParams)> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    match cfg.mode {
        AgentMode::ZeroShotPretrained => {
            let low = load_pretrained(cfg)?;
            Ok((None, low))
        }
        AgentMode::DirectModelFree => {
            train_cfg.planning_budget = 0;
            let r = pretrain_low_level(cfg.task, cfg.scale, &train_cfg)?;
            let p = r.params.clone();
            Ok((Some(r), p))
        }
        AgentMode::DirectModelBased => {
            if train_cfg.planning_budget == 0 {
                train_cfg.planning_budget = 10;
            }
            let r = pretrain_low_level(cfg.task, cfg.scale, &train_cfg)?;
            let p = r.params.clone();
            Ok((Some(r), p))
        }
        AgentMode::HeuristicHrlFinetune => {
            let low = load_pretrained(cfg)?;
            train_cfg.planning_budget = 0;
            let r = finetune_low_level(cfg.task, cfg.scale, low, &train_cfg)?;
            let p = r.params.clone();
            Ok((Some(r), p))
        }
        AgentMode::NeuralHrlFrozenLow | AgentMode::NeuralHrlPlanning => {
            let low = load_pretrained(cfg)?;
            if cfg.mode == AgentMode::NeuralHrlPlanning && train_cfg.planning_budget == 0 {
                train_cfg.planning_budget = 10;
            }
            if cfg.mode == AgentMode::NeuralHrlFrozenLow {
                train_cfg.planning_budget = 0;
            }
            let r = train_controller(cfg.task, cfg.scale, &low, &train_cfg)?;
            let p = r.params.clone();
            Ok((Some(r), p))
        }
    }
}

fn eval_spec_for(cfg: &RunConfig, trained: &GraphNetParams) -> Result<EvalSpec> {
    Ok(match cfg.mode {
        AgentMode::ZeroShotPretrained | AgentMode::DirectModelFree | AgentMode::DirectModelBased => {
            EvalSpec {
                label: cfg.mode.name().into(),
                mode: cfg.mode,
                low: Some(trained.clone()),
                controller: None,
                planning_budget: cfg.train.planning_budget,
            }
        }
        AgentMode::HeuristicHrlFinetune => EvalSpec {
            label: cfg.mode.name().into(),
            mode: cfg.mode,
            low: Some(trained.clone()),
            controller: None,
            planning_budget: 0,
        },
        AgentMode::NeuralHrlFrozenLow | AgentMode::NeuralHrlPlanning => EvalSpec {
            label: cfg.mode.name().into(),
            mode: cfg.mode,
            low: Some(load_pretrained(cfg)?),
            controller: Some(trained.clone()),
            planning_budget: cfg.train.planning_budget,
        },
    })
}

/// Execute every seed of an experiment, writing per-seed trace CSVs, the
/// binned cross-seed summary, checkpoints, and a final greedy evaluation.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;

    let run = |&seed: &u64| -> Result<(u64, Option<TrainResult>, GraphNetParams)> {
        let (result, params) = train_one_seed(cfg, seed)?;
        Ok((seed, result, params))
    };
    let results: Vec<(u64, Option<TrainResult>, GraphNetParams)> = if cfg.parallel {
        cfg.seeds.par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        cfg.seeds.iter().map(run).collect::<Result<Vec<_>>>()?
    };

    let mut trace_paths = Vec::new();
    let mut checkpoint_paths = Vec::new();
    let mut traces = Vec::new();
    let mut eval_rows = Vec::new();
    for (seed, result, params) in &results {
        let trace_path = cfg.out_dir.join(format!("trace_seed{seed}.csv"));
        let records = result.as_ref().map_or(&[][..], |r| &r.records);
        write_file(&trace_path, &write_trace_csv(records))?;
        trace_paths.push(trace_path);
        traces.push(records.to_vec());

        let ckpt_path = cfg.out_dir.join(format!("checkpoint_seed{seed}.ckpt"));
        save_checkpoint(&ckpt_path, params)?;
        checkpoint_paths.push(ckpt_path);

        let spec = eval_spec_for(cfg, params)?;
        let eval_seeds: Vec<u64> =
            (0..cfg.eval_episodes as u64).map(|i| episode_seed(0xEAA1 ^ seed, i)).collect();
        let mut rows = evaluate(&[spec], cfg.task, cfg.scale, &eval_seeds)?;
        rows[0].label = format!("{}:seed{}", cfg.mode.name(), seed);
        eval_rows.extend(rows);
    }

    let summary_path = cfg.out_dir.join("summary.csv");
    write_file(&summary_path, &write_summary_csv(&summarize(&traces, cfg.bin_size)))?;
    let eval_path = cfg.out_dir.join("eval.csv");
    write_file(&eval_path, &write_eval_csv(&eval_rows))?;

    Ok(ExperimentOutput { trace_paths, summary_path, eval_path, checkpoint_paths })
}

/// Dump one greedy episode as per-step scene records (the line format), each
/// step prefixed by a `#step,<i>,<reward>` line.
pub fn rollout_dump(
    task: TaskKind,
    scale: Scale,
    seed: u64,
    spec: &EvalSpec,
) -> Result<String> {
    let mut out = String::new();
    match spec.mode {
        AgentMode::HeuristicHrlFinetune => {
            let mut env = ModifiedObsEnv::new(task, scale)?;
            dump_rollout_env(&mut env, spec, seed, &mut out)?;
        }
        AgentMode::NeuralHrlFrozenLow | AgentMode::NeuralHrlPlanning => {
            let low = GreedyNeuralLow { params: require_low(spec)?.clone() };
            let mut env = ControllerEnv::new(task, scale, low);
            dump_rollout_env(&mut env, spec, seed, &mut out)?;
        }
        _ => {
            let mut env = ConstructionEnv::new(task, scale);
            dump_rollout_env(&mut env, spec, seed, &mut out)?;
        }
    }
    Ok(out)
}

fn dump_rollout_env<E: Environment>(
    env: &mut E,
    spec: &EvalSpec,
    seed: u64,
    out: &mut String,
) -> Result<()> {
    env.reset(seed)?;
    let mut step = 0u32;
    let _ = writeln!(out, "#step,{step},0");
    out.push_str(&write_records(env.observation()));
    while !env.is_terminal() {
        let action = match (&spec.controller, &spec.low) {
            (Some(c), _) if spec.mode == AgentMode::NeuralHrlFrozenLow => {
                let q = forward(c, env.observation())?.flatten();
                masked_argmax(&q, &env.valid_mask())
                    .ok_or_else(|| Error::Contract("no valid action".into()))?
            }
            (_, Some(p)) => {
                let q = forward(p, env.observation())?.flatten();
                masked_argmax(&q, &env.valid_mask())
                    .ok_or_else(|| Error::Contract("no valid action".into()))?
            }
            _ => {
                let a = oracle_low_level_policy(env.observation())?;
                actions::encode_low_level(env.observation(), &a)?
            }
        };
        let outcome = env.step(action)?;
        step += 1;
        let _ = writeln!(out, "#step,{step},{}", outcome.reward);
        out.push_str(&write_records(env.observation()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::generate_scene;

    #[test]
    fn oracle_connects_floor_level_target() {
        let state = (0..200)
            .map(|s| generate_scene(TaskKind::EditPretrainConnect, Scale::Reduced, s).unwrap())
            .find(|s| {
                s.graph.nodes.iter().any(|n| n.active && (n.y - 0.35).abs() < 1e-9)
            })
            .unwrap();
        let action = oracle_low_level_policy(&state.graph).unwrap();
        let (next, r) = crate::tasks::step(&state, &action).unwrap();
        assert_eq!(r.task_reward, 1.0);
        assert!(next.terminal);
    }

    #[test]
    fn oracle_connects_elevated_target_within_budget() {
        for seed in 0..30 {
            let mut state =
                generate_scene(TaskKind::EditPretrainConnect, Scale::Reduced, seed).unwrap();
            let mut reward = 0.0;
            while !state.terminal {
                let action = oracle_low_level_policy(&state.graph).unwrap();
                let (next, r) = crate::tasks::step(&state, &action).unwrap();
                reward += r.total();
                state = next;
            }
            assert_eq!(reward, 1.0, "seed {seed}");
            assert!(state.steps_taken <= 3, "seed {seed}: {} steps", state.steps_taken);
        }
    }

    #[test]
    fn oracle_covers_active_obstacle() {
        for seed in 0..20 {
            let mut state =
                generate_scene(TaskKind::EditPretrainCover, Scale::Reduced, seed).unwrap();
            let ob = match state.active {
                Some(crate::tasks::ActiveRef::Obstacle(i)) => state.world.obstacles[i],
                _ => panic!("cover scene without active obstacle"),
            };
            let mut reward = 0.0;
            while !state.terminal {
                let action = oracle_low_level_policy(&state.graph).unwrap();
                let (next, r) = crate::tasks::step(&state, &action).unwrap();
                reward += r.total();
                state = next;
            }
            let fraction = reward / ob.width;
            assert!(fraction >= COVER_FRACTION, "seed {seed}: fraction {fraction}");
        }
    }

    #[test]
    fn oracle_fills_deletion_columns() {
        for seed in 0..10 {
            let mut state =
                generate_scene(TaskKind::DeletePretrain, Scale::Reduced, seed).unwrap();
            let max = state.max_reward();
            let mut reward = 0.0;
            while !state.terminal {
                let action = oracle_low_level_policy(&state.graph).unwrap();
                let (next, r) = crate::tasks::step(&state, &action).unwrap();
                reward += r.total();
                state = next;
            }
            assert_eq!(reward, max, "seed {seed}");
        }
    }

    #[test]
    fn oracle_parks_at_corner_without_goals() {
        let state = generate_scene(TaskKind::AddTransfer, Scale::Reduced, 0).unwrap();
        // No targets, nothing active: the corner placement earns nothing and
        // never touches an obstacle.
        let action = oracle_low_level_policy(&state.graph).unwrap();
        let (next, r) = crate::tasks::step(&state, &action).unwrap();
        assert_eq!(r.total(), 0.0);
        assert!(!next.terminal);
    }

    #[test]
    fn episode_reward_never_exceeds_the_analytic_bound() {
        for task in [
            TaskKind::EditTransfer,
            TaskKind::EditPretrainCover,
            TaskKind::DeleteTransfer,
            TaskKind::AddTransfer,
            TaskKind::CombinedTransfer,
        ] {
            for seed in 0..10 {
                let mut state = generate_scene(task, Scale::Reduced, seed).unwrap();
                let max = state.max_reward();
                while !state.terminal {
                    let a = oracle_low_level_policy(&state.graph).unwrap();
                    let (next, _) = crate::tasks::step(&state, &a).unwrap();
                    state = next;
                }
                assert!(
                    state.cumulative_reward <= max + 1e-9,
                    "{task:?} seed {seed}: {} > {max}",
                    state.cumulative_reward
                );
            }
        }
    }

    #[test]
    fn summary_bins_are_recomputable() {
        let mk = |step: u64, reward: f64| EpisodeRecord {
            learner_step: step,
            episode: 0,
            reward,
            reward_fraction: reward,
            loss: 0.0,
            epsilon: 0.1,
        };
        let traces = vec![
            vec![mk(100, 1.0), mk(900, 3.0), mk(1500, 5.0)],
            vec![mk(50, 2.0), mk(1100, 7.0)],
        ];
        let rows = summarize(&traces, 1000);
        assert_eq!(rows.len(), 2);
        // Bin 0: seed means are 2.0 and 2.0.
        assert_eq!(rows[0].seeds, 2);
        assert_eq!(rows[0].median, 2.0);
        assert_eq!(rows[0].min, 2.0);
        assert_eq!(rows[0].max, 2.0);
        // Bin 1: seed means are 5.0 and 7.0.
        assert_eq!(rows[1].median, 6.0);
        assert_eq!(rows[1].min, 5.0);
        assert_eq!(rows[1].max, 7.0);

        // Round-trip through the CSV text.
        let text = write_trace_csv(&traces[0]);
        let back = read_trace_csv(&text).unwrap();
        assert_eq!(back, traces[0]);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_file_text("task = edit-transfer\nbudget = 500").is_ok());
        assert_eq!(cfg.task, TaskKind::EditTransfer);
        assert_eq!(cfg.train.budget, 500);
        assert!(cfg.apply_file_text("no_such_key = 1").is_err());
        assert!(cfg.apply_file_text("lr").is_err());
    }

    #[test]
    fn evaluate_errors_name_the_mode() {
        let spec = EvalSpec {
            label: "hrl".into(),
            mode: AgentMode::NeuralHrlFrozenLow,
            low: None,
            controller: None,
            planning_budget: 0,
        };
        let err = evaluate(&[spec], TaskKind::EditTransfer, Scale::Reduced, &[0]).unwrap_err();
        match err {
            Error::MissingCheckpoint(mode) => assert_eq!(mode, "neural-hrl-frozen-low"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
