//! Procedural scenes, rewards, and episode termination for the four tasks.
//!
//! Every scene lives on a 0.7-pitch layer grid. Layer bottoms are computed by
//! repeated addition of the block height, exactly the way resting levels
//! accumulate in the settling model, so a block dropped into a grid cell
//! matches its target box bit-for-bit.
//!
//! Obstacles are thin slabs (0.2 tall) floating 0.25 above their layer's
//! base, so a block resting on the next layer clears them with margin; with
//! boundary contact ending episodes, full-thickness obstacles would make
//! every covering placement a knife-edge.

use crate::error::{Error, Result};
use crate::geom::Box2;
use crate::physics::{
    covered_length, overlap_fraction, place_relative, target_connected, SettleResult, World,
};
use crate::scene::{
    injected_target_pose, LowLevelAction, ObjectKind, SceneGraph, SceneNode, BLOCK_HEIGHT,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Episodes end after this many placements.
pub const MAX_ACTIONS: u32 = 14;
/// Palette composition: three small, three medium, one large.
pub const PALETTE_WIDTHS: [f64; 7] = [0.7, 0.7, 0.7, 2.1, 2.1, 2.1, 3.5];
/// Obstacle slab thickness.
pub const OBSTACLE_HEIGHT: f64 = 0.2;
/// Gap between a layer's base and the obstacle slab floating in it.
pub const OBSTACLE_LIFT: f64 = 0.25;
/// Glue cost in the editing and addition tasks.
pub const STICKY_COST_EDIT_ADD: f64 = -2.0;
/// Glue cost in the deletion task.
pub const STICKY_COST_DELETE: f64 = -0.5;
/// A target counts as filled at this overlap fraction.
pub const FILL_OVERLAP: f64 = 0.9;
/// An obstacle counts as covered at this fraction of its length.
pub const COVER_FRACTION: f64 = 0.99;
/// Default scene width in world units.
pub const FULL_SCENE_WIDTH: f64 = 16.0;

/// Bottom of layer `k`: `k` block heights accumulated the way stacks settle.
pub fn layer_y(k: u32) -> f64 {
    (0..k).fold(0.0, |acc, _| acc + BLOCK_HEIGHT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskFamily {
    Editing,
    Deletion,
    Addition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    EditPretrainConnect,
    EditPretrainCover,
    EditTransfer,
    DeletePretrain,
    DeleteTransfer,
    AddPretrain,
    AddTransfer,
    CombinedPretrain,
    CombinedTransfer,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::EditPretrainConnect,
        TaskKind::EditPretrainCover,
        TaskKind::EditTransfer,
        TaskKind::DeletePretrain,
        TaskKind::DeleteTransfer,
        TaskKind::AddPretrain,
        TaskKind::AddTransfer,
        TaskKind::CombinedPretrain,
        TaskKind::CombinedTransfer,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::EditPretrainConnect => "edit-pretrain-connect",
            TaskKind::EditPretrainCover => "edit-pretrain-cover",
            TaskKind::EditTransfer => "edit-transfer",
            TaskKind::DeletePretrain => "delete-pretrain",
            TaskKind::DeleteTransfer => "delete-transfer",
            TaskKind::AddPretrain => "add-pretrain",
            TaskKind::AddTransfer => "add-transfer",
            TaskKind::CombinedPretrain => "combined-pretrain",
            TaskKind::CombinedTransfer => "combined-transfer",
        }
    }

    pub fn from_name(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.iter().copied().find(|t| t.name() == s)
    }

    pub fn is_combined(&self) -> bool {
        matches!(self, TaskKind::CombinedPretrain | TaskKind::CombinedTransfer)
    }

    /// Family of a concrete (non-combined) kind.
    pub fn family(&self) -> Option<TaskFamily> {
        match self {
            TaskKind::EditPretrainConnect | TaskKind::EditPretrainCover | TaskKind::EditTransfer => {
                Some(TaskFamily::Editing)
            }
            TaskKind::DeletePretrain | TaskKind::DeleteTransfer => Some(TaskFamily::Deletion),
            TaskKind::AddPretrain | TaskKind::AddTransfer => Some(TaskFamily::Addition),
            _ => None,
        }
    }
}

/// Scene-size preset. `Reduced` shrinks counts and heights to what desk-scale
/// training budgets can reach; `Full` follows the task descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Full,
    Reduced,
}

impl Scale {
    pub fn name(&self) -> &'static str {
        match self {
            Scale::Full => "full",
            Scale::Reduced => "reduced",
        }
    }

    pub fn from_name(s: &str) -> Option<Scale> {
        match s {
            "full" => Some(Scale::Full),
            "reduced" => Some(Scale::Reduced),
            _ => None,
        }
    }
}

/// Which world object carries the active mark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveRef {
    Target(usize),
    Obstacle(usize),
}

/// Reward of a single environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub task_reward: f64,
    pub sticky_cost: f64,
}

impl RewardBreakdown {
    pub const ZERO: RewardBreakdown = RewardBreakdown { task_reward: 0.0, sticky_cost: 0.0 };

    pub fn total(&self) -> f64 {
        self.task_reward + self.sticky_cost
    }
}

/// A running episode: geometric ground truth plus its graph rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    /// Task the episode was requested as (may be a combined kind).
    pub task: TaskKind,
    /// Concrete kind this episode is running (resolved for combined tasks).
    pub episode_kind: TaskKind,
    pub scale: Scale,
    pub world: World,
    pub graph: SceneGraph,
    pub active: Option<ActiveRef>,
    pub steps_taken: u32,
    pub terminal: bool,
    pub cumulative_reward: f64,
    /// Deletion bookkeeping: targets that already paid their +1.
    paid_targets: Vec<bool>,
    /// Editing bookkeeping: the active target has been connected.
    connected: bool,
}

impl EpisodeState {
    pub fn family(&self) -> TaskFamily {
        self.episode_kind.family().expect("episode kind is always concrete")
    }

    /// Per-scene analytic upper bound on the episode reward.
    pub fn max_reward(&self) -> f64 {
        match self.episode_kind {
            TaskKind::EditPretrainConnect | TaskKind::EditTransfer => 1.0,
            TaskKind::EditPretrainCover => match self.active {
                Some(ActiveRef::Obstacle(i)) => self.world.obstacles[i].width,
                _ => 0.0,
            },
            TaskKind::DeletePretrain | TaskKind::DeleteTransfer => self.world.targets.len() as f64,
            TaskKind::AddPretrain => 1.0,
            TaskKind::AddTransfer => self.world.obstacles.iter().map(|o| o.width).sum(),
            _ => unreachable!("episode kind is concrete"),
        }
    }

    pub fn reward_fraction(&self) -> f64 {
        let max = self.max_reward();
        if max > 0.0 {
            self.cumulative_reward / max
        } else {
            0.0
        }
    }

    fn active_target_box(&self) -> Option<Box2> {
        match self.active {
            Some(ActiveRef::Target(i)) => Some(self.world.targets[i]),
            _ => None,
        }
    }

    fn active_obstacle_box(&self) -> Option<Box2> {
        match self.active {
            Some(ActiveRef::Obstacle(i)) => Some(self.world.obstacles[i]),
            _ => None,
        }
    }
}

// --- graph rendering ---------------------------------------------------------

/// Node ids are assigned in a fixed order (floor, palette, obstacles, targets,
/// placed blocks) so they stay stable as an episode appends placements.
pub fn render_graph(world: &World, active: Option<ActiveRef>) -> SceneGraph {
    let w = world.scene_width;
    let mut nodes = Vec::with_capacity(8 + world.obstacles.len() + world.targets.len() + world.placed.len());
    nodes.push(SceneNode {
        id: 0,
        x: w / 2.0,
        y: -0.35,
        width: w,
        height: 0.7,
        kind: ObjectKind::Floor,
        active: false,
        sticky: false,
    });
    for (i, &bw) in PALETTE_WIDTHS.iter().enumerate() {
        nodes.push(SceneNode {
            id: (i + 1) as u32,
            x: w * (i + 1) as f64 / 8.0,
            y: -1.05,
            width: bw,
            height: BLOCK_HEIGHT,
            kind: ObjectKind::AvailableBlock,
            active: false,
            sticky: false,
        });
    }
    let mut next_id = 8u32;
    for (i, ob) in world.obstacles.iter().enumerate() {
        nodes.push(SceneNode {
            id: next_id,
            x: ob.x,
            y: ob.y,
            width: ob.width,
            height: ob.height,
            kind: ObjectKind::Obstacle,
            active: active == Some(ActiveRef::Obstacle(i)),
            sticky: false,
        });
        next_id += 1;
    }
    for (i, t) in world.targets.iter().enumerate() {
        nodes.push(SceneNode {
            id: next_id,
            x: t.x,
            y: t.y,
            width: t.width,
            height: t.height,
            kind: ObjectKind::Target,
            active: active == Some(ActiveRef::Target(i)),
            sticky: false,
        });
        next_id += 1;
    }
    for p in &world.placed {
        nodes.push(SceneNode {
            id: next_id,
            x: p.bbox.x,
            y: p.bbox.y,
            width: p.bbox.width,
            height: p.bbox.height,
            kind: ObjectKind::PlacedBlock,
            active: false,
            sticky: p.sticky,
        });
        next_id += 1;
    }
    SceneGraph { nodes }
}

// --- scene generation ----------------------------------------------------------

fn scene_rng(task: TaskKind, scale: Scale, seed: u64) -> ChaCha8Rng {
    let tag = TaskKind::ALL.iter().position(|t| t == &task).unwrap() as u64;
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0x85EB_CA6B_1234_5677))
        .wrapping_add(if scale == Scale::Reduced { 0x5851_F42D } else { 0 });
    ChaCha8Rng::seed_from_u64(mix)
}

struct ObstacleParams {
    count_lo: u32,
    count_hi: u32,
    layer_lo: u32,
    layer_hi: u32,
    scene_width: f64,
}

/// Obstacles for the editing/addition tasks: spaced far enough apart that a
/// support tower fits beside each one. Positions are drawn gap-first so any
/// feasible count always lays out.
fn sample_obstacles(rng: &mut ChaCha8Rng, p: &ObstacleParams) -> Result<Vec<Box2>> {
    let n = rng.gen_range(p.count_lo..=p.count_hi);
    let margin = 2.2;
    let spacing = 4.55;
    let lo = margin;
    let hi = p.scene_width - margin;
    let slack = (hi - lo) - spacing * (n - 1) as f64;
    if slack < 0.0 {
        return Err(Error::SceneGeneration(format!(
            "{n} obstacles cannot fit a {}-wide scene",
            p.scene_width
        )));
    }
    let mut offsets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=slack)).collect();
    offsets.sort_by(f64::total_cmp);
    let obstacles = offsets
        .iter()
        .enumerate()
        .map(|(i, &off)| {
            let x = lo + off + spacing * i as f64;
            let width = if rng.gen_bool(0.5) { 0.7 } else { 2.1 };
            let layer = rng.gen_range(p.layer_lo..=p.layer_hi);
            let bottom = layer_y(layer) + OBSTACLE_LIFT;
            Box2::new(x, bottom + OBSTACLE_HEIGHT / 2.0, width, OBSTACLE_HEIGHT)
        })
        .collect();
    Ok(obstacles)
}

/// Editing-family scenes: obstacles each with a small target one layer above
/// the slab, or free-floating targets when `with_obstacles` is false.
fn generate_editing(
    task: TaskKind,
    scale: Scale,
    rng: &mut ChaCha8Rng,
) -> Result<(World, Option<ActiveRef>)> {
    let width = match scale {
        Scale::Full => FULL_SCENE_WIDTH,
        Scale::Reduced => 8.0,
    };
    let mut world = World::new(width);
    match task {
        TaskKind::EditPretrainConnect => {
            let n = match scale {
                Scale::Full => rng.gen_range(1..=3),
                Scale::Reduced => 1,
            };
            let (layer_lo, layer_hi) = match scale {
                Scale::Full => (0, 4),
                Scale::Reduced => (0, 1),
            };
            for _ in 0..n {
                for _ in 0..64 {
                    let x = rng.gen_range(1.2..=width - 1.2);
                    if world.targets.iter().all(|t| (t.x - x).abs() >= 1.6) {
                        let layer = rng.gen_range(layer_lo..=layer_hi);
                        world.targets.push(Box2::new(x, layer_y(layer) + 0.35, 0.7, 0.7));
                        break;
                    }
                }
            }
            if world.targets.is_empty() {
                return Err(Error::SceneGeneration("no room for targets".into()));
            }
            let active = ActiveRef::Target(rng.gen_range(0..world.targets.len()));
            Ok((world, Some(active)))
        }
        TaskKind::EditPretrainCover | TaskKind::EditTransfer => {
            let (count_lo, count_hi, layer_lo, layer_hi) = match scale {
                Scale::Full => (1, 3, 1, 5),
                Scale::Reduced => (1, 1, 1, 2),
            };
            world.obstacles = sample_obstacles(
                rng,
                &ObstacleParams { count_lo, count_hi, layer_lo, layer_hi, scene_width: width },
            )?;
            for ob in &world.obstacles {
                // Target one grid layer above the slab's layer.
                let layer = ((ob.bottom() - OBSTACLE_LIFT) / BLOCK_HEIGHT).round() as u32;
                world.targets.push(Box2::new(ob.x, layer_y(layer + 1) + 0.35, 0.7, 0.7));
            }
            let active = if task == TaskKind::EditTransfer {
                ActiveRef::Target(rng.gen_range(0..world.targets.len()))
            } else {
                ActiveRef::Obstacle(rng.gen_range(0..world.obstacles.len()))
            };
            Ok((world, Some(active)))
        }
        _ => unreachable!(),
    }
}

fn generate_addition(
    task: TaskKind,
    scale: Scale,
    rng: &mut ChaCha8Rng,
) -> Result<(World, Option<ActiveRef>)> {
    let width = FULL_SCENE_WIDTH;
    let (count_lo, count_hi, layer_lo, layer_hi) = match scale {
        Scale::Full => (1, 3, 1, 5),
        Scale::Reduced => (1, 2, 1, 2),
    };
    let mut world = World::new(width);
    world.obstacles = sample_obstacles(
        rng,
        &ObstacleParams { count_lo, count_hi, layer_lo, layer_hi, scene_width: width },
    )?;
    if task == TaskKind::AddPretrain {
        // One goal target beside or on top of a random obstacle, shaped the
        // way the add-target controller action would shape it.
        let ob = world.obstacles[rng.gen_range(0..world.obstacles.len())];
        let (u_width, x) = match rng.gen_range(0..3) {
            0 => (0.7, 0),
            1 => (0.7, 6),
            _ => (3.5, 3),
        };
        let pose = injected_target_pose(u_width, BLOCK_HEIGHT, &ob, x);
        world.targets.push(pose);
    }
    Ok((world, None))
}

/// Deletion scenes: contiguous columns of target cells rising from the floor
/// (always fillable bottom-up), with obstacle slabs in the free space between
/// columns.
fn generate_deletion(
    task: TaskKind,
    scale: Scale,
    rng: &mut ChaCha8Rng,
) -> Result<(World, Option<ActiveRef>)> {
    let width = FULL_SCENE_WIDTH;
    let (cols_lo, cols_hi, h_hi, t_lo, t_hi, obs_hi) = match (task, scale) {
        (TaskKind::DeletePretrain, Scale::Full) => (2, 3, 3, 3, 6, 3),
        (TaskKind::DeletePretrain, Scale::Reduced) => (2, 3, 2, 3, 6, 2),
        (TaskKind::DeleteTransfer, Scale::Full) => (3, 6, 10, 10, 20, 6),
        (TaskKind::DeleteTransfer, Scale::Reduced) => (2, 4, 4, 6, 10, 2),
        _ => unreachable!(),
    };

    'attempt: for _ in 0..64 {
        let n_cols = rng.gen_range(cols_lo..=cols_hi);
        let mut columns: Vec<(f64, f64, u32)> = Vec::new(); // (x, width, height)
        let mut cursor = rng.gen_range(1.2..=2.4);
        for _ in 0..n_cols {
            let w = [0.7, 2.1, 3.5][rng.gen_range(0..3)];
            let h = rng.gen_range(1..=h_hi);
            let x = cursor + w / 2.0;
            if x + w / 2.0 > width - 1.2 {
                continue 'attempt;
            }
            columns.push((x, w, h));
            cursor = x + w / 2.0 + rng.gen_range(0.5..=1.1);
        }
        let total: u32 = columns.iter().map(|c| c.2).sum();
        if total < t_lo || total > t_hi {
            continue 'attempt;
        }

        let mut world = World::new(width);
        for &(x, w, h) in &columns {
            for layer in 0..h {
                world.targets.push(Box2::new(x, layer_y(layer) + 0.35, w, BLOCK_HEIGHT));
            }
        }
        // Obstacles live strictly between/beside columns so no target's drop
        // column is blocked.
        let n_obs = rng.gen_range(0..=obs_hi);
        let max_layer = columns.iter().map(|c| c.2).max().unwrap_or(1);
        for _ in 0..n_obs {
            for _ in 0..40 {
                let w = if rng.gen_bool(0.5) { 0.7 } else { 2.1 };
                let x = rng.gen_range(0.6 + w / 2.0..=width - 0.6 - w / 2.0);
                let clear_cols = columns
                    .iter()
                    .all(|&(cx, cw, _)| (cx - x).abs() >= (cw + w) / 2.0 + 0.2);
                let clear_obs = world
                    .obstacles
                    .iter()
                    .all(|ob| (ob.x - x).abs() >= (ob.width + w) / 2.0 + 0.2);
                if clear_cols && clear_obs {
                    let layer = rng.gen_range(1..=max_layer.max(1));
                    let bottom = layer_y(layer) + OBSTACLE_LIFT;
                    world.obstacles.push(Box2::new(x, bottom + OBSTACLE_HEIGHT / 2.0, w, OBSTACLE_HEIGHT));
                    break;
                }
            }
        }
        return Ok((world, None));
    }
    Err(Error::SceneGeneration("could not lay out deletion columns".into()))
}

/// Deterministic scene construction: a pure function of (task, scale, seed).
pub fn generate_scene(task: TaskKind, scale: Scale, seed: u64) -> Result<EpisodeState> {
    let mut rng = scene_rng(task, scale, seed);
    let episode_kind = match task {
        TaskKind::CombinedPretrain => match rng.gen_range(0..3) {
            0 => {
                if rng.gen_bool(0.5) {
                    TaskKind::EditPretrainConnect
                } else {
                    TaskKind::EditPretrainCover
                }
            }
            1 => TaskKind::DeletePretrain,
            _ => TaskKind::AddPretrain,
        },
        TaskKind::CombinedTransfer => match rng.gen_range(0..3) {
            0 => TaskKind::EditTransfer,
            1 => TaskKind::DeleteTransfer,
            _ => TaskKind::AddTransfer,
        },
        concrete => concrete,
    };
    let (world, active) = match episode_kind {
        TaskKind::EditPretrainConnect | TaskKind::EditPretrainCover | TaskKind::EditTransfer => {
            generate_editing(episode_kind, scale, &mut rng)?
        }
        TaskKind::DeletePretrain | TaskKind::DeleteTransfer => {
            generate_deletion(episode_kind, scale, &mut rng)?
        }
        TaskKind::AddPretrain | TaskKind::AddTransfer => {
            generate_addition(episode_kind, scale, &mut rng)?
        }
        _ => unreachable!(),
    };
    let graph = render_graph(&world, active);
    let paid = vec![false; world.targets.len()];
    Ok(EpisodeState {
        task,
        episode_kind,
        scale,
        world,
        graph,
        active,
        steps_taken: 0,
        terminal: false,
        cumulative_reward: 0.0,
        paid_targets: paid,
        connected: false,
    })
}

/// Identify the running sub-task family from the observation alone.
///
/// Editing scenes carry an active mark; addition scenes have at most one
/// target (none in transfer) next to their obstacles; deletion scenes are the
/// remaining multi-target silhouettes.
pub fn classify_family(g: &SceneGraph) -> TaskFamily {
    if g.active_node().is_some() {
        return TaskFamily::Editing;
    }
    let targets = g.nodes_of_kind(ObjectKind::Target).count();
    let obstacles = g.nodes_of_kind(ObjectKind::Obstacle).count();
    if targets > 1 || (targets >= 1 && obstacles == 0) {
        TaskFamily::Deletion
    } else {
        TaskFamily::Addition
    }
}

// --- stepping ----------------------------------------------------------------

fn deletion_satisfied(target: &Box2, world: &World) -> bool {
    world.placed.iter().any(|p| {
        (p.bbox.width - target.width).abs() < 1e-9 && overlap_fraction(&p.bbox, target) >= FILL_OVERLAP
    })
}

fn addition_complete(world: &World) -> bool {
    world.obstacles.iter().all(|ob| {
        covered_length(ob, &world.placed_boxes()) >= COVER_FRACTION * ob.width
    })
}

/// Apply a low-level action grounded against `ground` (the observation the
/// acting policy saw, which may contain controller-injected nodes).
///
/// Returns the successor state and the step's reward. Obstacle contact always
/// yields total reward zero and ends the episode with the world unchanged.
pub fn step_grounded(
    state: &EpisodeState,
    action: &LowLevelAction,
    ground: &SceneGraph,
) -> Result<(EpisodeState, RewardBreakdown)> {
    if state.terminal {
        return Err(Error::Contract("stepping a terminal episode".into()));
    }
    let (world_after, settle) = place_relative(&state.world, action, ground)?;
    let mut next = state.clone();
    next.steps_taken += 1;

    let breakdown = match settle {
        SettleResult::ObstacleContact => {
            next.terminal = true;
            RewardBreakdown::ZERO
        }
        SettleResult::FellOffScene => {
            // Nothing was placed: no reward, no glue charge.
            next.terminal = next.steps_taken >= MAX_ACTIONS;
            RewardBreakdown::ZERO
        }
        SettleResult::Rested { .. } => {
            let sticky_cost = if action.sticky {
                match state.family() {
                    TaskFamily::Deletion => STICKY_COST_DELETE,
                    _ => STICKY_COST_EDIT_ADD,
                }
            } else {
                0.0
            };
            let mut task_reward = 0.0;
            let mut complete = false;
            match state.episode_kind {
                TaskKind::EditPretrainConnect | TaskKind::EditTransfer => {
                    let target = state
                        .active_target_box()
                        .ok_or_else(|| Error::Contract("editing scene without active target".into()))?;
                    if !state.connected && target_connected(&target, &world_after) {
                        task_reward = 1.0;
                        next.connected = true;
                        complete = true;
                    }
                }
                TaskKind::EditPretrainCover => {
                    let ob = state
                        .active_obstacle_box()
                        .ok_or_else(|| Error::Contract("cover scene without active obstacle".into()))?;
                    let before = covered_length(&ob, &state.world.placed_boxes());
                    let after = covered_length(&ob, &world_after.placed_boxes());
                    task_reward = after - before;
                    complete = after >= COVER_FRACTION * ob.width;
                }
                TaskKind::DeletePretrain | TaskKind::DeleteTransfer => {
                    for (i, target) in state.world.targets.iter().enumerate() {
                        if !next.paid_targets[i] && deletion_satisfied(target, &world_after) {
                            next.paid_targets[i] = true;
                            task_reward += 1.0;
                        }
                    }
                    complete = next.paid_targets.iter().all(|&p| p);
                }
                TaskKind::AddPretrain => {
                    let target = state.world.targets.first().ok_or_else(|| {
                        Error::Contract("addition pretrain scene without goal target".into())
                    })?;
                    if !state.connected && target_connected(target, &world_after) {
                        task_reward = 1.0;
                        next.connected = true;
                        complete = true;
                    }
                }
                TaskKind::AddTransfer => {
                    for ob in &state.world.obstacles {
                        let before = covered_length(ob, &state.world.placed_boxes());
                        let after = covered_length(ob, &world_after.placed_boxes());
                        task_reward += after - before;
                    }
                    complete = addition_complete(&world_after);
                }
                _ => unreachable!(),
            }
            next.world = world_after;
            next.terminal = complete || next.steps_taken >= MAX_ACTIONS;
            RewardBreakdown { task_reward, sticky_cost }
        }
    };

    next.graph = render_graph(&next.world, next.active);
    next.cumulative_reward += breakdown.total();
    Ok((next, breakdown))
}

/// Step against the episode's own (unmodified) observation.
pub fn step(state: &EpisodeState, action: &LowLevelAction) -> Result<(EpisodeState, RewardBreakdown)> {
    let ground = state.graph.clone();
    step_grounded(state, action, &ground)
}
