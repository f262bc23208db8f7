//! The two-level episode loop: a controller rewrites the observation, the
//! low-level agent acts on the rewritten graph, and both transitions are
//! recorded with the same environment reward.
//!
//! Training compositions are expressed as wrapper environments so the one
//! learner loop in [`crate::learning`] drives every mode: a
//! [`ControllerEnv`] exposes controller actions over a frozen low-level
//! policy, and a [`ModifiedObsEnv`] exposes low-level actions behind a fixed
//! heuristic controller (the finetuning setup).

use crate::actions::{self, ActionSpace};
use crate::error::{Error, Result};
use crate::graph_net::{forward, masked_argmax, GraphNetParams};
use crate::heuristics::{
    heuristic_add, heuristic_delete, heuristic_edit, HeuristicAddState, HeuristicEditState,
};
use crate::learning::{train, Environment, StepOutcome, TrainConfig, TrainResult};
use crate::scene::{apply_controller_action, ControllerAction, LowLevelAction, SceneGraph};
use crate::tasks::{generate_scene, step_grounded, EpisodeState, Scale, TaskFamily, TaskKind};

/// Agent compositions studied by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentMode {
    /// Pretrained low-level policy applied to the transfer task unchanged.
    ZeroShotPretrained,
    /// Low-level agent trained from scratch on the transfer task.
    DirectModelFree,
    /// Same, acting through search over the simulator.
    DirectModelBased,
    /// Heuristic controller on top; the pretrained low-level policy is
    /// finetuned on its own buffer.
    HeuristicHrlFinetune,
    /// Learned controller over a frozen pretrained low-level policy.
    NeuralHrlFrozenLow,
    /// Learned controller with MCTS at acting time.
    NeuralHrlPlanning,
}

impl AgentMode {
    pub const ALL: [AgentMode; 6] = [
        AgentMode::ZeroShotPretrained,
        AgentMode::DirectModelFree,
        AgentMode::DirectModelBased,
        AgentMode::HeuristicHrlFinetune,
        AgentMode::NeuralHrlFrozenLow,
        AgentMode::NeuralHrlPlanning,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AgentMode::ZeroShotPretrained => "zero-shot",
            AgentMode::DirectModelFree => "direct-model-free",
            AgentMode::DirectModelBased => "direct-model-based",
            AgentMode::HeuristicHrlFinetune => "heuristic-hrl-finetune",
            AgentMode::NeuralHrlFrozenLow => "neural-hrl-frozen-low",
            AgentMode::NeuralHrlPlanning => "neural-hrl-planning",
        }
    }

    pub fn from_name(s: &str) -> Option<AgentMode> {
        AgentMode::ALL.iter().copied().find(|m| m.name() == s)
    }
}

/// Controller action space used for a task.
pub fn controller_space(task: TaskKind) -> ActionSpace {
    if task.is_combined() {
        return ActionSpace::CombinedController;
    }
    match task.family().expect("concrete task") {
        TaskFamily::Editing => ActionSpace::EditController,
        TaskFamily::Deletion => ActionSpace::DeleteController,
        TaskFamily::Addition => ActionSpace::AddController,
    }
}

// --- policies -----------------------------------------------------------------------

pub trait ControllerPolicy {
    fn reset(&mut self);
    fn act(&mut self, state: &EpisodeState) -> Result<ControllerAction>;
}

pub trait LowLevelPolicy: Clone {
    fn act(&mut self, observation: &SceneGraph) -> Result<LowLevelAction>;
}

/// Identity controller: hierarchical rollouts degenerate to flat ones.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoOpController;

impl ControllerPolicy for NoOpController {
    fn reset(&mut self) {}
    fn act(&mut self, _state: &EpisodeState) -> Result<ControllerAction> {
        Ok(ControllerAction::NoOp)
    }
}

/// The task-matched hard-coded controller.
#[derive(Debug, Clone)]
pub enum HeuristicController {
    Edit(HeuristicEditState),
    Delete,
    Add(HeuristicAddState),
}

impl HeuristicController {
    /// No heuristic controller exists for the combined task.
    pub fn for_task(task: TaskKind) -> Result<Self> {
        if task.is_combined() {
            return Err(Error::UnsupportedMode(
                "no heuristic controller for the combined task".into(),
            ));
        }
        Ok(match task.family().expect("concrete task") {
            TaskFamily::Editing => HeuristicController::Edit(HeuristicEditState::default()),
            TaskFamily::Deletion => HeuristicController::Delete,
            TaskFamily::Addition => HeuristicController::Add(HeuristicAddState::default()),
        })
    }
}

impl ControllerPolicy for HeuristicController {
    fn reset(&mut self) {
        match self {
            HeuristicController::Edit(s) => *s = HeuristicEditState::default(),
            HeuristicController::Add(s) => *s = HeuristicAddState::default(),
            HeuristicController::Delete => {}
        }
    }

    fn act(&mut self, state: &EpisodeState) -> Result<ControllerAction> {
        Ok(match self {
            HeuristicController::Edit(s) => {
                let (a, next) = heuristic_edit(&state.graph, *s);
                *s = next;
                a
            }
            HeuristicController::Delete => heuristic_delete(&state.graph),
            HeuristicController::Add(s) => {
                let (a, next) = heuristic_add(&state.graph, *s);
                *s = next;
                a
            }
        })
    }
}

/// Greedy neural controller over a task's controller space.
#[derive(Debug, Clone)]
pub struct GreedyNeuralController {
    pub params: GraphNetParams,
    pub space: ActionSpace,
}

impl ControllerPolicy for GreedyNeuralController {
    fn reset(&mut self) {}
    fn act(&mut self, state: &EpisodeState) -> Result<ControllerAction> {
        let g = &state.graph;
        let q = forward(&self.params, g)?.flatten();
        let mask = actions::valid_mask(self.space, g);
        let flat = masked_argmax(&q, &mask)
            .ok_or_else(|| Error::Contract("no valid controller action".into()))?;
        actions::decode_controller(self.space, g, flat)
    }
}

/// Greedy neural low-level policy (a frozen pretrained checkpoint).
#[derive(Debug, Clone)]
pub struct GreedyNeuralLow {
    pub params: GraphNetParams,
}

impl LowLevelPolicy for GreedyNeuralLow {
    fn act(&mut self, observation: &SceneGraph) -> Result<LowLevelAction> {
        let q = forward(&self.params, observation)?.flatten();
        let mask = actions::valid_mask(ActionSpace::LowLevel, observation);
        let flat = masked_argmax(&q, &mask)
            .ok_or_else(|| Error::Contract("no valid low-level action".into()))?;
        actions::decode_low_level(observation, flat)
    }
}

// --- Algorithm-1 rollout ----------------------------------------------------------------

/// Paired per-step records of one hierarchical episode. Entry `i` of both
/// buffers describes the same environment step and carries the same reward.
#[derive(Debug, Clone, Default)]
pub struct EpisodeBuffers {
    /// (true observation, controller action, reward)
    pub controller: Vec<(SceneGraph, ControllerAction, f64)>,
    /// (modified observation, low-level action, reward)
    pub low_level: Vec<(SceneGraph, LowLevelAction, f64)>,
}

/// Run one episode of the hierarchical loop: the controller rewrites the
/// observation, the low-level policy acts on the rewritten graph, and both
/// transitions are buffered with the environment's reward.
pub fn run_episode(
    controller: &mut dyn ControllerPolicy,
    low: &mut dyn FnMut(&SceneGraph) -> Result<LowLevelAction>,
    mut state: EpisodeState,
) -> Result<(EpisodeBuffers, f64)> {
    controller.reset();
    let mut buffers = EpisodeBuffers::default();
    let mut total = 0.0;
    while !state.terminal {
        let action = controller.act(&state)?;
        let modified = apply_controller_action(
            &state.graph,
            &action,
            state.task.is_combined(),
            state.family(),
        )?;
        let low_action = low(&modified)?;
        let (next, breakdown) = step_grounded(&state, &low_action, &modified)?;
        let reward = breakdown.total();
        buffers.controller.push((state.graph.clone(), action, reward));
        buffers.low_level.push((modified, low_action, reward));
        total += reward;
        state = next;
    }
    Ok((buffers, total))
}

// --- wrapper environments ------------------------------------------------------------

/// Controller-level MDP over a frozen low-level policy: actions are graph
/// modifications, transitions come from the low-level agent acting on the
/// modified observation.
#[derive(Clone)]
pub struct ControllerEnv<L: LowLevelPolicy> {
    pub task: TaskKind,
    pub scale: Scale,
    pub low: L,
    state: Option<EpisodeState>,
}

impl<L: LowLevelPolicy> ControllerEnv<L> {
    pub fn new(task: TaskKind, scale: Scale, low: L) -> Self {
        ControllerEnv { task, scale, low, state: None }
    }

    pub fn state(&self) -> &EpisodeState {
        self.state.as_ref().expect("environment not reset")
    }
}

impl<L: LowLevelPolicy> Environment for ControllerEnv<L> {
    fn reset(&mut self, episode_seed: u64) -> Result<()> {
        self.state = Some(generate_scene(self.task, self.scale, episode_seed)?);
        Ok(())
    }

    fn observation(&self) -> &SceneGraph {
        &self.state().graph
    }

    fn valid_mask(&self) -> Vec<bool> {
        actions::valid_mask(self.space(), &self.state().graph)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let state = self.state.as_ref().ok_or_else(|| Error::Contract("not reset".into()))?;
        let space = self.space();
        let decoded = actions::decode_controller(space, &state.graph, action)?;
        let modified = apply_controller_action(
            &state.graph,
            &decoded,
            state.task.is_combined(),
            state.family(),
        )?;
        let low_action = self.low.act(&modified)?;
        let (next, breakdown) = step_grounded(state, &low_action, &modified)?;
        let outcome = StepOutcome { reward: breakdown.total(), terminal: next.terminal };
        self.state = Some(next);
        Ok(outcome)
    }

    fn is_terminal(&self) -> bool {
        self.state().terminal
    }

    fn space(&self) -> ActionSpace {
        controller_space(self.task)
    }

    fn max_reward(&self) -> f64 {
        self.state().max_reward()
    }
}

/// Low-level MDP behind a fixed heuristic controller: the agent only ever
/// sees controller-modified observations. This is the finetuning setup.
#[derive(Clone)]
pub struct ModifiedObsEnv {
    pub task: TaskKind,
    pub scale: Scale,
    controller: HeuristicController,
    state: Option<EpisodeState>,
    modified: Option<SceneGraph>,
}

impl ModifiedObsEnv {
    pub fn new(task: TaskKind, scale: Scale) -> Result<Self> {
        Ok(ModifiedObsEnv {
            task,
            scale,
            controller: HeuristicController::for_task(task)?,
            state: None,
            modified: None,
        })
    }

    fn state(&self) -> &EpisodeState {
        self.state.as_ref().expect("environment not reset")
    }

    fn remodify(&mut self) -> Result<()> {
        let state = self.state.as_ref().unwrap();
        if state.terminal {
            self.modified = Some(state.graph.clone());
            return Ok(());
        }
        let action = self.controller.act(state)?;
        self.modified = Some(apply_controller_action(
            &state.graph,
            &action,
            state.task.is_combined(),
            state.family(),
        )?);
        Ok(())
    }
}

impl Environment for ModifiedObsEnv {
    fn reset(&mut self, episode_seed: u64) -> Result<()> {
        self.state = Some(generate_scene(self.task, self.scale, episode_seed)?);
        self.controller.reset();
        self.remodify()
    }

    fn observation(&self) -> &SceneGraph {
        self.modified.as_ref().expect("environment not reset")
    }

    fn valid_mask(&self) -> Vec<bool> {
        actions::valid_mask(ActionSpace::LowLevel, self.observation())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let modified = self.modified.clone().ok_or_else(|| Error::Contract("not reset".into()))?;
        let state = self.state.as_ref().unwrap();
        let low_action = actions::decode_low_level(&modified, action)?;
        let (next, breakdown) = step_grounded(state, &low_action, &modified)?;
        let outcome = StepOutcome { reward: breakdown.total(), terminal: next.terminal };
        self.state = Some(next);
        self.remodify()?;
        Ok(outcome)
    }

    fn is_terminal(&self) -> bool {
        self.state().terminal
    }

    fn space(&self) -> ActionSpace {
        ActionSpace::LowLevel
    }

    fn max_reward(&self) -> f64 {
        self.state().max_reward()
    }
}

// --- training entry points ----------------------------------------------------------------

/// Train a low-level policy from scratch on a task distribution.
pub fn pretrain_low_level(task: TaskKind, scale: Scale, cfg: &TrainConfig) -> Result<TrainResult> {
    let mut env = crate::learning::ConstructionEnv::new(task, scale);
    train(&mut env, None, cfg)
}

/// Q-learning on controller actions only; the low-level checkpoint stays
/// frozen inside the environment.
pub fn train_controller(
    task: TaskKind,
    scale: Scale,
    frozen_low: &GraphNetParams,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let low = GreedyNeuralLow { params: frozen_low.clone() };
    let mut env = ControllerEnv::new(task, scale, low);
    train(&mut env, None, cfg)
}

/// Q-learning on the low-level buffer behind the task's heuristic controller,
/// starting from a pretrained checkpoint. Unsupported for the combined task.
pub fn finetune_low_level(
    task: TaskKind,
    scale: Scale,
    pretrained: GraphNetParams,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let mut env = ModifiedObsEnv::new(task, scale)?;
    train(&mut env, Some(pretrained), cfg)
}
