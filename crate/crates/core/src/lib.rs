//! Hierarchical scene-graph agents for a deterministic 2D block-construction
//! world.
//!
//! The crate is organized around a single observation type, the
//! [`scene::SceneGraph`]: a fully connected graph whose nodes are the objects
//! in the scene. A high-level controller rewrites the graph (moving the
//! "active" mark, cropping to a vertical band, or injecting a synthetic
//! target) before a low-level block-placing agent ever sees it, so the
//! low-level agent acts as if the world were different.
//!
//! Module map:
//! - [`scene`] — scene-graph observation and the controller's graph edits.
//! - [`physics`] — quasi-static settling model and geometric measures.
//! - [`tasks`] — procedural scene generation, rewards, termination.
//! - [`heuristics`] — hard-coded controllers for the three transfer tasks.
//! - [`graph_net`] — message-passing Q-network with hand-derived backprop.
//! - [`learning`] — replay buffer, masked ε-greedy, the learner loop.
//! - [`hierarchy`] — the two-level episode loop and training entry points.
//! - [`mcts`] — UCT search over the deterministic environment model.
//! - [`harness`] — experiment orchestration, CSV metrics, scripted oracle.

pub mod actions;
pub mod error;
pub mod geom;
pub mod graph_net;
pub mod harness;
pub mod heuristics;
pub mod hierarchy;
pub mod learning;
pub mod mcts;
pub mod physics;
pub mod scene;
pub mod tasks;

pub use error::{Error, Result};
