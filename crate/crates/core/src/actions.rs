//! Flattened action spaces shared by the Q-network heads, the masks, and the
//! environment decoders.
//!
//! A policy's Q output is a flat vector laid out by this module: node actions
//! come first (node index × per-node arity), then edge actions (edge index in
//! [`enumerate_edges`] order × per-edge arity). Invalid entries are masked
//! rather than removed so indices stay stable for a given graph.

use crate::error::{Error, Result};
use crate::scene::{
    enumerate_edges, ControllerAction, LowLevelAction, ObjectKind, SceneGraph,
    ADD_TARGET_OFFSETS, LOW_LEVEL_OFFSETS,
};

/// Per-edge arity of the low-level agent: 15 offsets × {plain, sticky}.
pub const LOW_LEVEL_PER_EDGE: usize = LOW_LEVEL_OFFSETS * 2;
/// Per-node arity of the combined controller: edit or delete.
pub const COMBINED_NODE_ARITY: usize = 2;

/// Which policy's actions a flat index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionSpace {
    /// Low-level block placement: edge actions, arity 30.
    LowLevel,
    /// Editing controller: one action per node (move the active mark).
    EditController,
    /// Deletion controller: one action per node (band crop).
    DeleteController,
    /// Addition controller: edge actions, arity 7 (lateral offset).
    AddController,
    /// Combined controller: 2 node actions then 7 edge actions.
    CombinedController,
}

impl ActionSpace {
    pub fn per_node(&self) -> usize {
        match self {
            ActionSpace::LowLevel | ActionSpace::AddController => 0,
            ActionSpace::EditController | ActionSpace::DeleteController => 1,
            ActionSpace::CombinedController => COMBINED_NODE_ARITY,
        }
    }

    pub fn per_edge(&self) -> usize {
        match self {
            ActionSpace::LowLevel => LOW_LEVEL_PER_EDGE,
            ActionSpace::EditController | ActionSpace::DeleteController => 0,
            ActionSpace::AddController | ActionSpace::CombinedController => ADD_TARGET_OFFSETS,
        }
    }

    pub fn flat_len(&self, g: &SceneGraph) -> usize {
        let n = g.len();
        let m = n * n.saturating_sub(1);
        n * self.per_node() + m * self.per_edge()
    }
}

/// Two-stage view of a flat action space: stage one picks a node or an edge
/// (an "element"), stage two picks the remaining dimension.
impl ActionSpace {
    /// Number of stage-one elements for a graph with `n` nodes.
    pub fn element_count(&self, n: usize) -> usize {
        let m = n * n.saturating_sub(1);
        match (self.per_node(), self.per_edge()) {
            (0, _) => m,
            (_, 0) => n,
            _ => n + m,
        }
    }

    /// Arity of the second stage for the given element.
    pub fn element_arity(&self, element: usize, n: usize) -> usize {
        match (self.per_node(), self.per_edge()) {
            (0, pe) => pe,
            (pn, 0) => pn,
            (pn, pe) => {
                if element < n {
                    pn
                } else {
                    pe
                }
            }
        }
    }

    /// Flat index of (element, sub).
    pub fn flat_of(&self, element: usize, sub: usize, n: usize) -> usize {
        match (self.per_node(), self.per_edge()) {
            (0, pe) => element * pe + sub,
            (pn, 0) => element * pn + sub,
            (pn, pe) => {
                if element < n {
                    element * pn + sub
                } else {
                    n * pn + (element - n) * pe + sub
                }
            }
        }
    }
}

fn edge_is_placement(g: &SceneGraph, u: u32, v: u32) -> bool {
    let from = g.node(u).map(|n| n.kind) == Some(ObjectKind::AvailableBlock);
    let to = g.node(v).map(|n| n.kind).is_some_and(|k| k != ObjectKind::AvailableBlock);
    from && to
}

/// Validity mask over the flat action vector for `space` on `g`.
pub fn valid_mask(space: ActionSpace, g: &SceneGraph) -> Vec<bool> {
    let edges = enumerate_edges(g);
    let mut mask = Vec::with_capacity(space.flat_len(g));
    if space.per_node() > 0 {
        for node in &g.nodes {
            let ok = node.kind != ObjectKind::AvailableBlock;
            for _ in 0..space.per_node() {
                mask.push(ok);
            }
        }
    }
    if space.per_edge() > 0 {
        for &(u, v) in &edges {
            let ok = edge_is_placement(g, u, v);
            for _ in 0..space.per_edge() {
                mask.push(ok);
            }
        }
    }
    mask
}

/// Decode a flat low-level index into an edge placement action.
pub fn decode_low_level(g: &SceneGraph, flat: usize) -> Result<LowLevelAction> {
    let edges = enumerate_edges(g);
    let edge_idx = flat / LOW_LEVEL_PER_EDGE;
    let sub = flat % LOW_LEVEL_PER_EDGE;
    let &(picked, anchor) = edges
        .get(edge_idx)
        .ok_or_else(|| Error::Contract(format!("low-level action index {flat} out of range")))?;
    Ok(LowLevelAction { picked, anchor, offset_index: sub / 2, sticky: sub % 2 == 1 })
}

pub fn encode_low_level(g: &SceneGraph, action: &LowLevelAction) -> Result<usize> {
    let edges = enumerate_edges(g);
    let edge_idx = edges
        .iter()
        .position(|&(u, v)| u == action.picked && v == action.anchor)
        .ok_or_else(|| {
            Error::Contract(format!("edge ({}, {}) not in graph", action.picked, action.anchor))
        })?;
    Ok(edge_idx * LOW_LEVEL_PER_EDGE + action.offset_index * 2 + action.sticky as usize)
}

/// Decode a flat controller index for the given controller space.
pub fn decode_controller(space: ActionSpace, g: &SceneGraph, flat: usize) -> Result<ControllerAction> {
    let n = g.len();
    let oob = || Error::Contract(format!("controller action index {flat} out of range"));
    match space {
        ActionSpace::EditController => {
            let node = g.nodes.get(flat).ok_or_else(oob)?;
            Ok(ControllerAction::EditActive(node.id))
        }
        ActionSpace::DeleteController => {
            let node = g.nodes.get(flat).ok_or_else(oob)?;
            Ok(ControllerAction::DeleteBand(node.id))
        }
        ActionSpace::AddController => {
            let edges = enumerate_edges(g);
            let &(u, v) = edges.get(flat / ADD_TARGET_OFFSETS).ok_or_else(oob)?;
            Ok(ControllerAction::AddTarget { u, v, x: flat % ADD_TARGET_OFFSETS })
        }
        ActionSpace::CombinedController => {
            let node_section = n * COMBINED_NODE_ARITY;
            if flat < node_section {
                let node = g.nodes.get(flat / COMBINED_NODE_ARITY).ok_or_else(oob)?;
                Ok(match flat % COMBINED_NODE_ARITY {
                    0 => ControllerAction::EditActive(node.id),
                    _ => ControllerAction::DeleteBand(node.id),
                })
            } else {
                let rest = flat - node_section;
                let edges = enumerate_edges(g);
                let &(u, v) = edges.get(rest / ADD_TARGET_OFFSETS).ok_or_else(oob)?;
                Ok(ControllerAction::AddTarget { u, v, x: rest % ADD_TARGET_OFFSETS })
            }
        }
        ActionSpace::LowLevel => Err(Error::Contract("low-level space has no controller decode".into())),
    }
}
