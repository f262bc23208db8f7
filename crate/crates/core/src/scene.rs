//! The scene-graph observation and the controller's graph modifications.
//!
//! A scene is observed as a fully connected directed graph over its objects.
//! Node attributes carry pose, size, kind, the single "active" mark, and the
//! sticky flag of placed blocks. The edge set is implicit: every ordered pair
//! of distinct nodes, enumerated in a fixed order so that per-edge Q-value
//! vectors are reproducible.
//!
//! All operations are pure: they take a graph by reference and return a new
//! one, so snapshots can be shared freely across rollout workers.

use crate::error::{Error, Result};
use crate::geom::Box2;
use crate::tasks::TaskFamily;
use std::fmt::Write as _;

/// Height shared by every block and target in the catalog.
pub const BLOCK_HEIGHT: f64 = 0.7;
/// Catalog widths: small, medium, large.
pub const BLOCK_WIDTHS: [f64; 3] = [0.7, 2.1, 3.5];
/// Vertical band half-width kept by [`delete_band`]: 1.5 block heights.
/// Written as its decimal value so the boundary predicate matches the
/// documented 1.05 exactly.
pub const BAND_HALF_WIDTH: f64 = 1.05;
/// Discretization of the low-level placement offset.
pub const LOW_LEVEL_OFFSETS: usize = 15;
/// Discretization of the controller's add-target lateral offset.
pub const ADD_TARGET_OFFSETS: usize = 7;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Floor,
    Obstacle,
    Target,
    PlacedBlock,
    AvailableBlock,
}

impl ObjectKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ObjectKind::Floor => "floor",
            ObjectKind::Obstacle => "obstacle",
            ObjectKind::Target => "target",
            ObjectKind::PlacedBlock => "placed",
            ObjectKind::AvailableBlock => "available",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "floor" => ObjectKind::Floor,
            "obstacle" => ObjectKind::Obstacle,
            "target" => ObjectKind::Target,
            "placed" => ObjectKind::PlacedBlock,
            "available" => ObjectKind::AvailableBlock,
            _ => return None,
        })
    }

    /// Index used by the one-hot feature encoding.
    pub fn index(&self) -> usize {
        match self {
            ObjectKind::Floor => 0,
            ObjectKind::Obstacle => 1,
            ObjectKind::Target => 2,
            ObjectKind::PlacedBlock => 3,
            ObjectKind::AvailableBlock => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneNode {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub kind: ObjectKind,
    pub active: bool,
    pub sticky: bool,
}

impl SceneNode {
    pub fn bbox(&self) -> Box2 {
        Box2::new(self.x, self.y, self.width, self.height)
    }
}

/// Fully connected scene graph. Edges are derived, not stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
}

/// Low-level agent action: place a palette block relative to another object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LowLevelAction {
    /// Palette node being picked up.
    pub picked: NodeId,
    /// Scene node the placement is relative to.
    pub anchor: NodeId,
    /// Index into the 15-step lateral offset grid.
    pub offset_index: usize,
    pub sticky: bool,
}

/// High-level controller action: a graph modification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerAction {
    /// Move the active mark to this node.
    EditActive(NodeId),
    /// Keep only objects within the vertical band around this node.
    DeleteBand(NodeId),
    /// Inject a synthetic target shaped like palette node `u`, laterally
    /// placed relative to node `v` by offset index `x` (of 7).
    AddTarget { u: NodeId, v: NodeId, x: usize },
    NoOp,
}

impl SceneGraph {
    pub fn node(&self, id: NodeId) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn active_node(&self) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.active)
    }

    pub fn nodes_of_kind(&self, kind: ObjectKind) -> impl Iterator<Item = &SceneNode> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    fn require(&self, id: NodeId) -> Result<&SceneNode> {
        self.node(id)
            .ok_or_else(|| Error::InvalidAction(format!("unknown node id {id}")))
    }
}

/// All ordered pairs of distinct node ids, sorted by (source, destination).
///
/// The order is what makes flattened per-edge Q-vectors stable across runs.
pub fn enumerate_edges(g: &SceneGraph) -> Vec<(NodeId, NodeId)> {
    let mut ids: Vec<NodeId> = g.nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    let mut edges = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1));
    for &u in &ids {
        for &v in &ids {
            if u != v {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn require_scene_object(node: &SceneNode, op: &str) -> Result<()> {
    if node.kind == ObjectKind::AvailableBlock {
        return Err(Error::InvalidAction(format!(
            "{op} may not reference palette node {}",
            node.id
        )));
    }
    Ok(())
}

/// Move the active mark so it sits on `v` and nowhere else.
pub fn edit_active(g: &SceneGraph, v: NodeId) -> Result<SceneGraph> {
    let node = g.require(v)?;
    require_scene_object(node, "edit")?;
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.active = n.id == v;
    }
    Ok(out)
}

/// Keep only scene objects whose y-center lies within ±1.5 block heights of
/// `v`'s, then shift the kept scene objects down (or up) so the lowest bottom
/// sits exactly at zero. The floor and the palette are exempt from both the
/// cut and the shift.
pub fn delete_band(g: &SceneGraph, v: NodeId) -> Result<SceneGraph> {
    let center = {
        let node = g.require(v)?;
        require_scene_object(node, "delete")?;
        node.y
    };
    let kept: Vec<SceneNode> = g
        .nodes
        .iter()
        .filter(|n| match n.kind {
            ObjectKind::Floor | ObjectKind::AvailableBlock => true,
            _ => (n.y - center).abs() <= BAND_HALF_WIDTH,
        })
        .copied()
        .collect();
    let min_bottom = kept
        .iter()
        .filter(|n| !matches!(n.kind, ObjectKind::Floor | ObjectKind::AvailableBlock))
        .map(|n| n.y - n.height / 2.0)
        .fold(f64::INFINITY, f64::min);
    let mut out = SceneGraph { nodes: kept };
    if min_bottom.is_finite() {
        for n in &mut out.nodes {
            if !matches!(n.kind, ObjectKind::Floor | ObjectKind::AvailableBlock) {
                n.y -= min_bottom;
            }
        }
    }
    Ok(out)
}

/// Pose of the target injected by [`add_target`], exposed so controllers can
/// recompute where their own injections landed.
///
/// The lateral offset is the `x`-th of 7 evenly spaced values spanning
/// ±(w_u + w_v)/2. If the injected box would horizontally overlap `v` it is
/// seated on top of `v`; otherwise it is placed beside, bottoms aligned.
pub fn injected_target_pose(u_width: f64, u_height: f64, v: &Box2, x: usize) -> Box2 {
    let span = (u_width + v.width) / 2.0;
    let offset = span * (x as f64 - 3.0) / 3.0;
    let cx = v.x + offset;
    let horizontal_overlap =
        (cx + u_width / 2.0).min(v.right()) - (cx - u_width / 2.0).max(v.left());
    // The extreme offsets are edge-to-edge: their true overlap is zero but
    // floats land within a few ulps of it, so the test needs a tolerance.
    let cy = if horizontal_overlap > 1e-9 {
        v.top() + u_height / 2.0
    } else {
        v.bottom() + u_height / 2.0
    };
    Box2::new(cx, cy, u_width, u_height)
}

/// Append a synthetic target shaped like palette node `u`, placed relative to
/// scene node `v`. Existing nodes are untouched; the new node gets a fresh id.
pub fn add_target(g: &SceneGraph, u: NodeId, v: NodeId, x: usize) -> Result<SceneGraph> {
    let picked = g.require(u)?;
    if picked.kind != ObjectKind::AvailableBlock {
        return Err(Error::InvalidAction(format!(
            "add-target start vertex {u} must be a palette block"
        )));
    }
    let anchor = g.require(v)?;
    require_scene_object(anchor, "add-target end vertex")?;
    if x >= ADD_TARGET_OFFSETS {
        return Err(Error::InvalidAction(format!(
            "add-target offset {x} out of range 0..{ADD_TARGET_OFFSETS}"
        )));
    }
    let pose = injected_target_pose(picked.width, picked.height, &anchor.bbox(), x);
    let mut out = g.clone();
    let id = out.nodes.iter().map(|n| n.id).max().map_or(0, |m| m + 1);
    out.nodes.push(SceneNode {
        id,
        x: pose.x,
        y: pose.y,
        width: pose.width,
        height: pose.height,
        kind: ObjectKind::Target,
        active: false,
        sticky: false,
    });
    Ok(out)
}

/// Dispatch a controller action against the graph.
///
/// In the combined task an add-target action only applies when the episode's
/// underlying sub-task is the addition task; otherwise it is a no-op.
pub fn apply_controller_action(
    g: &SceneGraph,
    action: &ControllerAction,
    combined: bool,
    episode_family: TaskFamily,
) -> Result<SceneGraph> {
    match *action {
        ControllerAction::EditActive(v) => edit_active(g, v),
        ControllerAction::DeleteBand(v) => delete_band(g, v),
        ControllerAction::AddTarget { u, v, x } => {
            if combined && episode_family != TaskFamily::Addition {
                Ok(g.clone())
            } else {
                add_target(g, u, v, x)
            }
        }
        ControllerAction::NoOp => Ok(g.clone()),
    }
}

// --- canonical record format -------------------------------------------------
//
// One node per line: id,kind,x,y,width,height,active,sticky
// Used by episode logs and golden-file tests; field order is fixed.

pub fn write_records(g: &SceneGraph) -> String {
    let mut out = String::new();
    for n in &g.nodes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            n.id,
            n.kind.tag(),
            n.x,
            n.y,
            n.width,
            n.height,
            n.active as u8,
            n.sticky as u8
        );
    }
    out
}

pub fn read_records(text: &str) -> Result<SceneGraph> {
    let mut nodes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Config(format!(
                "scene record line {}: expected 8 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("scene record line {}: bad {what}", lineno + 1)))
        };
        let kind = ObjectKind::from_tag(fields[1]).ok_or_else(|| {
            Error::Config(format!("scene record line {}: unknown kind `{}`", lineno + 1, fields[1]))
        })?;
        nodes.push(SceneNode {
            id: fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("scene record line {}: bad id", lineno + 1)))?,
            kind,
            x: parse_f(fields[2], "x")?,
            y: parse_f(fields[3], "y")?,
            width: parse_f(fields[4], "width")?,
            height: parse_f(fields[5], "height")?,
            active: fields[6] == "1",
            sticky: fields[7] == "1",
        });
    }
    Ok(SceneGraph { nodes })
}
