//! Hard-coded controllers for the three transfer tasks.
//!
//! Each controller reads the true observation and emits a graph modification;
//! none of them learns. They exist as the non-learned baseline and as the
//! driver for oracle-policy integration tests. There is deliberately no
//! heuristic for the combined task.

use crate::geom::Box2;
use crate::physics::covered_length;
use crate::scene::{injected_target_pose, ControllerAction, ObjectKind, SceneGraph, SceneNode};
use crate::tasks::{COVER_FRACTION, FILL_OVERLAP, OBSTACLE_LIFT};

/// Boxes of all placed-block nodes in an observation.
pub fn placed_boxes(g: &SceneGraph) -> Vec<Box2> {
    g.nodes_of_kind(ObjectKind::PlacedBlock).map(|n| n.bbox()).collect()
}

/// A target counts as filled when a same-width placed block overlaps ≥ 90%.
pub fn target_filled(g: &SceneGraph, target: &SceneNode) -> bool {
    let tb = target.bbox();
    g.nodes_of_kind(ObjectKind::PlacedBlock).any(|p| {
        (p.width - target.width).abs() < 1e-9
            && p.bbox().intersection_area(&tb) / tb.area() >= FILL_OVERLAP
    })
}

/// True when some placed block's box contains the point (closed boundaries).
pub fn point_connected(g: &SceneGraph, x: f64, y: f64) -> bool {
    g.nodes_of_kind(ObjectKind::PlacedBlock).any(|p| p.bbox().contains_point(x, y))
}

/// Grid layer an obstacle slab floats in.
pub fn obstacle_layer(ob: &SceneNode) -> u32 {
    (((ob.y - ob.height / 2.0) - OBSTACLE_LIFT) / crate::scene::BLOCK_HEIGHT).round().max(0.0)
        as u32
}

fn palette_node(g: &SceneGraph, width: f64) -> Option<u32> {
    g.nodes_of_kind(ObjectKind::AvailableBlock)
        .find(|n| (n.width - width).abs() < 1e-9)
        .map(|n| n.id)
}

// --- editing ---------------------------------------------------------------------

/// Step counter for the editing controller's fixed schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicEditState {
    pub step: u32,
}

/// Steps the editing controller keeps the obstacle active: long enough for
/// the low-level agent to raise a tower past the slab and bridge it
/// (base placement, one block per layer, the bridge, plus slack).
pub fn edit_cover_steps(obstacle: &SceneNode) -> u32 {
    let k = obstacle_layer(obstacle) + (obstacle.width / 3.5).ceil() as u32 + 3;
    k.min(10)
}

/// Editing controller: activate the obstacle under the goal target for a
/// fixed number of steps, then activate the target itself.
pub fn heuristic_edit(
    g: &SceneGraph,
    state: HeuristicEditState,
) -> (ControllerAction, HeuristicEditState) {
    let next = HeuristicEditState { step: state.step + 1 };
    let Some(goal) = g.nodes.iter().find(|n| n.active && n.kind == ObjectKind::Target) else {
        return (ControllerAction::NoOp, next);
    };
    // The obstacle under the target: overlapping column, highest top below.
    let under = g
        .nodes_of_kind(ObjectKind::Obstacle)
        .filter(|ob| {
            ob.bbox().x_interval().touches(&goal.bbox().x_interval())
                && ob.bbox().top() <= goal.bbox().bottom()
        })
        .max_by(|a, b| a.bbox().top().total_cmp(&b.bbox().top()).then(b.id.cmp(&a.id)));
    match under {
        Some(ob) if state.step < edit_cover_steps(ob) => {
            (ControllerAction::EditActive(ob.id), next)
        }
        _ => (ControllerAction::EditActive(goal.id), next),
    }
}

// --- deletion --------------------------------------------------------------------

/// Deletion controller: band around the lowest unfilled target. Stateless.
/// Ties break by smaller x, then smaller id. All filled: no-op.
pub fn heuristic_delete(g: &SceneGraph) -> ControllerAction {
    g.nodes_of_kind(ObjectKind::Target)
        .filter(|t| !target_filled(g, t))
        .min_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)).then(a.id.cmp(&b.id)))
        .map_or(ControllerAction::NoOp, |t| ControllerAction::DeleteBand(t.id))
}

// --- addition --------------------------------------------------------------------

/// Progress marker for the addition controller. The phase is re-derived from
/// the observation each step, so the struct only counts steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicAddState {
    pub steps: u32,
}

/// Addition controller: for each obstacle left to right, inject a small
/// target on its left until connected, then on its right, then a large
/// target on top; move on once the obstacle is ≥ 99% covered.
pub fn heuristic_add(
    g: &SceneGraph,
    state: HeuristicAddState,
) -> (ControllerAction, HeuristicAddState) {
    let next = HeuristicAddState { steps: state.steps + 1 };
    let placed = placed_boxes(g);
    let mut obstacles: Vec<&SceneNode> = g.nodes_of_kind(ObjectKind::Obstacle).collect();
    obstacles.sort_by(|a, b| a.x.total_cmp(&b.x));
    let (Some(small), Some(large)) = (palette_node(g, 0.7), palette_node(g, 3.5)) else {
        return (ControllerAction::NoOp, next);
    };
    for ob in obstacles {
        let bbox = ob.bbox();
        if covered_length(&bbox, &placed) >= COVER_FRACTION * bbox.width {
            continue;
        }
        let left = injected_target_pose(0.7, 0.7, &bbox, 0);
        if !point_connected(g, left.x, left.y) {
            return (ControllerAction::AddTarget { u: small, v: ob.id, x: 0 }, next);
        }
        let right = injected_target_pose(0.7, 0.7, &bbox, 6);
        if !point_connected(g, right.x, right.y) {
            return (ControllerAction::AddTarget { u: small, v: ob.id, x: 6 }, next);
        }
        return (ControllerAction::AddTarget { u: large, v: ob.id, x: 3 }, next);
    }
    (ControllerAction::NoOp, next)
}
