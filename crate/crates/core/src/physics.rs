//! Deterministic quasi-static settling model.
//!
//! A placed block descends from above the scene along a fixed x. It rests on
//! the highest of its overlapping supports (floor or placed blocks) whose
//! overlap union contains the block's center; unstable supports are skipped
//! and descent continues, so toppling is modeled as fall-through rather than
//! rotation. Sticky blocks rest on first contact and bond to everything they
//! touch. Blocks already at rest never move.
//!
//! Obstacles are not supports: if the swept path of the descending box meets
//! an obstacle box (boundary contact counts) the drop is an obstacle contact
//! and the world is returned unchanged.

use crate::error::{Error, Result};
use crate::geom::{union_cover_len, Box2, Interval};
use crate::scene::{LowLevelAction, ObjectKind, SceneGraph, LOW_LEVEL_OFFSETS};

/// Thickness of the floor slab (top surface at y = 0).
pub const FLOOR_THICKNESS: f64 = 0.7;

/// Tolerance for treating two support surfaces as the same resting level.
/// Boxes store center coordinates, so bottom = center - h/2 round-trips with
/// up to an ulp of drift against top = center + h/2 of the block beneath.
pub const LEVEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockShape {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBlock {
    pub bbox: Box2,
    pub sticky: bool,
}

/// What a sticky block attached itself to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondTarget {
    Floor,
    Placed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub block: usize,
    pub attached_to: BondTarget,
}

/// Geometric ground truth evolved by the settling model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    /// Horizontal extent of the floor: spans x in [0, scene_width].
    pub scene_width: f64,
    pub obstacles: Vec<Box2>,
    pub targets: Vec<Box2>,
    pub placed: Vec<PlacedBlock>,
    pub bonds: Vec<Bond>,
}

impl World {
    pub fn new(scene_width: f64) -> Self {
        World { scene_width, ..Default::default() }
    }

    pub fn floor_box(&self) -> Box2 {
        Box2::new(self.scene_width / 2.0, -FLOOR_THICKNESS / 2.0, self.scene_width, FLOOR_THICKNESS)
    }

    pub fn placed_boxes(&self) -> Vec<Box2> {
        self.placed.iter().map(|p| p.bbox).collect()
    }
}

/// Terminal disposition of a drop. Exactly one applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SettleResult {
    /// Came to rest at this center pose (also appended to the world).
    Rested { x: f64, y: f64 },
    /// Swept path met an obstacle; the world was left unchanged.
    ObstacleContact,
    /// Ran out of supports and left the scene; the world was left unchanged.
    FellOffScene,
}

impl SettleResult {
    pub fn is_rested(&self) -> bool {
        matches!(self, SettleResult::Rested { .. })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SupportRef {
    Floor,
    Placed(usize),
}

/// Drop a block of `shape` at fixed `x_center`, settling it into the world.
pub fn drop_block(
    world: &World,
    shape: BlockShape,
    x_center: f64,
    sticky: bool,
) -> (World, SettleResult) {
    let half_w = shape.width / 2.0;
    let block_x = Interval::new(x_center - half_w, x_center + half_w);

    // Candidate supports: floor and placed blocks with open horizontal overlap.
    let mut candidates: Vec<(SupportRef, f64, Interval)> = Vec::new();
    let floor_x = Interval::new(0.0, world.scene_width);
    if block_x.overlap_len(&floor_x) > 0.0 {
        candidates.push((SupportRef::Floor, 0.0, floor_x));
    }
    for (i, p) in world.placed.iter().enumerate() {
        if block_x.overlap_len(&p.bbox.x_interval()) > 0.0 {
            candidates.push((SupportRef::Placed(i), p.bbox.top(), p.bbox.x_interval()));
        }
    }

    let mut excluded = vec![false; candidates.len()];
    let rest_bottom = loop {
        let mut level = f64::NEG_INFINITY;
        for (i, &(_, top, _)) in candidates.iter().enumerate() {
            if !excluded[i] && top > level {
                level = top;
            }
        }
        if level == f64::NEG_INFINITY {
            // Falls forever: the swept column passes every altitude.
            let hit = world
                .obstacles
                .iter()
                .any(|ob| block_x.touches(&ob.x_interval()));
            let result =
                if hit { SettleResult::ObstacleContact } else { SettleResult::FellOffScene };
            return (world.clone(), result);
        }

        let at_level: Vec<usize> = (0..candidates.len())
            .filter(|&i| !excluded[i] && (candidates[i].1 - level).abs() <= LEVEL_TOLERANCE)
            .collect();
        let stable = sticky
            || at_level.iter().any(|&i| {
                let overlap = Interval::new(
                    block_x.lo.max(candidates[i].2.lo),
                    block_x.hi.min(candidates[i].2.hi),
                );
                overlap.contains(x_center)
            })
            || at_level.iter().any(|&i| candidates[i].0 == SupportRef::Floor);
        if stable {
            break level;
        }
        for i in at_level {
            excluded[i] = true;
        }
    };

    // Swept region: block column from the rest level upward.
    let contact = world.obstacles.iter().any(|ob| {
        block_x.touches(&ob.x_interval()) && ob.top() >= rest_bottom
    });
    if contact {
        return (world.clone(), SettleResult::ObstacleContact);
    }

    let bbox = Box2::new(x_center, rest_bottom + shape.height / 2.0, shape.width, shape.height);
    let mut out = world.clone();
    let block_idx = out.placed.len();
    if sticky {
        if bbox.touches(&out.floor_box()) {
            out.bonds.push(Bond { block: block_idx, attached_to: BondTarget::Floor });
        }
        for (i, p) in out.placed.iter().enumerate() {
            if bbox.touches(&p.bbox) {
                out.bonds.push(Bond { block: block_idx, attached_to: BondTarget::Placed(i) });
            }
        }
    }
    out.placed.push(PlacedBlock { bbox, sticky });
    (out, SettleResult::Rested { x: bbox.x, y: bbox.y })
}

/// Ground a low-level edge action against `graph` and drop the picked block.
///
/// The graph may be a controller-modified observation: the anchor's pose is
/// taken from it, not from the world, so placements relative to injected
/// targets resolve correctly. The palette is never depleted.
pub fn place_relative(
    world: &World,
    action: &LowLevelAction,
    graph: &SceneGraph,
) -> Result<(World, SettleResult)> {
    let picked = graph
        .node(action.picked)
        .ok_or_else(|| Error::InvalidAction(format!("picked node {} not in graph", action.picked)))?;
    if picked.kind != ObjectKind::AvailableBlock {
        return Err(Error::InvalidAction(format!(
            "picked node {} is not a palette block",
            action.picked
        )));
    }
    let anchor = graph
        .node(action.anchor)
        .ok_or_else(|| Error::InvalidAction(format!("anchor node {} not in graph", action.anchor)))?;
    if anchor.kind == ObjectKind::AvailableBlock {
        return Err(Error::InvalidAction(format!(
            "anchor node {} is a palette block",
            action.anchor
        )));
    }
    if action.offset_index >= LOW_LEVEL_OFFSETS {
        return Err(Error::InvalidAction(format!(
            "offset index {} out of range 0..{LOW_LEVEL_OFFSETS}",
            action.offset_index
        )));
    }
    let x_center = anchor.x + placement_offset(anchor.width, picked.width, action.offset_index);
    let shape = BlockShape { width: picked.width, height: picked.height };
    Ok(drop_block(world, shape, x_center, action.sticky))
}

/// The `index`-th of 15 evenly spaced offsets spanning ±(w_anchor + w_picked)/2.
pub fn placement_offset(anchor_width: f64, picked_width: f64, index: usize) -> f64 {
    let span = (anchor_width + picked_width) / 2.0;
    span * (index as f64 - 7.0) / 7.0
}

/// Fraction of `target`'s area covered by `block`.
pub fn overlap_fraction(block: &Box2, target: &Box2) -> f64 {
    block.intersection_area(target) / target.area()
}

/// Length of the obstacle's horizontal interval covered by the union of
/// placed blocks resting at or above the obstacle's top.
pub fn covered_length(obstacle: &Box2, placed: &[Box2]) -> f64 {
    let above: Vec<Interval> = placed
        .iter()
        .filter(|b| b.bottom() >= obstacle.top())
        .map(|b| b.x_interval())
        .collect();
    union_cover_len(obstacle.x_interval(), &above)
}

/// True iff some placed block's box contains the target's center point
/// (closed boundaries: an edge through the center counts).
pub fn target_connected(target: &Box2, world: &World) -> bool {
    world.placed.iter().any(|p| p.bbox.contains_point(target.x, target.y))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: BlockShape = BlockShape { width: 0.7, height: 0.7 };
    const MEDIUM: BlockShape = BlockShape { width: 2.1, height: 0.7 };

    #[test]
    fn drop_on_empty_floor() {
        let w = World::new(16.0);
        let (w2, r) = drop_block(&w, SMALL, 5.0, false);
        assert_eq!(r, SettleResult::Rested { x: 5.0, y: 0.35 });
        assert_eq!(w2.placed.len(), 1);
        assert!(w2.bonds.is_empty());
    }

    #[test]
    fn unstable_support_falls_through_to_floor() {
        let w = World::new(16.0);
        let (w, _) = drop_block(&w, SMALL, 5.0, false);
        // Center beyond the small block's right edge (5.35): skips it.
        let (w2, r) = drop_block(&w, MEDIUM, 5.9, false);
        assert_eq!(r, SettleResult::Rested { x: 5.9, y: 0.35 });
        // The earlier block did not move (quasi-static).
        assert_eq!(w2.placed[0].bbox, Box2::new(5.0, 0.35, 0.7, 0.7));
    }

    #[test]
    fn sticky_never_falls_through() {
        let w = World::new(16.0);
        let (w, _) = drop_block(&w, SMALL, 5.0, false);
        let (w2, r) = drop_block(&w, MEDIUM, 5.9, true);
        match r {
            SettleResult::Rested { x, y } => {
                assert_eq!(x, 5.9);
                assert!((y - 1.05).abs() < 1e-9);
            }
            other => panic!("expected rest, got {other:?}"),
        }
        assert_eq!(w2.bonds, vec![Bond { block: 1, attached_to: BondTarget::Placed(0) }]);
    }

    #[test]
    fn stable_when_center_inside_support() {
        let w = World::new(16.0);
        let (w, _) = drop_block(&w, MEDIUM, 5.0, false);
        let (_, r) = drop_block(&w, SMALL, 5.8, false);
        // Support interval [3.95, 6.05] contains 5.8: rests on top.
        match r {
            SettleResult::Rested { x, y } => {
                assert_eq!(x, 5.8);
                assert!((y - 1.05).abs() < 1e-9);
            }
            other => panic!("expected rest, got {other:?}"),
        }
    }

    #[test]
    fn drop_path_through_obstacle_is_contact() {
        let mut w = World::new(16.0);
        w.obstacles.push(Box2::new(5.0, 1.75, 2.1, 0.2));
        let (w2, r) = drop_block(&w, SMALL, 5.0, false);
        assert_eq!(r, SettleResult::ObstacleContact);
        assert_eq!(w2, w);
    }

    #[test]
    fn boundary_touch_with_obstacle_counts() {
        let mut w = World::new(16.0);
        w.obstacles.push(Box2::new(5.0, 1.75, 2.1, 0.2));
        // Block's right edge exactly at the obstacle's left edge (3.95).
        let (_, r) = drop_block(&w, SMALL, 3.6, false);
        assert_eq!(r, SettleResult::ObstacleContact);
        // A hair to the left clears it.
        let (_, r) = drop_block(&w, SMALL, 3.55, false);
        assert!(r.is_rested());
    }

    #[test]
    fn resting_above_obstacle_top_is_clear() {
        let mut w = World::new(16.0);
        w.obstacles.push(Box2::new(5.0, 1.75, 2.1, 0.2));
        let (w, _) = drop_block(&w, MEDIUM, 2.5, false);
        let (w, _) = drop_block(&w, MEDIUM, 2.5, false);
        let (w, _) = drop_block(&w, MEDIUM, 2.5, false);
        // Tower top at 2.1 > obstacle top 1.85: a bridge overhanging the
        // obstacle's column rests without contact.
        let (w2, r) = drop_block(&w, BlockShape { width: 3.5, height: 0.7 }, 3.4, false);
        assert_eq!(r, SettleResult::Rested { x: 3.4, y: 2.45 });
        assert_eq!(w2.placed.len(), 4);
    }

    #[test]
    fn fell_off_scene_when_no_support() {
        let w = World::new(16.0);
        let (w2, r) = drop_block(&w, SMALL, 17.0, false);
        assert_eq!(r, SettleResult::FellOffScene);
        assert!(w2.placed.is_empty());
    }

    #[test]
    fn placement_offset_grid() {
        // Middle of 15 is exactly zero.
        assert_eq!(placement_offset(2.1, 0.7, 7), 0.0);
        // Extreme left: -(w_a + w_p)/2.
        assert!((placement_offset(2.1, 0.7, 0) + 1.4).abs() < 1e-12);
        assert!((placement_offset(2.1, 0.7, 14) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn overlap_fraction_examples() {
        let a = Box2::new(0.0, 0.0, 2.0, 1.0);
        assert_eq!(overlap_fraction(&a, &a), 1.0);
        let disjoint = Box2::new(5.0, 0.0, 2.0, 1.0);
        assert_eq!(overlap_fraction(&disjoint, &a), 0.0);
        // Same size, shifted laterally by 10% of width.
        let shifted = Box2::new(0.2, 0.0, 2.0, 1.0);
        assert!((overlap_fraction(&shifted, &a) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn covered_length_examples() {
        let obstacle = Box2::new(5.0, 1.75, 2.1, 0.2);
        assert_eq!(covered_length(&obstacle, &[]), 0.0);
        let spanning = Box2::new(5.0, 2.45, 3.5, 0.7);
        assert!((covered_length(&obstacle, &[spanning]) - 2.1).abs() < 1e-12);
        // Two half-overlapping covering blocks: union, not sum.
        let left = Box2::new(4.5, 2.45, 2.1, 0.7);
        let right = Box2::new(5.5, 2.45, 2.1, 0.7);
        let cover = covered_length(&obstacle, &[left, right]);
        assert!((cover - 2.1).abs() < 1e-12);
        // Below the obstacle top: does not count.
        let below = Box2::new(5.0, 0.35, 3.5, 0.7);
        assert_eq!(covered_length(&obstacle, &[below]), 0.0);
    }

    #[test]
    fn target_connected_boundary_rule() {
        let mut w = World::new(16.0);
        let target = Box2::new(5.0, 1.05, 0.7, 0.7);
        assert!(!target_connected(&target, &w));
        w.placed.push(PlacedBlock { bbox: Box2::new(5.0, 1.05, 0.7, 0.7), sticky: false });
        assert!(target_connected(&target, &w));
        // Block edge exactly through the target center: closed boundary counts.
        w.placed[0].bbox = Box2::new(5.35, 1.05, 0.7, 0.7);
        assert!(target_connected(&target, &w));
        w.placed[0].bbox = Box2::new(7.0, 1.05, 0.7, 0.7);
        assert!(!target_connected(&target, &w));
    }
}
