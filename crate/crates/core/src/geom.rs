//! Axis-aligned boxes and 1-D interval arithmetic shared by the scene graph
//! and the settling model. All geometry is in world units, f64.

/// Closed 1-D interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn len(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    /// Length of the open overlap with `other` (0 when they merely touch).
    pub fn overlap_len(&self, other: &Interval) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }

    /// Closed-interval intersection test: shared boundary points count.
    pub fn touches(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Axis-aligned box given by center and full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Box2 {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Box2 { x, y, width, height }
    }

    pub fn x_interval(&self) -> Interval {
        Interval::new(self.x - self.width / 2.0, self.x + self.width / 2.0)
    }

    pub fn y_interval(&self) -> Interval {
        Interval::new(self.y - self.height / 2.0, self.y + self.height / 2.0)
    }

    pub fn bottom(&self) -> f64 {
        self.y - self.height / 2.0
    }

    pub fn top(&self) -> f64 {
        self.y + self.height / 2.0
    }

    pub fn left(&self) -> f64 {
        self.x - self.width / 2.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.width / 2.0
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Closed-boundary intersection: sharing an edge or corner counts.
    pub fn touches(&self, other: &Box2) -> bool {
        self.x_interval().touches(&other.x_interval())
            && self.y_interval().touches(&other.y_interval())
    }

    /// Area of the (open) intersection.
    pub fn intersection_area(&self, other: &Box2) -> f64 {
        self.x_interval().overlap_len(&other.x_interval())
            * self.y_interval().overlap_len(&other.y_interval())
    }

    /// Closed-boundary point containment.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x_interval().contains(x) && self.y_interval().contains(y)
    }
}

/// Total length of `window` covered by the union of `intervals`.
///
/// Classic sweep over sorted clipped intervals; used by coverage rewards and
/// as its own test oracle is a brute-force grid in the test suite.
pub fn union_cover_len(window: Interval, intervals: &[Interval]) -> f64 {
    let mut clipped: Vec<Interval> = intervals
        .iter()
        .filter_map(|iv| {
            let lo = iv.lo.max(window.lo);
            let hi = iv.hi.min(window.hi);
            (hi > lo).then_some(Interval::new(lo, hi))
        })
        .collect();
    clipped.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut total = 0.0;
    let mut cursor = f64::NEG_INFINITY;
    for iv in clipped {
        let lo = iv.lo.max(cursor);
        if iv.hi > lo {
            total += iv.hi - lo;
            cursor = iv.hi;
        }
    }
    total
}
