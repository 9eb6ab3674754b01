use super::{RoadGeometry, VehicleParams, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Oriented rectangle occupied by a vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    /// The rear axle sits on the rear edge of the body and the body extends
    /// `length` ahead of it along the heading.
    pub fn from_state(s: &VehicleState, params: &VehicleParams) -> Self {
        let (sin, cos) = s.phi.sin_cos();
        let half = 0.5 * params.length;
        Self {
            center: Vec2::new(s.x + half * cos, s.y + half * sin),
            heading: s.phi,
            length: params.length,
            width: params.width,
        }
    }

    fn axes(&self) -> [Vec2; 2] {
        let (sin, cos) = self.heading.sin_cos();
        [Vec2::new(cos, sin), Vec2::new(-sin, cos)]
    }

    /// Corners in counter-clockwise order starting at rear-right.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, n] = self.axes();
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        let c = self.center;
        let at = |sl: f64, sw: f64| Vec2::new(c.x + sl * hl * u.x + sw * hw * n.x, c.y + sl * hl * u.y + sw * hw * n.y);
        [at(-1.0, -1.0), at(1.0, -1.0), at(1.0, 1.0), at(-1.0, 1.0)]
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in self.corners() {
            let d = p.dot(axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

/// Separating-axis test over the four edge normals. Touching rectangles
/// count as intersecting.
pub fn detect_collision(f1: &Footprint, f2: &Footprint) -> bool {
    f1.axes().into_iter().chain(f2.axes()).all(|axis| {
        let (a0, a1) = f1.project(axis);
        let (b0, b1) = f2.project(axis);
        a1 >= b0 && b1 >= a0
    })
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.sub(Vec2::new(a.x + t * ab.x, a.y + t * ab.y)).norm()
}

fn edges(f: &Footprint) -> [(Vec2, Vec2); 4] {
    let c = f.corners();
    [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
}

/// Minimum separation between two footprints; 0 when they intersect.
pub fn soft_distance(f1: &Footprint, f2: &Footprint) -> f64 {
    if detect_collision(f1, f2) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, other) in f1.corners().iter().map(|p| (p, f2)).chain(f2.corners().iter().map(|p| (p, f1))) {
        for (a, b) in edges(other) {
            best = best.min(point_segment_distance(*p, a, b));
        }
    }
    best
}

/// Off-road region at the end of the acceleration lane: `x >= 0`, `y < -w/2`.
fn in_lane_end_block(p: Vec2, geo: &RoadGeometry) -> bool {
    p.x >= 0.0 && p.y < -0.5 * geo.lane_width
}

fn crosses_lane_end_wall(a: Vec2, b: Vec2, geo: &RoadGeometry) -> bool {
    if (a.x < 0.0) == (b.x < 0.0) {
        return false;
    }
    let t = -a.x / (b.x - a.x);
    let y = a.y + t * (b.y - a.y);
    y < -0.5 * geo.lane_width
}

/// True iff the footprint reaches outside the drivable area: beyond the
/// outer edges of the two-lane section, or into the block past the end of
/// the acceleration lane.
pub fn road_violation(f: &Footprint, geo: &RoadGeometry) -> bool {
    let upper = 0.5 * geo.lane_width;
    let lower = -1.5 * geo.lane_width;
    let corners = f.corners();
    if corners.iter().any(|p| p.y > upper || p.y < lower || in_lane_end_block(*p, geo)) {
        return true;
    }
    edges(f).iter().any(|(a, b)| crosses_lane_end_wall(*a, *b, geo))
}

/// Minimum separation between the footprint and the road edge; 0 on violation.
pub fn soft_edge_distance(f: &Footprint, geo: &RoadGeometry) -> f64 {
    if road_violation(f, geo) {
        return 0.0;
    }
    let upper = 0.5 * geo.lane_width;
    let lower = -1.5 * geo.lane_width;
    let block_y = -0.5 * geo.lane_width;
    let mut best = f64::INFINITY;
    for p in f.corners() {
        best = best.min(upper - p.y).min(p.y - lower);
        let dx = (-p.x).max(0.0);
        let dy = (p.y - block_y).max(0.0);
        best = best.min(dx.hypot(dy));
    }
    let vertex = Vec2::new(0.0, block_y);
    for (a, b) in edges(f) {
        best = best.min(point_segment_distance(vertex, a, b));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::Road;

    fn rect(cx: f64, cy: f64, heading: f64) -> Footprint {
        Footprint {
            center: Vec2::new(cx, cy),
            heading,
            length: 4.5,
            width: 2.0,
        }
    }

    fn at(x: f64, y: f64, phi: f64) -> Footprint {
        let s = VehicleState {
            x,
            y,
            v: 0.0,
            phi,
            road: Road::Main,
        };
        Footprint::from_state(&s, &VehicleParams::default())
    }

    #[test]
    fn collision_examples() {
        assert!(detect_collision(&rect(0.0, 0.0, 0.0), &rect(0.0, 0.0, 0.0)));
        assert!(!detect_collision(&rect(0.0, 0.0, 0.0), &rect(10.0, 0.0, 0.0)));
        assert!(detect_collision(&rect(0.0, 0.0, 0.0), &rect(0.0, 1.9, 0.0)));
        assert!(!detect_collision(&rect(0.0, 0.0, 0.0), &rect(0.0, 2.1, 0.0)));
        // Bounding boxes overlap here but the rotated bodies do not.
        assert!(!detect_collision(&rect(0.0, 0.0, 0.0), &rect(4.2, 2.9, 0.7)));
        assert!((soft_distance(&rect(0.0, 0.0, 0.0), &rect(4.2, 2.9, 0.7)) - 0.465_455_870_956).abs() < 1e-9);
    }

    #[test]
    fn distance_examples() {
        assert!((soft_distance(&rect(0.0, 0.0, 0.0), &rect(0.0, 3.0, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(soft_distance(&rect(0.0, 0.0, 0.0), &rect(0.0, 2.0, 0.0)), 0.0);
        assert_eq!(soft_distance(&rect(0.0, 0.0, 0.0), &rect(1.0, 0.5, 0.3)), 0.0);
    }

    #[test]
    fn edge_distance_example() {
        let geo = RoadGeometry::default();
        let d = soft_edge_distance(&at(-50.0, 0.0, 0.0), &geo);
        assert!((d - 0.875).abs() < 1e-12);
    }

    #[test]
    fn road_violation_examples() {
        let geo = RoadGeometry::default();
        assert!(!road_violation(&at(-50.0, 0.0, 0.0), &geo));
        assert!(road_violation(&at(-50.0, -1.5 * geo.lane_width, 0.0), &geo));
        assert!(road_violation(&at(5.0, -geo.lane_width, 0.0), &geo));
        // Still on the acceleration lane with the nose past O.
        assert!(road_violation(&at(-2.0, -geo.lane_width, 0.0), &geo));
        // Already on the main lane.
        assert!(!road_violation(&at(-2.0, -0.5, 0.0), &geo));
        assert!(!road_violation(&at(-10.0, -geo.lane_width, 0.0), &geo));
    }

    #[test]
    fn slanted_body_across_lane_end_is_caught() {
        let geo = RoadGeometry::default();
        // Corners sit clear of the block but the side crosses x = 0 below the lane edge.
        let f = Footprint {
            center: Vec2::new(1.0, -2.25),
            heading: 0.3,
            length: 4.5,
            width: 0.2,
        };
        assert!(f.corners().iter().all(|p| !in_lane_end_block(*p, &geo)));
        assert!(road_violation(&f, &geo));
    }
}
