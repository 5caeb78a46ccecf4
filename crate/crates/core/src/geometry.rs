//! Planar geometry: points, axis-aligned rectangles and oriented boxes.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Tolerance used by every closed/open intersection predicate.
pub const EPS: f64 = 1e-9;

/// Round to the 0.01 lattice used by every persisted coordinate.
pub fn q2(v: f64) -> f64 {
    // `+ 0.0` folds negative zero into positive zero.
    (v * 100.0).round() / 100.0 + 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0).then(|| self * (1.0 / n))
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn quantized(self) -> Vec2 {
        Vec2::new(q2(self.x), q2(self.y))
    }

    pub fn from_angle_deg(deg: f64) -> Vec2 {
        let r = deg.to_radians();
        Vec2::new(r.cos(), r.sin())
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle with `min < max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    pub fn is_well_formed(&self) -> bool {
        self.min.x < self.max.x && self.min.y < self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    /// Closed containment with tolerance.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x - EPS
            && p.x <= self.max.x + EPS
            && p.y >= self.min.y - EPS
            && p.y <= self.max.y + EPS
    }

    /// Distance from an interior point to the nearest wall.
    pub fn wall_distance(&self, p: Vec2) -> f64 {
        (p.x - self.min.x)
            .min(self.max.x - p.x)
            .min(p.y - self.min.y)
            .min(self.max.y - p.y)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }
}

/// Oriented box: center, half extents along its local axes, rotation in degrees (CCW).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub half: Vec2,
    pub rotation_deg: f64,
}

impl Obb {
    pub fn new(center: Vec2, half: Vec2, rotation_deg: f64) -> Self {
        Obb {
            center,
            half,
            rotation_deg,
        }
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let ax = Vec2::from_angle_deg(self.rotation_deg);
        [ax, ax.perp()]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let [ax, ay] = self.axes();
        let x = ax * self.half.x;
        let y = ay * self.half.y;
        let c = self.center;
        [c - x - y, c + x - y, c + x + y, c - x + y]
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half.norm()
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half.x * self.half.y
    }

    /// Point expressed in the box's local frame.
    fn to_local(&self, p: Vec2) -> Vec2 {
        let [ax, ay] = self.axes();
        let d = p - self.center;
        Vec2::new(d.dot(ax), d.dot(ay))
    }

    /// Closed point containment.
    pub fn contains(&self, p: Vec2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half.x + EPS && l.y.abs() <= self.half.y + EPS
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let l = self.to_local(p);
        let dx = (l.x.abs() - self.half.x).max(0.0);
        let dy = (l.y.abs() - self.half.y).max(0.0);
        dx.hypot(dy)
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let c = self.center.dot(axis);
        let [ax, ay] = self.axes();
        let r = self.half.x * ax.dot(axis).abs() + self.half.y * ay.dot(axis).abs();
        (c - r, c + r)
    }

    /// Largest gap over the four separating axes. Positive means disjoint,
    /// zero means touching, negative means penetrating.
    pub fn separation(&self, other: &Obb) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            best = best.max((b0 - a1).max(a0 - b1));
        }
        best
    }

    /// Positive-area intersection.
    pub fn overlaps(&self, other: &Obb) -> bool {
        if self.center.distance(other.center) > self.bounding_radius() + other.bounding_radius() {
            return false;
        }
        self.separation(other) < -EPS
    }

    /// Closed intersection: touching counts.
    pub fn touches(&self, other: &Obb) -> bool {
        if self.center.distance(other.center)
            > self.bounding_radius() + other.bounding_radius() + EPS
        {
            return false;
        }
        self.separation(other) <= EPS
    }

    /// Euclidean gap between two boxes (zero when intersecting or touching).
    pub fn distance(&self, other: &Obb) -> f64 {
        if self.separation(other) <= 0.0 {
            return 0.0;
        }
        let a = self.corners();
        let b = other.corners();
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let (a0, a1) = (a[i], a[(i + 1) % 4]);
            let (b0, b1) = (b[i], b[(i + 1) % 4]);
            for &p in &b {
                best = best.min(point_segment_distance(p, a0, a1));
            }
            for &p in &a {
                best = best.min(point_segment_distance(p, b0, b1));
            }
        }
        best
    }

    /// Whether any corner lies outside `bounds` by more than the tolerance.
    pub fn escapes(&self, bounds: &Rect) -> bool {
        self.corners().iter().any(|&c| !bounds.contains(c))
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Vec2, a: Vec2, b: Vec2| (a - o).cross(b - o);
    let mut hull: Vec<Vec2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Largest separating-axis gap between two convex polygons, tested on the
/// edge normals of both. Same sign convention as [`Obb::separation`].
pub fn polygon_separation(a: &[Vec2], b: &[Vec2]) -> f64 {
    let project = |poly: &[Vec2], axis: Vec2| {
        poly.iter()
            .map(|p| p.dot(axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let mut best = f64::NEG_INFINITY;
    for poly in [a, b] {
        for i in 0..poly.len() {
            let Some(axis) = (poly[(i + 1) % poly.len()] - poly[i]).perp().normalized() else {
                continue;
            };
            let (a0, a1) = project(a, axis);
            let (b0, b1) = project(b, axis);
            best = best.max((b0 - a1).max(a0 - b1));
        }
    }
    best
}

/// Clip a convex polygon against the half plane `{p : (p - origin) . normal >= 0}`.
pub fn clip_half_plane(poly: &[Vec2], origin: Vec2, normal: Vec2) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let side = |p: Vec2| (p - origin).dot(normal);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(cur), side(next));
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc >= 0.0) != (sn >= 0.0) {
            let t = sc / (sc - sn);
            out.push(cur + (next - cur) * t);
        }
    }
    out
}

/// Normalize an angle in degrees to `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r + 0.0
    }
}
