use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Planar point in local metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold(Point::default(), |a, &p| a + p);
    s * (1.0 / n)
}

/// Largest pairwise distance.
pub fn diameter(points: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max(a.distance(*b));
        }
    }
    d
}

/// Closest point to `p` on segment `a`-`b` and its parameter in `[0, 1]`.
pub fn project_onto_segment(p: Point, a: Point, b: Point) -> (Point, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

/// Equirectangular projection about `origin` (lat, lon in degrees).
pub fn latlon_to_local(lat: f64, lon: f64, origin_lat: f64, origin_lon: f64) -> Point {
    const EARTH_RADIUS_M: f64 = 6_371_000.0;
    let x = (lon - origin_lon).to_radians() * origin_lat.to_radians().cos() * EARTH_RADIUS_M;
    let y = (lat - origin_lat).to_radians() * EARTH_RADIUS_M;
    Point::new(x, y)
}
