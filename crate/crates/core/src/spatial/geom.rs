//! Planar primitives: points, segments, rings.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn lerp(self, other: Self, u: T) -> Self {
        Self::new(
            self.x + (other.x - self.x) * u,
            self.y + (other.y - self.y) * u,
        )
    }
}

/// Where a point lies relative to a polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingSide {
    Inside,
    Boundary,
    Outside,
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>) -> T {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == T::zero() {
        return p.dist(a);
    }
    let u = (p.sub(a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.dist(a.lerp(b, u))
}

/// Minimum distance from `p` to any segment of an open polyline.
pub fn point_polyline_distance<T: Scalar>(p: Point<T>, line: &[Point<T>]) -> T {
    match line {
        [] => T::infinity(),
        [only] => p.dist(*only),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(T::infinity(), T::min),
    }
}

fn on_segment<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>, eps: T) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let scale = (b.x - a.x).abs() + (b.y - a.y).abs();
    if cross.abs() > eps * scale.max(T::one()) {
        return false;
    }
    p.x >= a.x.min(b.x) - eps
        && p.x <= a.x.max(b.x) + eps
        && p.y >= a.y.min(b.y) - eps
        && p.y <= a.y.max(b.y) + eps
}

/// Crossing-number test of `p` against one closed ring (first vertex repeated last).
pub fn ring_side<T: Scalar>(p: Point<T>, ring: &[Point<T>], eps: T) -> RingSide {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(p, a, b, eps) {
            return RingSide::Boundary;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    if inside {
        RingSide::Inside
    } else {
        RingSide::Outside
    }
}

/// A polygon: one exterior ring and zero or more holes, all closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon<T> {
    pub exterior: Vec<Point<T>>,
    pub holes: Vec<Vec<Point<T>>>,
}

impl<T: Scalar> Polygon<T> {
    pub fn new(exterior: Vec<Point<T>>, holes: Vec<Vec<Point<T>>>) -> Self {
        Self { exterior, holes }
    }

    pub fn side(&self, p: Point<T>, eps: T) -> RingSide {
        match ring_side(p, &self.exterior, eps) {
            RingSide::Outside => RingSide::Outside,
            RingSide::Boundary => RingSide::Boundary,
            RingSide::Inside => {
                for hole in &self.holes {
                    match ring_side(p, hole, eps) {
                        RingSide::Inside => return RingSide::Outside,
                        RingSide::Boundary => return RingSide::Boundary,
                        RingSide::Outside => {}
                    }
                }
                RingSide::Inside
            }
        }
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point<T>]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    /// Area of the exterior minus holes.
    pub fn area(&self) -> T {
        signed_area(&self.exterior).abs()
            - self.holes.iter().map(|h| signed_area(h).abs()).sum::<T>()
    }

    pub fn perimeter(&self) -> T {
        self.rings()
            .flat_map(|r| r.windows(2))
            .map(|w| w[0].dist(w[1]))
            .sum()
    }

    /// (min_x, min_y, max_x, max_y) of the exterior.
    pub fn bbox(&self) -> (T, T, T, T) {
        bbox(&self.exterior)
    }
}

pub fn bbox<T: Scalar>(pts: &[Point<T>]) -> (T, T, T, T) {
    pts.iter().fold(
        (T::infinity(), T::infinity(), T::neg_infinity(), T::neg_infinity()),
        |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
    )
}

/// Shoelace area of a closed ring; positive when counter-clockwise.
pub fn signed_area<T: Scalar>(ring: &[Point<T>]) -> T {
    let twice: T = ring
        .windows(2)
        .map(|w| w[0].x * w[1].y - w[1].x * w[0].y)
        .sum();
    twice / T::lit(2.0)
}

/// Area-weighted centroid of a closed ring; vertex mean if the ring is degenerate.
pub fn ring_centroid<T: Scalar>(ring: &[Point<T>]) -> Point<T> {
    let a = signed_area(ring);
    if a.abs() <= T::epsilon() {
        let n = T::from_usize_lossy(ring.len().max(1));
        let (sx, sy) = ring.iter().fold((T::zero(), T::zero()), |(x, y), p| (x + p.x, y + p.y));
        return Point::new(sx / n, sy / n);
    }
    let (mut cx, mut cy) = (T::zero(), T::zero());
    for w in ring.windows(2) {
        let f = w[0].x * w[1].y - w[1].x * w[0].y;
        cx += (w[0].x + w[1].x) * f;
        cy += (w[0].y + w[1].y) * f;
    }
    let six_a = T::lit(6.0) * a;
    Point::new(cx / six_a, cy / six_a)
}

fn orient<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Proper or touching intersection of two closed segments.
pub fn segments_intersect<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>, d: Point<T>) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    let eps = T::zero();
    (d1 == z && on_segment(a, c, d, eps))
        || (d2 == z && on_segment(b, c, d, eps))
        || (d3 == z && on_segment(c, a, b, eps))
        || (d4 == z && on_segment(d, a, b, eps))
}

/// Returns the first pair of non-adjacent edges that intersect, if any.
pub fn ring_self_intersection<T: Scalar>(ring: &[Point<T>]) -> Option<(usize, usize)> {
    let n = ring.len().saturating_sub(1);
    if n < 3 {
        return None;
    }
    let boxes: Vec<_> = (0..n).map(|i| bbox(&ring[i..i + 2])).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (boxes[i], boxes[j]);
            if a.2 < b.0 || b.2 < a.0 || a.3 < b.1 || b.3 < a.1 {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point<f64>> {
        vec![
            Point::new(x0, y0),
            Point::new(x0 + s, y0),
            Point::new(x0 + s, y0 + s),
            Point::new(x0, y0 + s),
            Point::new(x0, y0),
        ]
    }

    #[test]
    fn ring_side_classifies_points() {
        let r = square(0.0, 0.0, 1.0);
        assert_eq!(ring_side(Point::new(0.5, 0.5), &r, 1e-12), RingSide::Inside);
        assert_eq!(ring_side(Point::new(1.5, 0.5), &r, 1e-12), RingSide::Outside);
        assert_eq!(ring_side(Point::new(1.0, 0.5), &r, 1e-12), RingSide::Boundary);
        assert_eq!(ring_side(Point::new(0.0, 0.0), &r, 1e-12), RingSide::Boundary);
    }

    #[test]
    fn holes_are_excluded() {
        let poly = Polygon::new(square(0.0, 0.0, 4.0), vec![square(1.0, 1.0, 2.0)]);
        assert_eq!(poly.side(Point::new(2.0, 2.0), 1e-12), RingSide::Outside);
        assert_eq!(poly.side(Point::new(0.5, 2.0), 1e-12), RingSide::Inside);
        assert!((poly.area() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn segment_distance_handles_endpoints_and_degenerate() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        assert!((point_segment_distance::<f64>(Point::new(5.0, 3.0), a, b) - 3.0).abs() < 1e-12);
        assert!((point_segment_distance::<f64>(Point::new(-3.0, 4.0), a, b) - 5.0).abs() < 1e-12);
        assert!((point_segment_distance::<f64>(Point::new(3.0, 4.0), a, a) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn detects_bow_tie() {
        let bow = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(0.0, 0.0),
        ];
        assert!(ring_self_intersection(&bow).is_some());
        assert!(ring_self_intersection(&square(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn centroid_of_square() {
        let c = ring_centroid(&square(2.0, 2.0, 2.0));
        assert!((c.x - 3.0).abs() < 1e-12 && (c.y - 3.0).abs() < 1e-12);
    }
}
