//! The ring of land within a buffer distance outside a district, and clipping
//! of polylines to it. All coordinates are planar kilometres.

use crate::scalar::Scalar;
use crate::spatial::geom::{bbox, point_segment_distance, Point, Polygon, RingSide};

/// Planar boundary tolerance (km).
const EPS: f64 = 1e-9;

/// Points outside (or on the edge of) the district polygons whose distance to
/// the district boundary is at most `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryZone<T> {
    pub polygons: Vec<Polygon<T>>,
    pub radius: T,
}

impl<T: Scalar> EntryZone<T> {
    pub fn new(polygons: Vec<Polygon<T>>, radius: T) -> Self {
        Self { polygons, radius }
    }

    pub fn is_empty(&self) -> bool {
        !(self.radius > T::zero())
    }

    fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        self.polygons
            .iter()
            .flat_map(|p| p.rings())
            .flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    fn inside_district(&self, p: Point<T>) -> bool {
        self.polygons
            .iter()
            .any(|poly| poly.side(p, T::lit(EPS)) == RingSide::Inside)
    }

    pub fn boundary_distance(&self, p: Point<T>) -> T {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(T::infinity(), T::min)
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        !self.is_empty() && !self.inside_district(p) && self.boundary_distance(p) <= self.radius
    }

    /// Bounding box of the zone: district extent grown by the radius.
    pub fn bbox(&self) -> (T, T, T, T) {
        let r = self.radius.max(T::zero());
        self.polygons.iter().map(|p| bbox(&p.exterior)).fold(
            (T::infinity(), T::infinity(), T::neg_infinity(), T::neg_infinity()),
            |(a, b, c, d), (x0, y0, x1, y1)| (a.min(x0 - r), b.min(y0 - r), c.max(x1 + r), d.max(y1 + r)),
        )
    }

    /// Area by midpoint-rule integration on a grid of `cells_per_side²` cells.
    pub fn area(&self, cells_per_side: usize) -> T {
        if self.is_empty() {
            return T::zero();
        }
        let (x0, y0, x1, y1) = self.bbox();
        let n = T::from_usize_lossy(cells_per_side);
        let (dx, dy) = ((x1 - x0) / n, (y1 - y0) / n);
        let half = T::lit(0.5);
        let mut hits = 0usize;
        for i in 0..cells_per_side {
            let x = x0 + dx * (T::from_usize_lossy(i) + half);
            for j in 0..cells_per_side {
                let y = y0 + dy * (T::from_usize_lossy(j) + half);
                hits += self.contains(Point::new(x, y)) as usize;
            }
        }
        T::from_usize_lossy(hits) * dx * dy
    }

    /// Parameter intervals of `a + s(b − a)`, `s ∈ [0, 1]`, lying in the zone.
    pub fn segment_intervals(&self, a: Point<T>, b: Point<T>) -> Vec<(T, T)> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut near: Vec<(T, T)> = self
            .edges()
            .filter_map(|(p, q)| stadium_interval(a, b, p, q, self.radius))
            .collect();
        let near = merge_intervals(&mut near);
        if near.is_empty() {
            return near;
        }
        let outside = self.outside_intervals(a, b);
        intersect_intervals(&near, &outside)
    }

    /// Sub-intervals of the segment not strictly inside any district polygon.
    fn outside_intervals(&self, a: Point<T>, b: Point<T>) -> Vec<(T, T)> {
        let mut cuts = vec![T::zero(), T::one()];
        for (p, q) in self.edges() {
            cuts.extend(crossing_params(a, b, p, q));
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup();
        let mut out: Vec<(T, T)> = Vec::new();
        let half = T::lit(0.5);
        for w in cuts.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            if s1 <= s0 {
                continue;
            }
            if !self.inside_district(a.lerp(b, (s0 + s1) * half)) {
                match out.last_mut() {
                    Some(last) if last.1 == s0 => last.1 = s1,
                    _ => out.push((s0, s1)),
                }
            }
        }
        out
    }

    /// Portions of a polyline inside the zone, as separate polylines.
    pub fn clip_polyline(&self, line: &[Point<T>]) -> Vec<Vec<Point<T>>> {
        let mut pieces: Vec<Vec<Point<T>>> = Vec::new();
        let mut open = false;
        for w in line.windows(2) {
            let (a, b) = (w[0], w[1]);
            let intervals = self.segment_intervals(a, b);
            if intervals.is_empty() {
                open = false;
                continue;
            }
            for (k, &(s0, s1)) in intervals.iter().enumerate() {
                let (p0, p1) = (a.lerp(b, s0), a.lerp(b, s1));
                if k == 0 && open && s0 == T::zero() {
                    pieces.last_mut().unwrap().push(p1);
                } else if s1 > s0 {
                    pieces.push(vec![p0, p1]);
                } else {
                    // a touching point
                    pieces.push(vec![p0]);
                }
            }
            open = intervals.last().unwrap().1 == T::one();
        }
        pieces
    }
}

/// Parameters where segment `a`–`b` meets segment `p`–`q`.
fn crossing_params<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>, q: Point<T>) -> Vec<T> {
    let d = Point::new(b.x - a.x, b.y - a.y);
    let e = Point::new(q.x - p.x, q.y - p.y);
    let denom = d.x * e.y - d.y * e.x;
    let ap = Point::new(p.x - a.x, p.y - a.y);
    let (zero, one) = (T::zero(), T::one());
    if denom != zero {
        let s = (ap.x * e.y - ap.y * e.x) / denom;
        let u = (ap.x * d.y - ap.y * d.x) / denom;
        if s >= zero && s <= one && u >= zero && u <= one {
            return vec![s];
        }
        return Vec::new();
    }
    // Parallel: collinear overlap contributes its endpoints.
    if ap.x * d.y - ap.y * d.x != zero {
        return Vec::new();
    }
    let dd = d.x * d.x + d.y * d.y;
    if dd == zero {
        return Vec::new();
    }
    let proj = |r: Point<T>| ((r.x - a.x) * d.x + (r.y - a.y) * d.y) / dd;
    [proj(p), proj(q)]
        .into_iter()
        .filter(|&s| s >= zero && s <= one)
        .collect()
}

fn clip01<T: Scalar>(lo: T, hi: T) -> Option<(T, T)> {
    let (lo, hi) = (lo.max(T::zero()), hi.min(T::one()));
    (lo <= hi).then_some((lo, hi))
}

/// `{s : |a + s·d − c| ≤ r}` ∩ [0, 1].
fn disk_interval<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>, r: T) -> Option<(T, T)> {
    let d = Point::new(b.x - a.x, b.y - a.y);
    let f = Point::new(a.x - c.x, a.y - c.y);
    let qa = d.x * d.x + d.y * d.y;
    let qc = f.x * f.x + f.y * f.y - r * r;
    if qa == T::zero() {
        return (qc <= T::zero()).then_some((T::zero(), T::one()));
    }
    let qb = T::lit(2.0) * (d.x * f.x + d.y * f.y);
    let disc = qb * qb - T::lit(4.0) * qa * qc;
    if disc < T::zero() {
        return None;
    }
    let sq = disc.sqrt();
    let two_a = T::lit(2.0) * qa;
    clip01((-qb - sq) / two_a, (-qb + sq) / two_a)
}

/// `{s : lo ≤ f0 + s·f1 ≤ hi}` ∩ [0, 1].
fn linear_interval<T: Scalar>(f0: T, f1: T, lo: T, hi: T) -> Option<(T, T)> {
    if f1 == T::zero() {
        return (f0 >= lo && f0 <= hi).then_some((T::zero(), T::one()));
    }
    let (s0, s1) = ((lo - f0) / f1, (hi - f0) / f1);
    clip01(s0.min(s1), s0.max(s1))
}

/// Parameter interval of segment `a`–`b` within distance `r` of segment `p`–`q`.
/// The stadium is convex, so the set is a single interval: the union of the
/// pieces inside the two end disks and the central band.
fn stadium_interval<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>, q: Point<T>, r: T) -> Option<(T, T)> {
    let mut parts = vec![disk_interval(a, b, p, r), disk_interval(a, b, q, r)];
    let len = p.dist(q);
    if len > T::zero() {
        let e = Point::new((q.x - p.x) / len, (q.y - p.y) / len);
        let n = Point::new(-e.y, e.x);
        let d = Point::new(b.x - a.x, b.y - a.y);
        let ap = Point::new(a.x - p.x, a.y - p.y);
        let along = linear_interval(ap.x * e.x + ap.y * e.y, d.x * e.x + d.y * e.y, T::zero(), len);
        let across = linear_interval(ap.x * n.x + ap.y * n.y, d.x * n.x + d.y * n.y, -r, r);
        if let (Some(u), Some(v)) = (along, across) {
            parts.push(clip01(u.0.max(v.0), u.1.min(v.1)));
        }
    }
    parts
        .into_iter()
        .flatten()
        .reduce(|x, y| (x.0.min(y.0), x.1.max(y.1)))
}

fn merge_intervals<T: Scalar>(v: &mut [(T, T)]) -> Vec<(T, T)> {
    v.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut out: Vec<(T, T)> = Vec::new();
    for &(lo, hi) in v.iter() {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

fn intersect_intervals<T: Scalar>(a: &[(T, T)], b: &[(T, T)]) -> Vec<(T, T)> {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if lo <= hi {
                out.push((lo, hi));
            }
        }
    }
    merge_intervals(&mut out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, s: f64) -> Polygon<f64> {
        Polygon::new(
            vec![
                Point::new(x0, y0),
                Point::new(x0 + s, y0),
                Point::new(x0 + s, y0 + s),
                Point::new(x0, y0 + s),
                Point::new(x0, y0),
            ],
            vec![],
        )
    }

    fn p(x: f64, y: f64) -> Point<f64> {
        Point::new(x, y)
    }

    #[test]
    fn square_zone_area_matches_buffer_formula() {
        let zone = EntryZone::new(vec![square(0.0, 0.0, 50.0)], 10.0);
        // perimeter·r + π·r²
        let analytic = 200.0 * 10.0 + std::f64::consts::PI * 100.0;
        let area = zone.area(700);
        assert!((area - analytic).abs() / analytic < 0.02, "{area} vs {analytic}");
    }

    #[test]
    fn zero_radius_is_empty() {
        let zone = EntryZone::new(vec![square(0.0, 0.0, 50.0)], 0.0);
        assert!(zone.is_empty());
        assert!(!zone.contains(p(50.0, 25.0)));
        assert_eq!(zone.area(50), 0.0);
        assert!(zone.clip_polyline(&[p(-20.0, 25.0), p(70.0, 25.0)]).is_empty());
    }

    #[test]
    fn membership_thresholds() {
        let zone = EntryZone::new(vec![square(0.0, 0.0, 50.0)], 10.0);
        assert!(zone.contains(p(55.0, 25.0)));
        assert!(!zone.contains(p(65.0, 25.0)));
        assert!(!zone.contains(p(25.0, 25.0)));
        assert!(zone.contains(p(60.0, 25.0)));
        assert!(!zone.contains(p(60.0 + 1e-9, 25.0)));
        // corner region is rounded
        assert!(!zone.contains(p(58.0, 58.0)));
        assert!(zone.contains(p(57.0, 57.0)));
    }

    #[test]
    fn clipping_examples() {
        let zone = EntryZone::new(vec![square(0.0, 0.0, 50.0)], 10.0);
        // crossing the whole district: two pieces, one on each side
        let pieces = zone.clip_polyline(&[p(-30.0, 25.0), p(80.0, 25.0)]);
        assert_eq!(pieces.len(), 2);
        let (a, b) = (&pieces[0], &pieces[1]);
        assert!((a[0].x + 10.0).abs() < 1e-9 && (a[1].x - 0.0).abs() < 1e-9);
        assert!((b[0].x - 50.0).abs() < 1e-9 && (b[1].x - 60.0).abs() < 1e-9);
        // entirely outside
        assert!(zone.clip_polyline(&[p(-30.0, 80.0), p(80.0, 80.0)]).is_empty());
        // zig-zag in and out of the buffer twice, staying outside the district
        let zig = [p(65.0, 0.0), p(55.0, 10.0), p(65.0, 20.0), p(55.0, 30.0), p(65.0, 40.0)];
        let pieces = zone.clip_polyline(&zig);
        assert_eq!(pieces.len(), 2, "{pieces:?}");
        for piece in &pieces {
            for q in piece {
                assert!(zone.boundary_distance(*q) <= 10.0 + 1e-9);
            }
        }
    }

    #[test]
    fn multi_segment_piece_is_joined() {
        let zone = EntryZone::new(vec![square(0.0, 0.0, 50.0)], 10.0);
        let road = [p(55.0, 10.0), p(55.0, 20.0), p(56.0, 30.0)];
        let pieces = zone.clip_polyline(&road);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].len(), 3);
    }

    fn sampled_inside(zone: &EntryZone<f64>, a: Point<f64>, b: Point<f64>, n: usize) -> Vec<bool> {
        (0..=n).map(|i| zone.contains(a.lerp(b, i as f64 / n as f64))).collect()
    }

    proptest! {
        #[test]
        fn intervals_agree_with_membership(
            ax in -40.0f64..90.0, ay in -40.0f64..90.0,
            bx in -40.0f64..90.0, by in -40.0f64..90.0,
            r in 1.0f64..20.0,
        ) {
            let zone = EntryZone::new(vec![square(0.0, 0.0, 50.0)], r);
            let (a, b) = (p(ax, ay), p(bx, by));
            let iv = zone.segment_intervals(a, b);
            let n = 400;
            let samples = sampled_inside(&zone, a, b, n);
            let len = a.dist(b);
            for (i, &inside) in samples.iter().enumerate() {
                let s = i as f64 / n as f64;
                let in_iv = iv.iter().any(|&(lo, hi)| s >= lo && s <= hi);
                if in_iv != inside {
                    // disagreement allowed only within rounding of an interval end
                    let near_end = iv.iter().any(|&(lo, hi)| ((s - lo).abs() * len).min((s - hi).abs() * len) < 1e-6);
                    prop_assert!(near_end, "s={s} inside={inside} intervals={iv:?}");
                }
            }
        }

        #[test]
        fn zones_nest(r1 in 0.5f64..10.0, dr in 0.0f64..10.0, x in -30.0f64..80.0, y in -30.0f64..80.0) {
            let small = EntryZone::new(vec![square(0.0, 0.0, 50.0)], r1);
            let big = EntryZone::new(vec![square(0.0, 0.0, 50.0)], r1 + dr);
            if small.contains(p(x, y)) {
                prop_assert!(big.contains(p(x, y)));
            }
        }
    }
}
