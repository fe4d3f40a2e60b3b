//! Local equirectangular projection to kilometres.

use crate::geojson::LonLat;
use crate::ingest::towers::EARTH_RADIUS_M;
use crate::spatial::geom::{ring_centroid, Point, Polygon};

/// Kilometres east/north of an origin, with longitude scaled by `cos(lat0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    pub origin: LonLat,
    km_per_deg_x: f64,
    km_per_deg_y: f64,
}

impl LocalProjection {
    pub fn new(origin: LonLat) -> Self {
        let km_per_deg_y = EARTH_RADIUS_M / 1000.0 * std::f64::consts::PI / 180.0;
        Self {
            origin,
            km_per_deg_x: km_per_deg_y * origin.y.to_radians().cos(),
            km_per_deg_y,
        }
    }

    /// Centred on the area-weighted centroid of the largest polygon's exterior.
    pub fn for_polygons(polygons: &[Polygon<f64>]) -> Self {
        let largest = polygons
            .iter()
            .max_by(|a, b| a.area().total_cmp(&b.area()))
            .expect("at least one polygon");
        Self::new(ring_centroid(&largest.exterior))
    }

    pub fn forward(&self, p: LonLat) -> Point<f64> {
        Point::new(
            (p.x - self.origin.x) * self.km_per_deg_x,
            (p.y - self.origin.y) * self.km_per_deg_y,
        )
    }

    pub fn inverse(&self, p: Point<f64>) -> LonLat {
        Point::new(
            self.origin.x + p.x / self.km_per_deg_x,
            self.origin.y + p.y / self.km_per_deg_y,
        )
    }

    pub fn forward_ring(&self, ring: &[LonLat]) -> Vec<Point<f64>> {
        ring.iter().map(|&p| self.forward(p)).collect()
    }

    pub fn forward_polygon(&self, poly: &Polygon<f64>) -> Polygon<f64> {
        Polygon::new(
            self.forward_ring(&poly.exterior),
            poly.holes.iter().map(|h| self.forward_ring(h)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::towers::haversine_m;

    #[test]
    fn roundtrip_and_scale() {
        let proj = LocalProjection::new(Point::new(65.0, 31.5));
        let p = Point::new(65.12, 31.41);
        let q = proj.inverse(proj.forward(p));
        assert!((q.x - p.x).abs() < 1e-12 && (q.y - p.y).abs() < 1e-12);
        // within 20 km of the origin the projected distance tracks great-circle distance closely
        for &(a, b) in &[((65.0, 31.5), (65.1, 31.55)), ((64.9, 31.4), (65.05, 31.6)), ((65.0, 31.6), (65.0, 31.65))] {
            let (a, b) = (Point::new(a.0, a.1), Point::new(b.0, b.1));
            let planar = proj.forward(a).dist(proj.forward(b)) * 1000.0;
            let sphere = haversine_m(a, b);
            assert!((planar - sphere).abs() / sphere < 2e-3, "{planar} vs {sphere}");
        }
    }
}
