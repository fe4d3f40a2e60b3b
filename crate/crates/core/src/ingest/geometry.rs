//! District polygons, the district index, and point-to-district assignment.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geojson::{self, Geometry, LonLat};
use crate::spatial::geom::{ring_self_intersection, Polygon, RingSide};

/// Tolerance (degrees) for treating a point as lying on a district edge.
pub const BOUNDARY_EPS_DEG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictGeometry {
    pub district_id: String,
    pub province_id: String,
    pub polygons: Vec<Polygon<f64>>,
}

impl DistrictGeometry {
    pub fn new(
        district_id: impl Into<String>,
        province_id: impl Into<String>,
        polygons: Vec<Polygon<f64>>,
    ) -> Result<Self> {
        let g = Self {
            district_id: district_id.into(),
            province_id: province_id.into(),
            polygons,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Geometry {
            id: self.district_id.clone(),
            reason,
        };
        if self.polygons.is_empty() {
            return Err(fail("no polygons".into()));
        }
        if self.province_id.is_empty() {
            return Err(fail("missing province_id".into()));
        }
        for poly in &self.polygons {
            for ring in poly.rings() {
                if ring.len() < 4 {
                    return Err(fail(format!("ring has {} vertices, need >= 4", ring.len())));
                }
                if ring.first() != ring.last() {
                    return Err(fail("ring is not closed".into()));
                }
                if let Some((i, j)) = ring_self_intersection(ring) {
                    return Err(fail(format!("ring self-intersects at edges {i} and {j}")));
                }
            }
            if poly.area() <= 0.0 {
                return Err(fail("zero-area polygon".into()));
            }
        }
        Ok(())
    }

    pub fn side(&self, p: LonLat) -> RingSide {
        let mut best = RingSide::Outside;
        for poly in &self.polygons {
            let (x0, y0, x1, y1) = poly.bbox();
            if p.x < x0 - BOUNDARY_EPS_DEG
                || p.x > x1 + BOUNDARY_EPS_DEG
                || p.y < y0 - BOUNDARY_EPS_DEG
                || p.y > y1 + BOUNDARY_EPS_DEG
            {
                continue;
            }
            match poly.side(p, BOUNDARY_EPS_DEG) {
                RingSide::Inside => return RingSide::Inside,
                RingSide::Boundary => best = RingSide::Boundary,
                RingSide::Outside => {}
            }
        }
        best
    }
}

/// Result of locating a point among districts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placement {
    District(String),
    Unlocated,
}

/// Ray-casting district lookup. A point on a shared boundary goes to the
/// lexicographically smallest district containing it (interior or boundary).
pub fn assign_district(point: LonLat, geoms: &[DistrictGeometry]) -> Placement {
    geoms
        .iter()
        .filter(|g| g.side(point) != RingSide::Outside)
        .map(|g| g.district_id.as_str())
        .min()
        .map_or(Placement::Unlocated, |id| Placement::District(id.to_string()))
}

/// Districts sorted by id, with their provinces; indices are dense `u32`s used
/// throughout the event pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Districts {
    pub geoms: Vec<DistrictGeometry>,
    #[serde(skip)]
    by_id: HashMap<String, u32>,
}

impl Districts {
    pub fn new(mut geoms: Vec<DistrictGeometry>) -> Result<Self> {
        geoms.sort_by(|a, b| a.district_id.cmp(&b.district_id));
        let mut seen = BTreeSet::new();
        for g in &geoms {
            if !seen.insert(g.district_id.as_str()) {
                return Err(Error::Geometry {
                    id: g.district_id.clone(),
                    reason: "duplicate district_id".into(),
                });
            }
        }
        let by_id = geoms
            .iter()
            .enumerate()
            .map(|(i, g)| (g.district_id.clone(), i as u32))
            .collect();
        Ok(Self { geoms, by_id })
    }

    pub fn from_geojson_str(text: &str) -> Result<Self> {
        let mut out = Vec::new();
        for f in geojson::parse_features(text)? {
            let id = geojson::string_property(&f, "district_id")
                .ok_or_else(|| Error::invalid("district feature without district_id"))?;
            let province = geojson::string_property(&f, "province_id").ok_or_else(|| {
                Error::Geometry {
                    id: id.clone(),
                    reason: "missing province_id".into(),
                }
            })?;
            let Geometry::Polygons(polys) = f.geometry else {
                return Err(Error::Geometry {
                    id,
                    reason: "district geometry must be Polygon or MultiPolygon".into(),
                });
            };
            out.push(DistrictGeometry::new(id, province, polys)?);
        }
        Self::new(out)
    }

    pub fn read_geojson(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_geojson_str(&text)
    }

    pub fn to_geojson(&self) -> serde_json::Value {
        geojson::collection(
            self.geoms
                .iter()
                .map(|g| {
                    geojson::polygon_feature(
                        serde_json::json!({"district_id": g.district_id, "province_id": g.province_id}),
                        &g.polygons,
                    )
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.geoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geoms.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).copied()
    }

    pub fn id(&self, idx: u32) -> &str {
        &self.geoms[idx as usize].district_id
    }

    pub fn province(&self, idx: u32) -> &str {
        &self.geoms[idx as usize].province_id
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.geoms.iter().map(|g| g.district_id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&DistrictGeometry> {
        self.index_of(id).map(|i| &self.geoms[i as usize])
    }

    /// Same rule as [`assign_district`], returning a dense index.
    pub fn locate(&self, point: LonLat) -> Option<u32> {
        // geoms are sorted, so the first hit is the smallest id.
        self.geoms
            .iter()
            .position(|g| g.side(point) != RingSide::Outside)
            .map(|i| i as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::geom::Point;

    pub(crate) fn square(id: &str, x0: f64, y0: f64, s: f64) -> DistrictGeometry {
        let ring = vec![
            Point::new(x0, y0),
            Point::new(x0 + s, y0),
            Point::new(x0 + s, y0 + s),
            Point::new(x0, y0 + s),
            Point::new(x0, y0),
        ];
        DistrictGeometry::new(id, "P1", vec![Polygon::new(ring, vec![])]).unwrap()
    }

    #[test]
    fn interior_point_goes_to_its_district() {
        let geoms = vec![square("D01", 0.0, 0.0, 1.0), square("D02", 1.0, 0.0, 1.0)];
        assert_eq!(
            assign_district(Point::new(0.5, 0.5), &geoms),
            Placement::District("D01".into())
        );
        assert_eq!(
            assign_district(Point::new(1.5, 0.5), &geoms),
            Placement::District("D02".into())
        );
    }

    #[test]
    fn outside_point_is_unlocated() {
        let geoms = vec![square("D01", 0.0, 0.0, 1.0)];
        assert_eq!(assign_district(Point::new(5.0, 5.0), &geoms), Placement::Unlocated);
    }

    #[test]
    fn shared_edge_goes_to_smaller_id() {
        // Order of the input list must not matter.
        let geoms = vec![square("D02", 1.0, 0.0, 1.0), square("D01", 0.0, 0.0, 1.0)];
        let on_edge = Point::new(1.0, 0.5);
        assert_eq!(assign_district(on_edge, &geoms), Placement::District("D01".into()));
        let idx = Districts::new(geoms).unwrap();
        assert_eq!(idx.locate(on_edge).map(|i| idx.id(i).to_string()), Some("D01".into()));
    }

    #[test]
    fn rejects_open_and_self_intersecting_rings() {
        let open = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        assert!(DistrictGeometry::new("X", "P", vec![Polygon::new(open, vec![])]).is_err());
        let bow = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(0.0, 0.0),
        ];
        assert!(DistrictGeometry::new("X", "P", vec![Polygon::new(bow, vec![])]).is_err());
    }

    #[test]
    fn rejects_duplicate_ids_and_missing_province() {
        assert!(Districts::new(vec![square("D01", 0.0, 0.0, 1.0), square("D01", 2.0, 0.0, 1.0)]).is_err());
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"district_id":"D9"},
            "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#;
        assert!(Districts::from_geojson_str(text).is_err());
    }

    #[test]
    fn geojson_round_trip() {
        let d = Districts::new(vec![square("D01", 0.0, 0.0, 1.0), square("D02", 1.0, 0.0, 1.0)]).unwrap();
        let back = Districts::from_geojson_str(&d.to_geojson().to_string()).unwrap();
        assert_eq!(back.geoms, d.geoms);
    }
}
