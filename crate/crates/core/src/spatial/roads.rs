//! Road network input and per-district entry-road extraction.

use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geojson::{self, Geometry, LonLat};
use crate::ingest::geometry::{DistrictGeometry, Districts};
use crate::spatial::geom::Point;
use crate::spatial::projection::LocalProjection;
use crate::spatial::zone::EntryZone;

pub const ENTRY_BUFFER_KM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub road_id: String,
    pub points: Vec<LonLat>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadNetwork {
    pub roads: Vec<Road>,
}

impl RoadNetwork {
    pub fn new(roads: Vec<Road>) -> Result<Self> {
        for r in &roads {
            if r.points.len() < 2 {
                return Err(Error::invalid(format!("road {} has fewer than 2 vertices", r.road_id)));
            }
            if r.points.iter().any(|p| !(p.x.abs() <= 180.0 && p.y.abs() <= 90.0)) {
                return Err(Error::invalid(format!("road {} has invalid coordinates", r.road_id)));
            }
        }
        Ok(Self { roads })
    }

    /// GeoJSON LineString / MultiLineString features with a `road_id` property.
    pub fn read_geojson(path: &Path) -> Result<Self> {
        let mut roads = Vec::new();
        for (i, f) in geojson::read_features(path)?.into_iter().enumerate() {
            let id = geojson::string_property(&f, "road_id").unwrap_or_else(|| format!("road{i}"));
            match f.geometry {
                Geometry::LineString(points) => roads.push(Road { road_id: id, points }),
                Geometry::MultiLineString(parts) => {
                    roads.extend(parts.into_iter().map(|points| Road { road_id: id.clone(), points }))
                }
                Geometry::Polygons(_) => {
                    return Err(Error::invalid(format!("{}: road {id} is a polygon", path.display())))
                }
            }
        }
        Self::new(roads)
    }

    pub fn to_geojson(&self) -> serde_json::Value {
        geojson::collection(
            self.roads
                .iter()
                .map(|r| geojson::line_feature(json!({"road_id": r.road_id}), &r.points))
                .collect(),
        )
    }
}

/// One clipped road section, in the district's projected kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadPiece {
    pub road_id: String,
    pub points: Vec<Point<f64>>,
}

/// Road sections leading into a district: roads clipped to its entry zone.
#[derive(Debug, Clone)]
pub struct DistrictRoads {
    pub district_id: String,
    pub projection: LocalProjection,
    pub zone: EntryZone<f64>,
    pub pieces: Vec<RoadPiece>,
}

impl DistrictRoads {
    pub fn build(district: &DistrictGeometry, roads: &RoadNetwork, buffer_km: f64) -> Self {
        let projection = LocalProjection::for_polygons(&district.polygons);
        let zone = entry_zone(district, &projection, buffer_km);
        let pieces = roads_in_zone(roads, &zone, &projection);
        Self {
            district_id: district.district_id.clone(),
            projection,
            zone,
            pieces,
        }
    }
}

pub fn entry_zone(district: &DistrictGeometry, projection: &LocalProjection, buffer_km: f64) -> EntryZone<f64> {
    EntryZone::new(
        district.polygons.iter().map(|p| projection.forward_polygon(p)).collect(),
        buffer_km,
    )
}

pub fn roads_in_zone(roads: &RoadNetwork, zone: &EntryZone<f64>, projection: &LocalProjection) -> Vec<RoadPiece> {
    let (x0, y0, x1, y1) = zone.bbox();
    roads
        .roads
        .iter()
        .flat_map(|r| {
            let pts = projection.forward_ring(&r.points);
            let (bx0, by0, bx1, by1) = crate::spatial::geom::bbox(&pts);
            let disjoint = bx1 < x0 || bx0 > x1 || by1 < y0 || by0 > y1;
            let pieces = if disjoint { Vec::new() } else { zone.clip_polyline(&pts) };
            pieces.into_iter().map(|points| RoadPiece {
                road_id: r.road_id.clone(),
                points,
            })
        })
        .collect()
}

/// Entry roads for every district, in district index order.
pub fn entry_roads(districts: &Districts, roads: &RoadNetwork, buffer_km: f64) -> Vec<DistrictRoads> {
    districts
        .geoms
        .par_iter()
        .map(|d| DistrictRoads::build(d, roads, buffer_km))
        .collect()
}
