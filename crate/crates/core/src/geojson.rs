//! Minimal GeoJSON FeatureCollection reading and writing for the two shapes we use:
//! district (multi)polygons and road linestrings.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::spatial::geom::{Point, Polygon};

pub type LonLat = Point<f64>;

pub struct Feature {
    pub properties: Map<String, Value>,
    pub geometry: Geometry,
}

pub enum Geometry {
    Polygons(Vec<Polygon<f64>>),
    LineString(Vec<LonLat>),
    MultiLineString(Vec<Vec<LonLat>>),
}

fn position(v: &Value) -> Result<LonLat> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::invalid("GeoJSON position must be [lon, lat]"))?;
    let num = |x: &Value| {
        x.as_f64()
            .ok_or_else(|| Error::invalid("GeoJSON coordinate is not a number"))
    };
    Ok(Point::new(num(&arr[0])?, num(&arr[1])?))
}

fn line(v: &Value) -> Result<Vec<LonLat>> {
    v.as_array()
        .ok_or_else(|| Error::invalid("GeoJSON line must be an array"))?
        .iter()
        .map(position)
        .collect()
}

fn polygon(v: &Value) -> Result<Polygon<f64>> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::invalid("GeoJSON polygon must be an array of rings"))?;
    let mut rings = rings.iter().map(line).collect::<Result<Vec<_>>>()?.into_iter();
    let exterior = rings
        .next()
        .ok_or_else(|| Error::invalid("GeoJSON polygon without exterior ring"))?;
    Ok(Polygon::new(exterior, rings.collect()))
}

fn geometry(v: &Value) -> Result<Geometry> {
    let kind = v.get("type").and_then(Value::as_str).unwrap_or_default();
    let coords = v
        .get("coordinates")
        .ok_or_else(|| Error::invalid("GeoJSON geometry without coordinates"))?;
    match kind {
        "Polygon" => Ok(Geometry::Polygons(vec![polygon(coords)?])),
        "MultiPolygon" => Ok(Geometry::Polygons(
            coords
                .as_array()
                .ok_or_else(|| Error::invalid("MultiPolygon coordinates must be an array"))?
                .iter()
                .map(polygon)
                .collect::<Result<_>>()?,
        )),
        "LineString" => Ok(Geometry::LineString(line(coords)?)),
        "MultiLineString" => Ok(Geometry::MultiLineString(
            coords
                .as_array()
                .ok_or_else(|| Error::invalid("MultiLineString coordinates must be an array"))?
                .iter()
                .map(line)
                .collect::<Result<_>>()?,
        )),
        other => Err(Error::invalid(format!("unsupported GeoJSON geometry type {other:?}"))),
    }
}

pub fn parse_features(text: &str) -> Result<Vec<Feature>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("GeoJSON: {e}")))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::invalid("GeoJSON root must be a FeatureCollection"));
    }
    root.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("FeatureCollection without features"))?
        .iter()
        .map(|f| {
            Ok(Feature {
                properties: f
                    .get("properties")
                    .and_then(Value::as_object)
                    .cloned()
                    .unwrap_or_default(),
                geometry: geometry(
                    f.get("geometry")
                        .ok_or_else(|| Error::invalid("feature without geometry"))?,
                )?,
            })
        })
        .collect()
}

pub fn read_features(path: &Path) -> Result<Vec<Feature>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text)
}

/// String-valued property; numbers are rendered with `to_string`.
pub fn string_property(f: &Feature, key: &str) -> Option<String> {
    match f.properties.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn coords(line: &[LonLat]) -> Value {
    Value::Array(line.iter().map(|p| json!([p.x, p.y])).collect())
}

pub fn polygon_feature(properties: Value, polygons: &[Polygon<f64>]) -> Value {
    let poly = |p: &Polygon<f64>| Value::Array(p.rings().map(coords).collect());
    let geometry = if polygons.len() == 1 {
        json!({"type": "Polygon", "coordinates": poly(&polygons[0])})
    } else {
        json!({"type": "MultiPolygon", "coordinates": polygons.iter().map(poly).collect::<Vec<_>>()})
    };
    json!({"type": "Feature", "properties": properties, "geometry": geometry})
}

pub fn line_feature(properties: Value, line: &[LonLat]) -> Value {
    json!({"type": "Feature", "properties": properties,
           "geometry": {"type": "LineString", "coordinates": coords(line)}})
}

pub fn collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}
