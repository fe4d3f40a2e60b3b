//! Tower registry and single-linkage grouping of towers closer than 100 m.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geojson::LonLat;
use crate::ingest::geometry::{Districts, Placement};
use crate::spatial::geom::Point;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const GROUPING_THRESHOLD_M: f64 = 100.0;

/// Great-circle (haversine) distance in meters on a spherical Earth.
pub fn haversine_m(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.y.to_radians(), b.y.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.x - a.x).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub tower_id: String,
    pub lon: f64,
    pub lat: f64,
}

impl Tower {
    pub fn new(id: impl Into<String>, lon: f64, lat: f64) -> Self {
        Self {
            tower_id: id.into(),
            lon,
            lat,
        }
    }

    pub fn position(&self) -> LonLat {
        Point::new(self.lon, self.lat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerGroup {
    pub group_id: u32,
    /// Sorted member ids.
    pub member_tower_ids: Vec<String>,
    pub centroid: LonLat,
    pub placement: Placement,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Clusters towers so that every member is within the threshold of some other
/// member (single linkage). Group ids follow the order of each group's smallest
/// member id, so the result does not depend on input order. Placement is left
/// as `Unlocated`; see [`TowerRegistry::new`].
pub fn group_towers(towers: &[Tower]) -> Vec<TowerGroup> {
    group_towers_within(towers, GROUPING_THRESHOLD_M)
}

pub fn group_towers_within(towers: &[Tower], threshold_m: f64) -> Vec<TowerGroup> {
    let n = towers.len();
    if n == 0 {
        return Vec::new();
    }
    // Grid cells at least `threshold` wide in both directions, so neighbours
    // are always in adjacent cells.
    let cell_lat = threshold_m / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0) * 1.001;
    let max_abs_lat = towers.iter().map(|t| t.lat.abs()).fold(0.0, f64::max);
    let cos_min = max_abs_lat.min(89.0).to_radians().cos();
    let cell_lon = cell_lat / cos_min;
    let cell = |t: &Tower| ((t.lon / cell_lon).floor() as i64, (t.lat / cell_lat).floor() as i64);

    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, t) in towers.iter().enumerate() {
        grid.entry(cell(t)).or_default().push(i);
    }
    let mut uf = UnionFind((0..n).collect());
    for (i, t) in towers.iter().enumerate() {
        let (cx, cy) = cell(t);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j > i && haversine_m(t.position(), towers[j].position()) < threshold_m {
                        uf.union(i, j);
                    }
                }
            }
        }
    }

    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let r = uf.find(i);
        members.entry(r).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = members.into_values().collect();
    for g in &mut groups {
        g.sort_by(|&a, &b| towers[a].tower_id.cmp(&towers[b].tower_id));
    }
    groups.sort_by(|a, b| towers[a[0]].tower_id.cmp(&towers[b[0]].tower_id));

    groups
        .into_iter()
        .enumerate()
        .map(|(gid, idx)| {
            let k = idx.len() as f64;
            let (sx, sy) = idx
                .iter()
                .fold((0.0, 0.0), |(x, y), &i| (x + towers[i].lon, y + towers[i].lat));
            TowerGroup {
                group_id: gid as u32,
                member_tower_ids: idx.iter().map(|&i| towers[i].tower_id.clone()).collect(),
                centroid: Point::new(sx / k, sy / k),
                placement: Placement::Unlocated,
            }
        })
        .collect()
}

/// Read `tower_id,lon,lat`.
pub fn read_towers(path: &Path) -> Result<Vec<Tower>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<Tower>() {
        let t = rec.map_err(|e| Error::csv(path, e))?;
        if !(-180.0..=180.0).contains(&t.lon) || !(-90.0..=90.0).contains(&t.lat) {
            return Err(Error::invalid(format!("tower {} has invalid coordinates", t.tower_id)));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_towers(path: &Path, towers: &[Tower]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for t in towers {
        w.serialize(t).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Tower id → group → district index lookup used while parsing events.
#[derive(Debug, Clone)]
pub struct TowerRegistry {
    pub groups: Vec<TowerGroup>,
    tower_group: HashMap<String, u32>,
    group_district: Vec<Option<u32>>,
}

impl TowerRegistry {
    pub fn new(towers: &[Tower], districts: &Districts) -> Result<Self> {
        let mut seen = HashMap::new();
        for t in towers {
            if seen.insert(t.tower_id.as_str(), ()).is_some() {
                return Err(Error::invalid(format!("duplicate tower id {}", t.tower_id)));
            }
        }
        let mut groups = group_towers(towers);
        let mut tower_group = HashMap::with_capacity(towers.len());
        let mut group_district = Vec::with_capacity(groups.len());
        for g in &mut groups {
            let located = districts.locate(g.centroid);
            g.placement = match located {
                Some(i) => Placement::District(districts.id(i).to_string()),
                None => Placement::Unlocated,
            };
            group_district.push(located);
            for m in &g.member_tower_ids {
                tower_group.insert(m.clone(), g.group_id);
            }
        }
        Ok(Self {
            groups,
            tower_group,
            group_district,
        })
    }

    /// `None` for unknown towers, `Some(None)` for towers whose group is unlocated.
    #[inline]
    pub fn district_of(&self, tower_id: &str) -> Option<Option<u32>> {
        self.tower_group
            .get(tower_id)
            .map(|&g| self.group_district[g as usize])
    }

    /// Towers per located district, useful for coverage reports.
    pub fn towers_per_district(&self, districts: &Districts) -> Vec<usize> {
        let mut out = vec![0; districts.len()];
        for g in &self.groups {
            if let Some(d) = self.group_district[g.group_id as usize] {
                out[d as usize] += g.member_tower_ids.len();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Point `meters` east of (lon, lat) along the parallel.
    fn east(lon: f64, lat: f64, meters: f64) -> f64 {
        lon + (meters / (EARTH_RADIUS_M * lat.to_radians().cos())).to_degrees()
    }

    #[test]
    fn close_towers_group_far_towers_do_not() {
        let near = [Tower::new("A", 65.0, 31.0), Tower::new("B", east(65.0, 31.0, 50.0), 31.0)];
        let g = group_towers(&near);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].member_tower_ids, vec!["A", "B"]);

        let far = [Tower::new("A", 65.0, 31.0), Tower::new("B", east(65.0, 31.0, 150.0), 31.0)];
        assert_eq!(group_towers(&far).len(), 2);
    }

    #[test]
    fn single_linkage_chains_through_middle_tower() {
        let towers = [
            Tower::new("A", 65.0, 31.0),
            Tower::new("B", east(65.0, 31.0, 90.0), 31.0),
            Tower::new("C", east(65.0, 31.0, 180.0), 31.0),
        ];
        // Brute-force single linkage on the three points: A-B and B-C are links.
        let d = |i: usize, j: usize| haversine_m(towers[i].position(), towers[j].position());
        assert!(d(0, 1) < 100.0 && d(1, 2) < 100.0 && d(0, 2) >= 100.0);
        let g = group_towers(&towers);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].member_tower_ids, vec!["A", "B", "C"]);
        assert!((g[0].centroid.x - towers[1].lon).abs() < 1e-12);
    }

    #[test]
    fn haversine_matches_known_arc() {
        // One degree of latitude on the mean-radius sphere.
        let d = haversine_m(Point::new(0.0, 0.0), Point::new(0.0, 1.0));
        assert!((d - EARTH_RADIUS_M * std::f64::consts::PI / 180.0).abs() < 1e-6);
    }

    #[test]
    fn group_ids_follow_smallest_member() {
        let towers = [
            Tower::new("Z", 10.0, 10.0),
            Tower::new("B", 20.0, 20.0),
            Tower::new("A", east(20.0, 20.0, 10.0), 20.0),
        ];
        let g = group_towers(&towers);
        assert_eq!(g[0].member_tower_ids, vec!["A", "B"]);
        assert_eq!(g[1].member_tower_ids, vec!["Z"]);
        assert_eq!((g[0].group_id, g[1].group_id), (0, 1));
    }
}
