//! Violent events: ISO-week timing, district-level flags, and proximity to
//! entry roads.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::day::Day;
use crate::error::{Error, Result};
use crate::geojson::LonLat;
use crate::spatial::geom::point_polyline_distance;
use crate::spatial::roads::DistrictRoads;

/// Days before the peak date searched for violence: `[t0 − 30, t0 − 1]`.
pub const PRE_PEAK_DAYS: i32 = 30;
pub const ROAD_DISTANCE_KM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoWeek {
    pub year: i32,
    pub week: u32,
}

impl IsoWeek {
    pub fn new(year: i32, week: u32) -> Option<Self> {
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).map(|_| Self { year, week })
    }

    pub fn of(day: Day) -> Self {
        let w = chrono::Datelike::iso_week(&day.to_date());
        Self { year: w.year(), week: w.week() }
    }

    pub fn monday(self) -> Day {
        Day::from_date(NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon).expect("validated week"))
    }

    pub fn sunday(self) -> Day {
        self.monday() + 6
    }

    /// Whether any day of the week falls in `[lo, hi]`.
    pub fn overlaps(self, lo: Day, hi: Day) -> bool {
        self.monday() <= hi && self.sunday() >= lo
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl FromStr for IsoWeek {
    type Err = Error;

    /// `YYYY-Www`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad ISO week {s:?}, expected YYYY-Www"));
        let (y, w) = s.trim().split_once("-W").ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let week = w.parse().map_err(|_| bad())?;
        IsoWeek::new(year, week).ok_or_else(bad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Exact,
    Radius25km,
    District,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Exact => "exact",
            Precision::Radius25km => "radius25km",
            Precision::District => "district",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "exact" => Some(Precision::Exact),
            "radius25km" => Some(Precision::Radius25km),
            "district" => Some(Precision::District),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolentEvent {
    pub event_id: String,
    pub district_id: String,
    pub week: IsoWeek,
    pub deaths: u32,
    pub location: Option<LonLat>,
    pub precision: Precision,
}

impl ViolentEvent {
    pub fn in_window(&self, t0: Day) -> bool {
        self.week.overlaps(t0 - PRE_PEAK_DAYS, t0 - 1)
    }
}

/// Which located events enter the road analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadEventFilter {
    pub include_radius25km: bool,
}

impl Default for RoadEventFilter {
    fn default() -> Self {
        Self { include_radius25km: true }
    }
}

impl RoadEventFilter {
    pub fn accepts(&self, e: &ViolentEvent) -> bool {
        e.location.is_some()
            && match e.precision {
                Precision::Exact => true,
                Precision::Radius25km => self.include_radius25km,
                Precision::District => false,
            }
    }
}

/// Pre-peak violence in one district-year.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolenceFlags {
    pub events: u32,
    pub deaths: u32,
}

impl ViolenceFlags {
    /// At least one fatal event.
    pub fn any(&self) -> bool {
        self.events > 0
    }

    pub fn more_than_two_events(&self) -> bool {
        self.events > 2
    }

    pub fn at_least_ten_deaths(&self) -> bool {
        self.deaths >= 10
    }
}

/// Events in `district_id` whose week overlaps `[t0 − 30, t0 − 1]`.
pub fn district_violence<'a>(
    district_id: &str,
    t0: Day,
    events: impl IntoIterator<Item = &'a ViolentEvent>,
) -> ViolenceFlags {
    events
        .into_iter()
        .filter(|e| e.district_id == district_id && e.in_window(t0))
        .fold(ViolenceFlags::default(), |f, e| ViolenceFlags {
            events: f.events + 1,
            deaths: f.deaths + e.deaths,
        })
}

pub fn district_violence_flag<'a>(
    district_id: &str,
    t0: Day,
    events: impl IntoIterator<Item = &'a ViolentEvent>,
) -> bool {
    district_violence(district_id, t0, events).any()
}

/// Distance (km) from a located event to the nearest clipped entry road.
pub fn event_road_distance_km(roads: &DistrictRoads, location: LonLat) -> f64 {
    let p = roads.projection.forward(location);
    roads
        .pieces
        .iter()
        .map(|piece| point_polyline_distance(p, &piece.points))
        .fold(f64::INFINITY, f64::min)
}

/// True iff some accepted event lies within `max_km` of an entry road and its
/// week overlaps the pre-peak window.
pub fn road_violence_flag<'a>(
    roads: &DistrictRoads,
    t0: Day,
    events: impl IntoIterator<Item = &'a ViolentEvent>,
    filter: RoadEventFilter,
    max_km: f64,
) -> bool {
    if roads.pieces.is_empty() {
        return false;
    }
    events.into_iter().any(|e| {
        filter.accepts(e)
            && e.in_window(t0)
            && event_road_distance_km(roads, e.location.expect("filter requires location")) <= max_km
    })
}

#[derive(Deserialize)]
struct EventRow {
    event_id: String,
    district_id: String,
    iso_week: String,
    deaths: i64,
    lon: Option<f64>,
    lat: Option<f64>,
    precision: String,
}

/// CSV `event_id,district_id,iso_week,deaths,lon,lat,precision`.
pub fn read_events_csv(path: &Path) -> Result<Vec<ViolentEvent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    rdr.deserialize()
        .map(|row| {
            let r: EventRow = row.map_err(|e| Error::csv(path, e))?;
            let ctx = |m: String| Error::invalid(format!("{} event {}: {m}", path.display(), r.event_id));
            if r.deaths < 1 {
                return Err(ctx(format!("deaths must be >= 1, got {}", r.deaths)));
            }
            let precision = Precision::parse(&r.precision).ok_or_else(|| ctx(format!("unknown precision {:?}", r.precision)))?;
            let location = match (r.lon, r.lat) {
                (Some(x), Some(y)) => Some(LonLat::new(x, y)),
                (None, None) => None,
                _ => return Err(ctx("lon and lat must both be present or both empty".into())),
            };
            Ok(ViolentEvent {
                week: r.iso_week.parse().map_err(|e: Error| ctx(e.to_string()))?,
                event_id: r.event_id,
                district_id: r.district_id,
                deaths: r.deaths as u32,
                location,
                precision,
            })
        })
        .collect()
}

pub fn write_events_csv(path: &Path, events: &[ViolentEvent]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "event_id,district_id,iso_week,deaths,lon,lat,precision").map_err(io)?;
    for e in events {
        let (lon, lat) = e
            .location
            .map(|p| (format!("{:.6}", p.x), format!("{:.6}", p.y)))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.event_id,
            e.district_id,
            e.week,
            e.deaths,
            lon,
            lat,
            e.precision.as_str()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(district: &str, week: IsoWeek, deaths: u32) -> ViolentEvent {
        ViolentEvent {
            event_id: "e".into(),
            district_id: district.into(),
            week,
            deaths,
            location: None,
            precision: Precision::District,
        }
    }

    #[test]
    fn iso_weeks() {
        let w: IsoWeek = "2016-W14".parse().unwrap();
        assert_eq!(w.monday(), Day::from_ymd(2016, 4, 4).unwrap());
        assert_eq!(w.to_string(), "2016-W14");
        assert_eq!(IsoWeek::of(Day::from_ymd(2016, 4, 10).unwrap()), w);
        assert!("2016-W54".parse::<IsoWeek>().is_err());
        assert!("2016-14".parse::<IsoWeek>().is_err());
        // 2015 has 53 ISO weeks; 2015-W53 ends on Sunday 2016-01-03
        assert_eq!("2015-W53".parse::<IsoWeek>().unwrap().sunday(), Day::from_ymd(2016, 1, 3).unwrap());
    }

    #[test]
    fn district_flag_examples() {
        let t0 = Day::from_ymd(2016, 4, 7).unwrap();
        let two_weeks_before = IsoWeek::of(t0 - 14);
        assert!(district_violence_flag("D1", t0, &[event("D1", two_weeks_before, 1)]));
        assert!(!district_violence_flag("D1", t0, &[event("D2", two_weeks_before, 1)]));

        // week containing t0 − 30 straddles the window start
        let straddle = IsoWeek::of(t0 - 30);
        assert!(straddle.monday() < t0 - 30);
        assert!(district_violence_flag("D1", t0, &[event("D1", straddle, 1)]));
        // the week ending just before t0 − 30 does not count
        let before = IsoWeek::of(straddle.monday() - 1);
        assert!(!district_violence_flag("D1", t0, &[event("D1", before, 1)]));
        // the week containing t0 counts only if it starts before t0
        let containing = IsoWeek::of(t0);
        assert_eq!(containing.monday() < t0, district_violence_flag("D1", t0, &[event("D1", containing, 1)]));
    }

    #[test]
    fn intensity_flags() {
        let t0 = Day::from_ymd(2016, 4, 6).unwrap();
        let w = IsoWeek::of(t0 - 10);
        let evs = vec![event("D", w, 3), event("D", w, 3), event("D", w, 3)];
        let f = district_violence("D", t0, &evs);
        assert!(f.any() && f.more_than_two_events() && !f.at_least_ten_deaths());
        let f = district_violence("D", t0, &evs[..2]);
        assert!(!f.more_than_two_events());
        let heavy = vec![event("D", w, 10)];
        assert!(district_violence("D", t0, &heavy).at_least_ten_deaths());
    }

    #[test]
    fn events_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let mut e = event("D", "2016-W10".parse().unwrap(), 2);
        e.location = Some(LonLat::new(65.5, 31.25));
        e.precision = Precision::Exact;
        let evs = vec![e, event("D2", "2017-W01".parse().unwrap(), 1)];
        write_events_csv(&path, &evs).unwrap();
        assert_eq!(read_events_csv(&path).unwrap(), evs);

        std::fs::write(&path, "event_id,district_id,iso_week,deaths,lon,lat,precision\nx,D,2016-W10,0,,,district\n").unwrap();
        assert!(read_events_csv(&path).is_err());
    }
}
