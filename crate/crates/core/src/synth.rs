//! Synthetic worlds with known ground truth: a grid of square districts,
//! towers, subscribers who relocate and make seasonal harvest trips, NDVI
//! pixels, violence, cultivation and covariates.
//!
//! Every random draw comes from a stream keyed by `(seed, purpose)`, so a world
//! is fully determined by its config. Subscribers get their own streams, which
//! keeps event generation parallel and order independent.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::day::{Day, StudyRange};
use crate::error::{Error, Result};
use crate::geojson::LonLat;
use crate::ingest::geometry::{DistrictGeometry, Districts};
use crate::ingest::towers::{write_towers, Tower};
use crate::panel::{classify_cultivation_with, write_district_year_csv, Covariates, Cultivation};
use crate::phenology::{period_start, write_ndvi_csv, NdviSeries, PERIODS_PER_YEAR, PERIOD_DAYS, SEARCH_PERIODS};
use crate::residence::{infer_segments, DailyLocation, SegmentParams};
use crate::rng::stream;
use crate::spatial::geom::{Point, Polygon};
use crate::spatial::projection::LocalProjection;
use crate::spatial::roads::{Road, RoadNetwork};
use crate::spatial::violence::{district_violence_flag, write_events_csv, IsoWeek, Precision, ViolentEvent};

const SECONDS_PER_DAY: i64 = 86_400;
/// Pulses are calibrated on the default outcome: 7-day windows starting 15..29
/// days after the peak date, in-rate with a 30-day lag.
const CAL_STARTS: (i32, i32) = (15, 29);
const CAL_LEN: i32 = 7;
const CAL_LAG: i32 = 30;
/// NDVI baseline of the phenology curve.
const NDVI_FLOOR: f64 = 0.05;
const MAX_STAY: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub rows: u32,
    pub cols: u32,
    pub district_km: f64,
    /// South-west corner of the grid, `[lon, lat]`.
    pub origin: [f64; 2],
    /// Each province spans this many full grid rows.
    pub province_rows: u32,
    pub towers_per_district: u32,
    /// Chance that a tower gets a near-duplicate twin 30-80 m away.
    pub twin_tower_prob: f64,
    pub subscribers_per_district: u32,
    /// Daily chance a subscriber has any events; at least 0.8.
    pub observe_prob: f64,
    /// Events on an observed day are 1 + Poisson(this).
    pub extra_events_mean: f64,
    /// Chance a resident relocates permanently within 30 days.
    pub move_prob_30d: f64,
    pub first_year: i32,
    pub years: u32,
    /// Study range runs from this many days before 1 January of the first year...
    pub days_before: i32,
    /// ...to this many days after 1 January of the last year.
    pub days_after: i32,
    /// Inclusive range of true peak periods.
    pub peak_periods: [u32; 2],
    pub high_share: f64,
    pub low_share: f64,
    pub high_ha: [f64; 2],
    pub low_ha: [f64; 2],
    /// Expected in-rate excess of the best harvest window in high districts.
    pub pulse_excess: f64,
    pub low_pulse_excess: f64,
    /// Trip arrivals are uniform over these offsets from the peak period start.
    pub arrival_offsets: [i32; 2],
    pub stay_days: [u32; 2],
    /// Spread each pulse's trips evenly over all (arrival, stay) pairs instead
    /// of drawing them independently.
    pub stratified_trips: bool,
    pub return_prob: f64,
    pub taliban_share: f64,
    /// Relative change of pulse size in Taliban districts.
    pub taliban_effect: f64,
    /// Relative change of pulse size after pre-peak violence; 0 keeps violence
    /// independent of migration.
    pub violence_effect: f64,
    pub eradication_prob: f64,
    pub eradication_max_share: f64,
    /// Pulse shrinks by `eradication_effect * eradicated share`.
    pub eradication_effect: f64,
    pub violence_per_week: f64,
    pub exact_share: f64,
    pub radius_share: f64,
    pub pixels_per_district: u32,
    pub agri_pixel_share: f64,
    pub ndvi_noise: f64,
    pub ndvi_width: f64,
    /// Per-pixel jitter of the NDVI peak day around the period centre.
    pub peak_jitter: i32,
    /// Event files written by `write_files`.
    pub event_files: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rows: 6,
            cols: 8,
            district_km: 30.0,
            origin: [64.0, 31.0],
            province_rows: 1,
            towers_per_district: 3,
            twin_tower_prob: 0.2,
            subscribers_per_district: 2000,
            observe_prob: 0.9,
            extra_events_mean: 0.3,
            move_prob_30d: 0.01,
            first_year: 2015,
            years: 2,
            days_before: 80,
            days_after: 240,
            peak_periods: [6, 8],
            high_share: 0.4,
            low_share: 0.2,
            high_ha: [1000.0, 6000.0],
            low_ha: [20.0, 999.0],
            pulse_excess: 0.03,
            low_pulse_excess: 0.0,
            arrival_offsets: [10, 29],
            stay_days: [8, 12],
            stratified_trips: false,
            return_prob: 1.0,
            taliban_share: 0.4,
            taliban_effect: 0.0,
            violence_effect: 0.0,
            eradication_prob: 0.3,
            eradication_max_share: 0.2,
            eradication_effect: 0.0,
            violence_per_week: 0.05,
            exact_share: 0.5,
            radius_share: 0.2,
            pixels_per_district: 40,
            agri_pixel_share: 0.8,
            ndvi_noise: 0.05,
            ndvi_width: 60.0,
            peak_jitter: 3,
            event_files: 4,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut unit = |name: &str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} = {v} is not in [0, 1]"));
            }
        };
        unit("twin_tower_prob", self.twin_tower_prob);
        unit("observe_prob", self.observe_prob);
        unit("move_prob_30d", self.move_prob_30d);
        unit("high_share", self.high_share);
        unit("low_share", self.low_share);
        unit("high_share + low_share", self.high_share + self.low_share);
        unit("return_prob", self.return_prob);
        unit("taliban_share", self.taliban_share);
        unit("eradication_prob", self.eradication_prob);
        unit("eradication_max_share", self.eradication_max_share);
        unit("exact_share", self.exact_share);
        unit("radius_share", self.radius_share);
        unit("exact_share + radius_share", self.exact_share + self.radius_share);
        unit("agri_pixel_share", self.agri_pixel_share);
        if self.observe_prob < 0.8 {
            problems.push(format!("observe_prob {} is below the 0.8 floor", self.observe_prob));
        }
        for (name, v) in [
            ("pulse_excess", self.pulse_excess),
            ("low_pulse_excess", self.low_pulse_excess),
            ("extra_events_mean", self.extra_events_mean),
            ("violence_per_week", self.violence_per_week),
            ("ndvi_noise", self.ndvi_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if self.pulse_excess >= 0.5 || self.low_pulse_excess >= 0.5 {
            problems.push("pulse excess must be below 0.5".into());
        }
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols < 2 {
            problems.push("the grid needs at least two districts".into());
        }
        if self.rows * self.cols > 9999 {
            problems.push("at most 9999 districts".into());
        }
        if !(self.district_km > 1.0) {
            problems.push("district_km must exceed 1".into());
        }
        if self.province_rows == 0 {
            problems.push("province_rows must be positive".into());
        }
        if self.towers_per_district == 0 || self.subscribers_per_district == 0 {
            problems.push("towers and subscribers per district must be positive".into());
        }
        if self.years == 0 {
            problems.push("years must be positive".into());
        }
        let [p0, p1] = self.peak_periods;
        if p0 == 0 || p0 > p1 || p1 > SEARCH_PERIODS {
            problems.push(format!("peak_periods must satisfy 1 <= lo <= hi <= {SEARCH_PERIODS}"));
        }
        if self.high_ha[0] < 1000.0 || self.high_ha[0] > self.high_ha[1] {
            problems.push("high_ha must be an increasing range starting at 1000 or more".into());
        }
        if self.low_ha[0] <= 0.0 || self.low_ha[0] > self.low_ha[1] || self.low_ha[1] >= 1000.0 {
            problems.push("low_ha must be an increasing range inside (0, 1000)".into());
        }
        let [a0, a1] = self.arrival_offsets;
        if a0 > a1 || a0 < 1 {
            problems.push("arrival_offsets must be an increasing range of positive offsets".into());
        }
        let [s0, s1] = self.stay_days;
        if s0 == 0 || s0 > s1 || s1 > MAX_STAY {
            problems.push(format!("stay_days must satisfy 1 <= lo <= hi <= {MAX_STAY}"));
        }
        if !(self.ndvi_width >= 16.0) {
            problems.push("ndvi_width must be at least 16 days".into());
        }
        if !(0..=7).contains(&self.peak_jitter) {
            problems.push("peak_jitter must be within 0..=7 so peaks stay inside their period".into());
        }
        if self.pixels_per_district == 0 {
            problems.push("pixels_per_district must be positive".into());
        }
        if self.event_files == 0 {
            problems.push("event_files must be positive".into());
        }
        if self.days_before < 0 || self.days_after < 0 {
            problems.push("days_before and days_after must be non-negative".into());
        }
        if self.eradication_effect < 0.0 || self.taliban_effect < -1.0 || self.violence_effect < -1.0 {
            problems.push("effect knobs may not make pulses negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid world config: {}", problems.join("; "))))
        }
    }

    pub fn study_range(&self) -> StudyRange {
        let last = self.first_year + self.years as i32 - 1;
        StudyRange::new(
            Day::first_of_year(self.first_year) - self.days_before,
            Day::first_of_year(last) + self.days_after,
        )
    }

    pub fn year_list(&self) -> Vec<i32> {
        (0..self.years as i32).map(|i| self.first_year + i).collect()
    }

    pub fn n_districts(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn n_subscribers(&self) -> usize {
        self.n_districts() * self.subscribers_per_district as usize
    }
}

/// Double-logistic NDVI bump at `day`, scaled so the noiseless peak equals
/// `0.05 + amplitude`, plus a noise draw, clamped to [-1, 1].
pub fn phenology_curve(day: f64, peak_day: f64, amplitude: f64, width: f64, noise: f64) -> f64 {
    let slope = width / 8.0;
    let logistic = |x: f64| 1.0 / (1.0 + (-x / slope).exp());
    let bump = |x: f64| logistic(x + width / 2.0) * logistic(width / 2.0 - x);
    let v = NDVI_FLOOR + amplitude * bump(day - peak_day) / bump(0.0);
    (v + noise).clamp(-1.0, 1.0)
}

/// Gaussian draw with rejection outside `±3 sd`.
pub fn truncated_noise(rng: &mut impl Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sd).expect("finite sd");
    loop {
        let z: f64 = n.sample(rng);
        if z.abs() <= 3.0 * sd {
            return z;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trip {
    pub pulse: u32,
    pub destination: u32,
    pub arrival: Day,
    pub stay: u32,
    pub returns: bool,
}

/// One calibrated harvest pulse into a district-year.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub district: u32,
    pub year: i32,
    pub t0: Day,
    pub target_excess: f64,
    /// Residents assumed present when the pulse was sized.
    pub residents: f64,
    pub planned: u32,
}

/// Per district-year truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub district_id: String,
    pub year: i32,
    pub cultivation: String,
    pub poppy_ha: f64,
    pub taliban: bool,
    pub peak_period: u32,
    pub t0: Day,
    pub ndvi_peak_day: Day,
    pub harvest_day: Day,
    /// Expected in-rate excess of the best default harvest window.
    pub target_excess: f64,
    /// The same quantity from the trips that actually happened.
    pub realized_excess: f64,
    pub migrants_planned: u32,
    pub migrants_realized: u32,
    /// Realized migrants by source cultivation class (none, low, high).
    pub origin_mix: BTreeMap<String, f64>,
    pub return_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: WorldConfig,
    pub study_start: Day,
    pub study_end: Day,
    pub rows: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn row(&self, district_id: &str, year: i32) -> Option<&TruthRow> {
        self.rows.iter().find(|r| r.district_id == district_id && r.year == year)
    }
}

/// What happened to each planned trip, collected while generating events.
#[derive(Debug, Clone, Default)]
pub struct TripLedger {
    /// Executed trips per pulse.
    pub executed: Vec<Vec<Trip>>,
    /// Source district of each executed trip, parallel to `executed`.
    pub sources: Vec<Vec<u32>>,
    pub skipped: Vec<u32>,
}

impl TripLedger {
    pub fn new(pulses: usize) -> Self {
        Self {
            executed: vec![Vec::new(); pulses],
            sources: vec![Vec::new(); pulses],
            skipped: vec![0; pulses],
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (i, (e, s)) in other.executed.into_iter().zip(other.sources).enumerate() {
            self.executed[i].extend(e);
            self.sources[i].extend(s);
            self.skipped[i] += other.skipped[i];
        }
        self
    }
}

/// Chance that each day of an `L`-day stay is covered by a detected residence
/// segment in the destination, with a subscriber observed on each day with
/// probability `p`. Exact, by enumerating all observation patterns through
/// the real segmentation rule.
pub fn stay_detection(stay: u32, p: f64, params: SegmentParams) -> Vec<f64> {
    let l = stay as usize;
    let pad = 10i32;
    let mut cover = vec![0.0; l];
    for mask in 0u32..(1 << l) {
        let seen = mask.count_ones() as i32;
        let w = p.powi(seen) * (1.0 - p).powi(l as i32 - seen);
        let mut days: Vec<DailyLocation> = (-pad..0)
            .map(|i| DailyLocation { day: Day(i), district: 0, event_count: 1 })
            .collect();
        days.extend((0..l).filter(|i| mask >> i & 1 == 1).map(|i| DailyLocation {
            day: Day(i as i32),
            district: 1,
            event_count: 1,
        }));
        days.extend((l as i32..l as i32 + pad).map(|i| DailyLocation { day: Day(i), district: 0, event_count: 1 }));
        for s in infer_segments(&days, params).iter().filter(|s| s.district == 1) {
            for k in s.start.0.max(0)..=s.end.0.min(l as i32 - 1) {
                cover[k as usize] += w;
            }
        }
    }
    cover
}

/// Expected in-rate excess by offset from t0 for a set of trips weighted by
/// `weight`: `(movers, present)` contributions per offset.
struct PulseProfile {
    lo: i32,
    movers: Vec<f64>,
    present: Vec<f64>,
}

impl PulseProfile {
    fn new(lo: i32, hi: i32) -> Self {
        let n = (hi - lo + 1) as usize;
        Self { lo, movers: vec![0.0; n], present: vec![0.0; n] }
    }

    /// Add one trip arriving at offset `a` from t0.
    fn add(&mut self, a: i32, stay: u32, returns: bool, weight: f64, detection: &[Vec<f64>]) {
        let n = self.movers.len() as i32;
        if returns {
            for (k, q) in detection[stay as usize].iter().enumerate() {
                let i = a + k as i32 - self.lo;
                if (0..n).contains(&i) {
                    self.movers[i as usize] += weight * q;
                    self.present[i as usize] += weight * q;
                }
            }
        } else {
            for i in (a - self.lo).max(0)..n {
                let k = i + self.lo - a;
                if k < CAL_LAG {
                    self.movers[i as usize] += weight;
                }
                self.present[i as usize] += weight;
            }
        }
    }

    /// Best window mean of `movers * (1 - m) / (residents + present)`.
    fn best_window(&self, scale: f64, residents: f64, m: f64) -> f64 {
        let excess = |off: i32| {
            let i = (off - self.lo) as usize;
            scale * self.movers[i] * (1.0 - m) / (residents + scale * self.present[i])
        };
        (CAL_STARTS.0..=CAL_STARTS.1)
            .map(|s| (s..s + CAL_LEN).map(excess).sum::<f64>() / CAL_LEN as f64)
            .fold(0.0, f64::max)
    }
}

fn profile_bounds() -> (i32, i32) {
    (CAL_STARTS.0, CAL_STARTS.1 + CAL_LEN - 1)
}

/// A generated world. Events are produced lazily per subscriber.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub range: StudyRange,
    pub districts: Districts,
    pub towers: Vec<Tower>,
    /// District of each tower, parallel to `towers`.
    pub tower_district: Vec<u32>,
    towers_by_district: Vec<Vec<u32>>,
    pub roads: RoadNetwork,
    pub cultivation: BTreeMap<(String, i32), f64>,
    pub eradication: BTreeMap<(String, i32), f64>,
    pub control: BTreeMap<String, bool>,
    pub covariates: Covariates,
    pub events: Vec<ViolentEvent>,
    pub ndvi: Vec<NdviSeries<f64>>,
    /// True peak period per (district, year index).
    pub peak_period: Vec<Vec<u32>>,
    pub pulses: Vec<Pulse>,
    /// Initial home of each subscriber.
    pub homes: Vec<u32>,
    trips: Vec<Vec<Trip>>,
    detection: Vec<Vec<f64>>,
}

pub fn subscriber_id(i: usize) -> String {
    format!("S{i:07}")
}

pub fn district_id(i: usize) -> String {
    format!("D{:04}", i + 1)
}

impl World {
    pub fn generate(config: &WorldConfig) -> Result<Self> {
        config.validate()?;
        let c = config.clone();
        let range = c.study_range();
        let years = c.year_list();
        let n_d = c.n_districts();
        let projection = LocalProjection::new(LonLat::new(c.origin[0], c.origin[1]));
        let km = c.district_km;

        // Districts: row-major squares, ids in creation order.
        let mut geoms = Vec::with_capacity(n_d);
        for r in 0..c.rows {
            for col in 0..c.cols {
                let (x0, y0) = (col as f64 * km, r as f64 * km);
                let ring: Vec<LonLat> = [(x0, y0), (x0 + km, y0), (x0 + km, y0 + km), (x0, y0 + km), (x0, y0)]
                    .into_iter()
                    .map(|(x, y)| projection.inverse(Point::new(x, y)))
                    .collect();
                let province = format!("P{:03}", r / c.province_rows + 1);
                let id = district_id((r * c.cols + col) as usize);
                geoms.push(DistrictGeometry::new(id, province, vec![Polygon::new(ring, vec![])])?);
            }
        }
        let districts = Districts::new(geoms)?;
        let cell_origin = |d: usize| {
            let (r, col) = (d as u32 / c.cols, d as u32 % c.cols);
            (col as f64 * km, r as f64 * km)
        };

        // Towers, kept 10% away from district edges.
        let mut rng = stream(c.seed, "towers");
        let mut towers = Vec::new();
        let mut tower_district = Vec::new();
        let mut towers_by_district = vec![Vec::new(); n_d];
        for d in 0..n_d {
            let (x0, y0) = cell_origin(d);
            for k in 0..c.towers_per_district {
                let x = x0 + km * rng.random_range(0.1..0.9);
                let y = y0 + km * rng.random_range(0.1..0.9);
                let mut place = |id: String, x: f64, y: f64| {
                    let p = projection.inverse(Point::new(x, y));
                    towers_by_district[d].push(towers.len() as u32);
                    tower_district.push(d as u32);
                    towers.push(Tower::new(id, p.x, p.y));
                };
                place(format!("T{:04}_{k:02}", d + 1), x, y);
                if rng.random::<f64>() < c.twin_tower_prob {
                    let r_km = rng.random_range(0.03..0.08);
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    place(format!("T{:04}_{k:02}b", d + 1), x + r_km * a.cos(), y + r_km * a.sin());
                }
            }
        }

        // Roads along every row and column centre line, extended past the grid.
        let mut roads = Vec::new();
        let (w, h) = (c.cols as f64 * km, c.rows as f64 * km);
        for r in 0..c.rows {
            let y = (r as f64 + 0.5) * km;
            roads.push(Road {
                road_id: format!("R-row{r}"),
                points: vec![projection.inverse(Point::new(-km, y)), projection.inverse(Point::new(w + km, y))],
            });
        }
        for col in 0..c.cols {
            let x = (col as f64 + 0.5) * km;
            roads.push(Road {
                road_id: format!("R-col{col}"),
                points: vec![projection.inverse(Point::new(x, -km)), projection.inverse(Point::new(x, h + km))],
            });
        }
        let roads = RoadNetwork::new(roads)?;

        // Cultivation class per district, hectares per year.
        let mut rng = stream(c.seed, "cultivation");
        let mut order: Vec<usize> = (0..n_d).collect();
        order.shuffle(&mut rng);
        let n_high = (c.high_share * n_d as f64).round() as usize;
        let n_low = ((c.low_share * n_d as f64).round() as usize).min(n_d - n_high);
        let mut class = vec![Cultivation::None; n_d];
        for &d in &order[..n_high] {
            class[d] = Cultivation::High;
        }
        for &d in &order[n_high..n_high + n_low] {
            class[d] = Cultivation::Low;
        }
        let mut cultivation = BTreeMap::new();
        let mut eradication = BTreeMap::new();
        for d in 0..n_d {
            for &y in &years {
                let ha = match class[d] {
                    Cultivation::High => rng.random_range(c.high_ha[0]..=c.high_ha[1]).round(),
                    Cultivation::Low => rng.random_range(c.low_ha[0]..=c.low_ha[1]).round(),
                    Cultivation::None => 0.0,
                };
                let key = (district_id(d), y);
                cultivation.insert(key.clone(), ha);
                if ha > 0.0 && rng.random::<f64>() < c.eradication_prob {
                    let share = rng.random_range(0.0..=c.eradication_max_share);
                    let erad = (ha * share / (1.0 - share)).round();
                    eradication.insert(key, erad);
                }
            }
        }

        let mut rng = stream(c.seed, "control");
        let control: BTreeMap<String, bool> =
            (0..n_d).map(|d| (district_id(d), rng.random::<f64>() < c.taliban_share)).collect();

        let mut rng = stream(c.seed, "covariates");
        let mut covariates = Covariates::new(vec!["population".into(), "elevation_km".into()]);
        for d in 0..n_d {
            let population = (c.subscribers_per_district as f64 * rng.random_range(20.0..60.0)).round();
            let elevation = rng.random_range(0.4..2.5);
            covariates.insert(&district_id(d), None, vec![population, elevation])?;
        }

        // True peak periods.
        let mut rng = stream(c.seed, "peaks");
        let peak_period: Vec<Vec<u32>> = (0..n_d)
            .map(|_| years.iter().map(|_| rng.random_range(c.peak_periods[0]..=c.peak_periods[1])).collect())
            .collect();

        let events = generate_violence(&c, range, &projection, &cell_origin);

        let ndvi = generate_ndvi(&c, &years, &peak_period);

        // Pulses, sized against the detection-aware expected excess.
        let params = SegmentParams::default();
        let detection: Vec<Vec<f64>> = (0..=c.stay_days[1])
            .map(|l| if l < c.stay_days[0] { Vec::new() } else { stay_detection(l, c.observe_prob, params) })
            .collect();
        let residents = c.subscribers_per_district as f64;
        let mut pulses = Vec::new();
        for d in 0..n_d {
            for (yi, &y) in years.iter().enumerate() {
                let base = match class[d] {
                    Cultivation::High => c.pulse_excess,
                    Cultivation::Low => c.low_pulse_excess,
                    Cultivation::None => 0.0,
                };
                let t0 = period_start(y, peak_period[d][yi]);
                let id = district_id(d);
                let violent = district_violence_flag(&id, t0, &events);
                let ha = cultivation[&(id.clone(), y)];
                let erad_share = eradication.get(&(id.clone(), y)).map_or(0.0, |e| e / (ha + e));
                let mut target = base
                    * (1.0 + c.taliban_effect * control[&id] as u8 as f64)
                    * (1.0 + c.violence_effect * violent as u8 as f64)
                    * (1.0 - c.eradication_effect * erad_share);
                target = target.max(0.0);
                let planned = if target > 0.0 { pulse_size(&c, &detection, target, residents) } else { 0 };
                pulses.push(Pulse { district: d as u32, year: y, t0, target_excess: target, residents, planned });
            }
        }

        // Assign trips: sources are other districts whose peak is no later than
        // the destination's; each subscriber travels at most once a year.
        let homes: Vec<u32> = (0..c.n_subscribers()).map(|s| (s / c.subscribers_per_district as usize) as u32).collect();
        let mut trips: Vec<Vec<Trip>> = vec![Vec::new(); homes.len()];
        let mut busy = vec![vec![false; years.len()]; homes.len()];
        let mut rng = stream(c.seed, "trips");
        for (pi, p) in pulses.iter().enumerate() {
            if p.planned == 0 {
                continue;
            }
            let yi = (p.year - c.first_year) as usize;
            let dest_period = peak_period[p.district as usize][yi];
            let mut pool: Vec<usize> = (0..homes.len())
                .filter(|&s| {
                    let h = homes[s] as usize;
                    h != p.district as usize && peak_period[h][yi] <= dest_period && !busy[s][yi]
                })
                .collect();
            if pool.len() < p.planned as usize {
                return Err(Error::invalid(format!(
                    "pulse into {} {} needs {} migrants but only {} subscribers are eligible",
                    district_id(p.district as usize),
                    p.year,
                    p.planned,
                    pool.len()
                )));
            }
            let (chosen, _) = pool.partial_shuffle(&mut rng, p.planned as usize);
            // (arrival, stay) cells; stratified pulses visit every cell once per
            // round in shuffled order.
            let mut cells: Vec<(i32, u32)> = (c.arrival_offsets[0]..=c.arrival_offsets[1])
                .flat_map(|a| (c.stay_days[0]..=c.stay_days[1]).map(move |l| (a, l)))
                .collect();
            for (k, &s) in chosen.iter().enumerate() {
                let (a, l) = if c.stratified_trips {
                    if k % cells.len() == 0 {
                        cells.shuffle(&mut rng);
                    }
                    cells[k % cells.len()]
                } else {
                    (
                        rng.random_range(c.arrival_offsets[0]..=c.arrival_offsets[1]),
                        rng.random_range(c.stay_days[0]..=c.stay_days[1]),
                    )
                };
                busy[s][yi] = true;
                trips[s].push(Trip {
                    pulse: pi as u32,
                    destination: p.district,
                    arrival: p.t0 + a,
                    stay: l,
                    returns: rng.random::<f64>() < c.return_prob,
                });
            }
        }
        for t in &mut trips {
            t.sort_by_key(|t| t.arrival);
        }

        Ok(Self {
            config: c,
            range,
            districts,
            towers,
            tower_district,
            towers_by_district,
            roads,
            cultivation,
            eradication,
            control,
            covariates,
            events,
            ndvi,
            peak_period,
            pulses,
            homes,
            trips,
            detection,
        })
    }

    pub fn n_subscribers(&self) -> usize {
        self.homes.len()
    }

    pub fn cultivation_class(&self, d: u32, year: i32) -> Cultivation {
        let ha = self.cultivation.get(&(district_id(d as usize), year)).copied().unwrap_or(0.0);
        classify_cultivation_with(ha, 1000.0).unwrap_or(Cultivation::None)
    }

    /// Time-sorted `(unix_ts, tower index)` events of subscriber `s`; executed
    /// and skipped trips go to `ledger`.
    pub fn subscriber_events(&self, s: usize, out: &mut Vec<(i64, u32)>, ledger: &mut TripLedger) {
        let c = &self.config;
        out.clear();
        let mut rng = stream(c.seed, &format!("subscriber/{s}"));
        let t_len = self.range.len();
        let n_d = self.districts.len() as u32;
        let hazard = c.move_prob_30d / 30.0;
        let extra = (c.extra_events_mean > 0.0).then(|| Poisson::new(c.extra_events_mean).expect("valid mean"));

        // Observed days, topped up to the 80% floor.
        let mut observed: Vec<bool> = (0..t_len).map(|_| rng.random::<f64>() < c.observe_prob).collect();
        let floor = (0.8 * t_len as f64).ceil() as usize;
        let mut seen = observed.iter().filter(|&&o| o).count();
        for o in observed.iter_mut() {
            if seen >= floor {
                break;
            }
            if !*o {
                *o = true;
                seen += 1;
            }
        }

        let mut home = self.homes[s];
        let mut away: Option<(u32, Day, bool)> = None;
        let mut next_trip = 0;
        let trips = &self.trips[s];
        let mut day_events: Vec<(i64, u32)> = Vec::with_capacity(8);
        for (i, day) in self.range.days().enumerate() {
            if let Some((dest, until, returns)) = away {
                if day >= until {
                    if !returns {
                        home = dest;
                    }
                    away = None;
                }
            }
            while next_trip < trips.len() && trips[next_trip].arrival <= day {
                let t = trips[next_trip];
                next_trip += 1;
                if t.arrival < day || away.is_some() || home == t.destination {
                    ledger.skipped[t.pulse as usize] += 1;
                    continue;
                }
                ledger.executed[t.pulse as usize].push(t);
                ledger.sources[t.pulse as usize].push(home);
                away = Some((t.destination, day + t.stay as i32, t.returns));
            }
            if away.is_none() && rng.random::<f64>() < hazard {
                let other = rng.random_range(0..n_d - 1);
                home = if other >= home { other + 1 } else { other };
            }
            if !observed[i] {
                continue;
            }
            let here = away.map_or(home, |a| a.0);
            let n = 1 + extra.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            let start = day.unix_start();
            let local = &self.towers_by_district[here as usize];
            day_events.clear();
            for _ in 0..n {
                let ts = start + rng.random_range(0..SECONDS_PER_DAY);
                day_events.push((ts, local[rng.random_range(0..local.len())]));
            }
            day_events.sort_unstable();
            out.extend_from_slice(&day_events);
        }
    }

    /// Run `f` over every subscriber's events in parallel, folding the results.
    /// The trip ledger is merged alongside.
    pub fn fold_subscribers<A, F, M>(&self, init: impl Fn() -> A + Sync + Send, f: F, merge: M) -> (A, TripLedger)
    where
        A: Send,
        F: Fn(&mut A, usize, &[(i64, u32)]) + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        let pulses = self.pulses.len();
        (0..self.n_subscribers())
            .into_par_iter()
            .fold(
                || (init(), TripLedger::new(pulses), Vec::new()),
                |(mut acc, mut ledger, mut buf), s| {
                    self.subscriber_events(s, &mut buf, &mut ledger);
                    f(&mut acc, s, &buf);
                    (acc, ledger, buf)
                },
            )
            .map(|(a, l, _)| (a, l))
            .reduce(|| (init(), TripLedger::new(pulses)), |(a, la), (b, lb)| (merge(a, b), la.merge(lb)))
    }

    /// Ground truth from a trip ledger of a full generation pass.
    pub fn ground_truth(&self, ledger: &TripLedger) -> GroundTruth {
        let c = &self.config;
        let (lo, hi) = profile_bounds();
        let mut rows = Vec::new();
        for (pi, p) in self.pulses.iter().enumerate() {
            let d = p.district as usize;
            let yi = (p.year - c.first_year) as usize;
            let id = district_id(d);
            let executed = &ledger.executed[pi];
            let mut profile = PulseProfile::new(lo, hi);
            for t in executed {
                profile.add(t.arrival - p.t0, t.stay, t.returns, 1.0, &self.detection);
            }
            let realized = if executed.is_empty() { 0.0 } else { profile.best_window(1.0, p.residents, c.move_prob_30d) };
            let mut mix: BTreeMap<String, f64> = Cultivation::ALL.iter().map(|k| (k.as_str().to_owned(), 0.0)).collect();
            for &src in &ledger.sources[pi] {
                *mix.get_mut(self.cultivation_class(src, p.year).as_str()).expect("all classes") += 1.0;
            }
            if !executed.is_empty() {
                for v in mix.values_mut() {
                    *v /= executed.len() as f64;
                }
            }
            let peak_day = p.t0 + PERIOD_DAYS / 2;
            rows.push(TruthRow {
                district_id: id.clone(),
                year: p.year,
                cultivation: self.cultivation_class(p.district, p.year).as_str().to_owned(),
                poppy_ha: self.cultivation[&(id.clone(), p.year)],
                taliban: self.control[&id],
                peak_period: self.peak_period[d][yi],
                t0: p.t0,
                ndvi_peak_day: peak_day,
                harvest_day: peak_day + 14,
                target_excess: p.target_excess,
                realized_excess: realized,
                migrants_planned: p.planned,
                migrants_realized: executed.len() as u32,
                origin_mix: mix,
                return_share: (!executed.is_empty())
                    .then(|| executed.iter().filter(|t| t.returns).count() as f64 / executed.len() as f64),
            });
        }
        GroundTruth {
            config: c.clone(),
            study_start: self.range.start,
            study_end: self.range.end,
            rows,
        }
    }

    /// Write every pipeline input plus `ground_truth.json` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<WorldFiles> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = WorldFiles::in_dir(dir, self.config.event_files);
        fs::write(&files.districts, serde_json::to_string_pretty(&self.districts.to_geojson()).expect("json") + "\n")
            .map_err(|e| Error::io(&files.districts, e))?;
        fs::write(&files.roads, serde_json::to_string_pretty(&self.roads.to_geojson()).expect("json") + "\n")
            .map_err(|e| Error::io(&files.roads, e))?;
        write_towers(&files.towers, &self.towers)?;
        write_ndvi_csv(&files.ndvi, &self.ndvi)?;
        write_district_year_csv(&files.cultivation, "poppy_ha", &self.cultivation)?;
        write_district_year_csv(&files.eradication, "eradicated_ha", &self.eradication)?;
        write_control_csv(&files.control, &self.control)?;
        self.covariates.write_csv(&files.covariates)?;
        write_events_csv(&files.violence, &self.events)?;

        // Subscribers are split into contiguous blocks, one event file each.
        let n = self.n_subscribers();
        let parts = files.events.len();
        let ledgers = files
            .events
            .par_iter()
            .enumerate()
            .map(|(part, path)| {
                let (lo, hi) = (part * n / parts, (part + 1) * n / parts);
                let mut ledger = TripLedger::new(self.pulses.len());
                let io = |e| Error::io(path, e);
                let mut w = BufWriter::with_capacity(1 << 20, File::create(path).map_err(io)?);
                w.write_all(b"subscriber_id,timestamp,tower_id\n").map_err(io)?;
                let mut buf = Vec::new();
                let mut line = String::with_capacity(64);
                for s in lo..hi {
                    self.subscriber_events(s, &mut buf, &mut ledger);
                    let sid = subscriber_id(s);
                    let mut cur_day = None;
                    let mut date = String::new();
                    for &(ts, tower) in &buf {
                        let day = Day::from_unix(ts);
                        if cur_day != Some(day) {
                            cur_day = Some(day);
                            date = day.to_string();
                        }
                        let sec = ts - day.unix_start();
                        line.clear();
                        use std::fmt::Write as _;
                        let _ = write!(
                            line,
                            "{sid},{date}T{:02}:{:02}:{:02}Z,{}\n",
                            sec / 3600,
                            sec / 60 % 60,
                            sec % 60,
                            self.towers[tower as usize].tower_id
                        );
                        w.write_all(line.as_bytes()).map_err(io)?;
                    }
                }
                w.flush().map_err(io)?;
                Ok(ledger)
            })
            .collect::<Result<Vec<_>>>()?;
        let ledger = ledgers
            .into_iter()
            .reduce(TripLedger::merge)
            .unwrap_or_else(|| TripLedger::new(self.pulses.len()));
        self.ground_truth(&ledger).write_json(&files.truth)?;
        Ok(files)
    }
}

/// Locations of the files a world writes.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFiles {
    pub districts: PathBuf,
    pub roads: PathBuf,
    pub towers: PathBuf,
    pub events: Vec<PathBuf>,
    pub ndvi: PathBuf,
    pub cultivation: PathBuf,
    pub eradication: PathBuf,
    pub control: PathBuf,
    pub covariates: PathBuf,
    pub violence: PathBuf,
    pub truth: PathBuf,
}

impl WorldFiles {
    pub fn in_dir(dir: &Path, event_files: u32) -> Self {
        Self {
            districts: dir.join("districts.geojson"),
            roads: dir.join("roads.geojson"),
            towers: dir.join("towers.csv"),
            events: (0..event_files).map(|i| dir.join(format!("events_{i:03}.csv"))).collect(),
            ndvi: dir.join("ndvi.csv"),
            cultivation: dir.join("cultivation.csv"),
            eradication: dir.join("eradication.csv"),
            control: dir.join("control.csv"),
            covariates: dir.join("covariates.csv"),
            violence: dir.join("violence.csv"),
            truth: dir.join("ground_truth.json"),
        }
    }
}

fn write_control_csv(path: &Path, control: &BTreeMap<String, bool>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "district_id,control").map_err(io)?;
    for (d, &t) in control {
        writeln!(w, "{d},{}", if t { "insurgent_influenced" } else { "government_controlled" }).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Number of trips whose expected best-window excess reaches `target`.
fn pulse_size(c: &WorldConfig, detection: &[Vec<f64>], target: f64, residents: f64) -> u32 {
    let (lo, hi) = profile_bounds();
    let mut unit = PulseProfile::new(lo, hi);
    let arrivals = c.arrival_offsets[1] - c.arrival_offsets[0] + 1;
    let stays = c.stay_days[1] - c.stay_days[0] + 1;
    let w = 1.0 / (arrivals as f64 * stays as f64);
    for a in c.arrival_offsets[0]..=c.arrival_offsets[1] {
        for l in c.stay_days[0]..=c.stay_days[1] {
            if c.return_prob > 0.0 {
                unit.add(a, l, true, w * c.return_prob, detection);
            }
            if c.return_prob < 1.0 {
                unit.add(a, l, false, w * (1.0 - c.return_prob), detection);
            }
        }
    }
    let excess = |p: f64| unit.best_window(p, residents, c.move_prob_30d);
    let (mut a, mut b) = (0.0, residents);
    while excess(b) < target {
        b *= 2.0;
        if b > 1e9 {
            return u32::MAX;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if excess(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    b.round() as u32
}

fn generate_violence(
    c: &WorldConfig,
    range: StudyRange,
    projection: &LocalProjection,
    cell_origin: &dyn Fn(usize) -> (f64, f64),
) -> Vec<ViolentEvent> {
    let mut rng = stream(c.seed, "violence");
    let mut events = Vec::new();
    if c.violence_per_week == 0.0 {
        return events;
    }
    let counts = Poisson::new(c.violence_per_week).expect("valid rate");
    let deaths = Poisson::new(2.0).expect("valid rate");
    let mut weeks = Vec::new();
    let mut w = IsoWeek::of(range.start);
    while w.monday() <= range.end {
        weeks.push(w);
        w = IsoWeek::of(w.sunday() + 1);
    }
    for d in 0..c.n_districts() {
        let (x0, y0) = cell_origin(d);
        for &week in &weeks {
            for _ in 0..counts.sample(&mut rng) as u32 {
                let u: f64 = rng.random();
                let precision = if u < c.exact_share {
                    Precision::Exact
                } else if u < c.exact_share + c.radius_share {
                    Precision::Radius25km
                } else {
                    Precision::District
                };
                let x = x0 + c.district_km * rng.random_range(0.02..0.98);
                let y = y0 + c.district_km * rng.random_range(0.02..0.98);
                let location = (precision != Precision::District).then(|| projection.inverse(Point::new(x, y)));
                events.push(ViolentEvent {
                    event_id: format!("V{:06}", events.len() + 1),
                    district_id: district_id(d),
                    week,
                    deaths: 1 + deaths.sample(&mut rng) as u32,
                    location,
                    precision,
                });
            }
        }
    }
    events
}

fn generate_ndvi(c: &WorldConfig, years: &[i32], peak_period: &[Vec<u32>]) -> Vec<NdviSeries<f64>> {
    let mut out = Vec::new();
    let n_agri = (c.pixels_per_district as f64 * c.agri_pixel_share).round() as u32;
    for (d, periods) in peak_period.iter().enumerate() {
        for (yi, &y) in years.iter().enumerate() {
            let mut rng = stream(c.seed, &format!("ndvi/{d}/{y}"));
            let first = Day::first_of_year(y);
            let centre = (period_start(y, periods[yi]) - first) as f64 + PERIOD_DAYS as f64 / 2.0;
            for px in 0..c.pixels_per_district {
                let agri = px < n_agri;
                let (peak, amp) = if agri {
                    (centre + rng.random_range(-c.peak_jitter..=c.peak_jitter) as f64, rng.random_range(0.4..0.75))
                } else {
                    (rng.random_range(0.0..365.0), 0.08)
                };
                let values = (1..=PERIODS_PER_YEAR as i32)
                    .map(|p| {
                        let day = (PERIOD_DAYS * (p - 1)) as f64 + 8.0;
                        phenology_curve(day, peak, amp, c.ndvi_width, truncated_noise(&mut rng, c.ndvi_noise))
                    })
                    .collect();
                out.push(NdviSeries {
                    pixel_id: format!("{}-{px:03}", district_id(d)),
                    district_id: district_id(d),
                    is_agriculture: agri,
                    year: y,
                    values,
                });
            }
        }
    }
    out
}
