//! District-year analysis panel: harvest excess outcome, cultivation classes,
//! conflict flags, eradication, covariates, and fixed-effect keys.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::day::Day;
use crate::error::{Error, Result};
use crate::ingest::geometry::Districts;
use crate::metrics::{Measure, MetricsTable};
use crate::phenology::PeakDate;
use crate::scalar::Scalar;
use crate::spatial::roads::DistrictRoads;
use crate::spatial::violence::{district_violence, road_violence_flag, RoadEventFilter, ViolentEvent, ROAD_DISTANCE_KM};

pub const DEFAULT_HIGH_HA: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cultivation {
    None,
    Low,
    High,
}

impl Cultivation {
    pub const ALL: [Cultivation; 3] = [Cultivation::None, Cultivation::Low, Cultivation::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cultivation::None => "none",
            Cultivation::Low => "low",
            Cultivation::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// High at or above `high_ha`, low for any positive area below it, none at zero.
pub fn classify_cultivation_with(poppy_ha: f64, high_ha: f64) -> Result<Cultivation> {
    if !(poppy_ha >= 0.0) {
        return Err(Error::invalid(format!("poppy hectares must be >= 0, got {poppy_ha}")));
    }
    Ok(if poppy_ha >= high_ha {
        Cultivation::High
    } else if poppy_ha > 0.0 {
        Cultivation::Low
    } else {
        Cultivation::None
    })
}

pub fn classify_cultivation(poppy_ha: f64) -> Result<Cultivation> {
    classify_cultivation_with(poppy_ha, DEFAULT_HIGH_HA)
}

/// Eradicated share of cultivated-plus-eradicated area; `None` when both are zero.
pub fn eradication_pct(cultivated_ha: f64, eradicated_ha: f64) -> Result<Option<f64>> {
    if !(cultivated_ha >= 0.0 && eradicated_ha >= 0.0) {
        return Err(Error::invalid(format!(
            "hectares must be >= 0, got cultivated {cultivated_ha}, eradicated {eradicated_ha}"
        )));
    }
    let total = cultivated_ha + eradicated_ha;
    Ok((total > 0.0).then(|| eradicated_ha / total))
}

/// Mean of the valid values in a baseline window, or `None` with fewer than `min_valid`.
pub fn baseline_mean<T: Scalar>(window: &[Option<T>], min_valid: usize) -> Option<T> {
    let valid: Vec<T> = window.iter().flatten().copied().collect();
    if valid.len() < min_valid || valid.is_empty() {
        return None;
    }
    // shifted by the first value so that constant windows average exactly
    let pivot = valid[0];
    let dev: T = valid.iter().map(|&v| v - pivot).sum();
    Some(pivot + dev / T::from_usize_lossy(valid.len()))
}

/// Largest mean of `len` consecutive values starting at offsets `starts`, where
/// `series[i]` holds offset `first_offset + i`. Windows with a gap or running
/// off the series are skipped.
pub fn harvest_excess<T: Scalar>(
    series: &[Option<T>],
    first_offset: i32,
    starts: (i32, i32),
    len: usize,
) -> Option<T> {
    let mut best: Option<T> = None;
    for start in starts.0..=starts.1 {
        let i = start - first_offset;
        if i < 0 || i as usize + len > series.len() {
            continue;
        }
        let window = &series[i as usize..i as usize + len];
        if window.iter().any(Option::is_none) {
            continue;
        }
        let mean = window.iter().flatten().copied().sum::<T>() / T::from_usize_lossy(len);
        best = Some(best.map_or(mean, |b| b.max(mean)));
    }
    best
}

/// Baseline and harvest window definitions, in days relative to the peak date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeWindows {
    pub baseline: (i32, i32),
    pub min_baseline_obs: usize,
    /// Inclusive range of harvest window start offsets.
    pub harvest_starts: (i32, i32),
    pub harvest_len: usize,
}

impl Default for OutcomeWindows {
    fn default() -> Self {
        Self {
            baseline: (-120, -31),
            min_baseline_obs: 90,
            harvest_starts: (15, 29),
            harvest_len: 7,
        }
    }
}

impl OutcomeWindows {
    /// Offsets covered by an [`OutcomeSeries`]: the baseline through at least +90.
    pub fn series_span(&self) -> (i32, i32) {
        let harvest_end = self.harvest_starts.1 + self.harvest_len as i32 - 1;
        (self.baseline.0.min(-120), harvest_end.max(90))
    }
}

/// Migration lag plus outcome windows, selectable by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVariant {
    pub name: String,
    pub lag: u32,
    pub windows: OutcomeWindows,
}

impl OutcomeVariant {
    pub const NAMES: [&'static str; 5] = ["default", "lag15", "lag45", "wide_search", "mean14"];

    pub fn preset(name: &str) -> Option<Self> {
        let w = OutcomeWindows::default();
        let (lag, windows) = match name {
            "default" => (30, w),
            "lag15" => (15, w),
            "lag45" => (45, w),
            // 7-day windows anywhere in days 1–45 after the peak
            "wide_search" => (30, OutcomeWindows { harvest_starts: (1, 39), ..w }),
            // 14-day mean within days 15–35
            "mean14" => (30, OutcomeWindows { harvest_starts: (15, 22), harvest_len: 14, ..w }),
            _ => return None,
        };
        Some(Self { name: name.to_owned(), lag, windows })
    }
}

/// Daily excess over baseline for one district-year.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeSeries {
    pub district_id: String,
    pub year: i32,
    pub cultivation: Cultivation,
    pub t0: Day,
    pub m_base: f64,
    pub first_offset: i32,
    /// `M_dt − M_base` at offsets `first_offset..`; `None` where `M_dt` is not valid.
    pub excess: Vec<Option<f64>>,
}

impl OutcomeSeries {
    pub fn at(&self, offset: i32) -> Option<f64> {
        let i = offset - self.first_offset;
        (i >= 0).then(|| self.excess.get(i as usize).copied().flatten()).flatten()
    }
}

pub enum OutcomeResult {
    Ok { m_base: f64, outcome: f64, series: Vec<Option<f64>>, first_offset: i32 },
    InsufficientBaseline(usize),
    NoHarvestWindow,
}

/// Baseline mean and harvest excess of `measure` around `t0`.
pub fn compute_outcome(metrics: &MetricsTable, measure: Measure, district: u32, t0: Day, w: &OutcomeWindows) -> OutcomeResult {
    let (lo, hi) = w.series_span();
    let raw: Vec<Option<f64>> = (lo..=hi).map(|k| metrics.value_on(measure, district, t0 + k)).collect();
    let base = &raw[(w.baseline.0 - lo) as usize..=(w.baseline.1 - lo) as usize];
    let Some(m_base) = baseline_mean(base, w.min_baseline_obs) else {
        return OutcomeResult::InsufficientBaseline(base.iter().flatten().count());
    };
    let excess: Vec<Option<f64>> = raw.iter().map(|v| v.map(|m| m - m_base)).collect();
    match harvest_excess(&excess, lo, w.harvest_starts, w.harvest_len) {
        Some(outcome) => OutcomeResult::Ok { m_base, outcome, series: excess, first_offset: lo },
        None => OutcomeResult::NoHarvestWindow,
    }
}

/// District(-year) attributes. Rows with an empty year apply to every year;
/// year-specific rows take precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    values: BTreeMap<(String, Option<i32>), Vec<f64>>,
}

impl Covariates {
    pub fn new(names: Vec<String>) -> Self {
        Self { names, values: BTreeMap::new() }
    }

    pub fn insert(&mut self, district_id: &str, year: Option<i32>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::invalid(format!("covariate row for {district_id} has {} values, expected {}", values.len(), self.names.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("covariate for {district_id} is not finite: {v}")));
        }
        self.values.insert((district_id.to_owned(), year), values);
        Ok(())
    }

    pub fn get(&self, district_id: &str, year: i32) -> Option<&[f64]> {
        self.values
            .get(&(district_id.to_owned(), Some(year)))
            .or_else(|| self.values.get(&(district_id.to_owned(), None)))
            .map(Vec::as_slice)
    }

    pub fn value(&self, district_id: &str, year: i32, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.get(district_id, year).map(|v| v[i])
    }

    /// CSV `district_id,year,<name>...`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.get(0) != Some("district_id") || headers.get(1) != Some("year") {
            return Err(Error::invalid(format!("{}: header must start with district_id,year", path.display())));
        }
        let mut cov = Self::new(headers.iter().skip(2).map(str::to_owned).collect());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let bad = |what: &str| Error::invalid(format!("{}: bad {what} in row {:?}", path.display(), rec));
            let year = match rec.get(1).unwrap_or("").trim() {
                "" => None,
                y => Some(y.parse().map_err(|_| bad("year"))?),
            };
            let vals = rec.iter().skip(2).map(|v| v.trim().parse::<f64>().map_err(|_| bad("value"))).collect::<Result<Vec<_>>>()?;
            cov.insert(&rec[0], year, vals)?;
        }
        Ok(cov)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "district_id,year,{}", self.names.join(",")).map_err(io)?;
        for ((d, y), vals) in &self.values {
            let vals: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{d},{},{}", y.map(|y| y.to_string()).unwrap_or_default(), vals.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Territorial control categories; the three insurgent-leaning ones count as Taliban presence.
pub fn control_is_taliban(category: &str) -> Option<bool> {
    match category.trim() {
        "government_controlled" | "government_influenced" | "0" | "false" => Some(false),
        "contested" | "insurgent_influenced" | "insurgent_controlled" | "1" | "true" => Some(true),
        _ => None,
    }
}

/// CSV `district_id,control`.
pub fn read_control_csv(path: &Path) -> Result<BTreeMap<String, bool>> {
    #[derive(Deserialize)]
    struct Row {
        district_id: String,
        control: String,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    rdr.deserialize()
        .map(|r| {
            let r: Row = r.map_err(|e| Error::csv(path, e))?;
            let t = control_is_taliban(&r.control)
                .ok_or_else(|| Error::invalid(format!("{}: unknown control category {:?}", path.display(), r.control)))?;
            Ok((r.district_id, t))
        })
        .collect()
}

/// CSV `district_id,year,<value_col>` into a map.
pub fn read_district_year_csv(path: &Path, value_col: &str) -> Result<BTreeMap<(String, i32), f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = headers
        .iter()
        .position(|h| h == value_col)
        .ok_or_else(|| Error::invalid(format!("{}: missing column {value_col}", path.display())))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::invalid(format!("{}: bad row {:?}", path.display(), rec));
        let year: i32 = rec.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let v: f64 = rec.get(col).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if out.insert((rec[0].to_owned(), year), v).is_some() {
            return Err(Error::KeyMismatch(format!("{}: duplicate row for {} {year}", path.display(), &rec[0])));
        }
    }
    Ok(out)
}

pub fn write_district_year_csv(path: &Path, value_col: &str, values: &BTreeMap<(String, i32), f64>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "district_id,year,{value_col}").map_err(io)?;
    for ((d, y), v) in values {
        writeln!(w, "{d},{y},{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Everything besides metrics and peak dates that goes into the panel.
#[derive(Debug, Clone, Default)]
pub struct PanelData {
    /// Poppy hectares per district-year; its keys define the candidate district-years.
    pub cultivation: BTreeMap<(String, i32), f64>,
    pub eradication: Option<BTreeMap<(String, i32), f64>>,
    pub control: BTreeMap<String, bool>,
    pub covariates: Option<Covariates>,
    pub events: Vec<ViolentEvent>,
    /// Per district index, when road violence is wanted.
    pub roads: Option<Vec<DistrictRoads>>,
    pub road_filter: RoadEventFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelConfig {
    pub variant: String,
    /// Outcome measure name, see [`Measure::parse`].
    pub outcome: String,
    pub high_ha: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            variant: "default".into(),
            outcome: "in_rate".into(),
            high_ha: DEFAULT_HIGH_HA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelRow {
    pub district_id: String,
    pub province_id: String,
    pub year: i32,
    pub t0: Day,
    pub outcome: f64,
    pub m_base: f64,
    pub poppy_ha: f64,
    pub cultivation: Cultivation,
    pub violence_events: u32,
    pub violence_deaths: u32,
    pub road_violence: Option<bool>,
    pub taliban: bool,
    pub eradication_pct: Option<f64>,
    pub majority_share: Option<f64>,
    pub covariates: Vec<f64>,
}

impl PanelRow {
    pub fn high(&self) -> bool {
        self.cultivation == Cultivation::High
    }

    pub fn low(&self) -> bool {
        self.cultivation == Cultivation::Low
    }

    pub fn violence(&self) -> bool {
        self.violence_events > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub district_id: String,
    pub year: i32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PanelReport {
    pub candidates: usize,
    pub emitted: usize,
    pub drops: Vec<DropRecord>,
}

impl PanelReport {
    pub fn write_csv(&self, path: &Path, preamble: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(preamble.as_bytes()).map_err(io)?;
        writeln!(w, "district_id,year,reason").map_err(io)?;
        for d in &self.drops {
            writeln!(w, "{},{},{}", d.district_id, d.year, d.reason).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn reasons(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for d in &self.drops {
            *m.entry(d.reason.as_str()).or_default() += 1;
        }
        m
    }
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub rows: Vec<PanelRow>,
    pub covariate_names: Vec<String>,
    pub series: Vec<OutcomeSeries>,
    pub report: PanelReport,
}

fn check_keys(districts: &Districts, data: &PanelData, peaks: &[PeakDate]) -> Result<()> {
    let mut problems = Vec::new();
    for (d, _) in data.cultivation.keys() {
        if districts.index_of(d).is_none() {
            problems.push(format!("cultivation row for unknown district {d}"));
        }
    }
    let candidate_districts: BTreeSet<&str> = data.cultivation.keys().map(|(d, _)| d.as_str()).collect();
    for d in &candidate_districts {
        if !data.control.contains_key(*d) {
            problems.push(format!("no territorial-control entry for district {d}"));
        }
    }
    for p in peaks {
        if !data.cultivation.contains_key(&(p.district_id.clone(), p.year)) {
            problems.push(format!("peak date for {} {} has no cultivation row", p.district_id, p.year));
        }
    }
    if let Some(erad) = &data.eradication {
        for (d, y) in erad.keys() {
            if !data.cultivation.contains_key(&(d.clone(), *y)) {
                problems.push(format!("eradication row for {d} {y} has no cultivation row"));
            }
        }
    }
    if let Some(roads) = &data.roads {
        if roads.len() != districts.len() {
            problems.push(format!("entry roads for {} districts, expected {}", roads.len(), districts.len()));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        problems.truncate(20);
        Err(Error::KeyMismatch(problems.join("; ")))
    }
}

/// One row per candidate district-year that has a peak date, tower coverage,
/// enough baseline observations and at least one complete harvest window.
pub fn build_panel(
    districts: &Districts,
    metrics: &MetricsTable,
    peaks: &[PeakDate],
    data: &PanelData,
    config: &PanelConfig,
) -> Result<Panel> {
    let variant = OutcomeVariant::preset(&config.variant)
        .ok_or_else(|| Error::invalid(format!("unknown outcome variant {:?}", config.variant)))?;
    let measure = Measure::parse(&config.outcome)
        .ok_or_else(|| Error::invalid(format!("unknown outcome measure {:?}", config.outcome)))?;
    if metrics.config.lag != variant.lag {
        return Err(Error::invalid(format!(
            "variant {} needs metrics with lag {}, got {}",
            variant.name, variant.lag, metrics.config.lag
        )));
    }
    check_keys(districts, data, peaks)?;

    let peak_by_key: BTreeMap<(&str, i32), &PeakDate> = peaks.iter().map(|p| ((p.district_id.as_str(), p.year), p)).collect();
    let observed: BTreeSet<u32> = metrics.observed_districts().into_iter().collect();
    let erad_years: BTreeSet<i32> = data.eradication.iter().flat_map(|e| e.keys().map(|k| k.1)).collect();
    let mut panel = Panel {
        covariate_names: data.covariates.as_ref().map(|c| c.names.clone()).unwrap_or_default(),
        ..Default::default()
    };
    let mut drop = |d: &str, y: i32, reason: String| {
        panel.report.drops.push(DropRecord { district_id: d.to_owned(), year: y, reason });
    };
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for ((district_id, year), &poppy_ha) in &data.cultivation {
        let (district_id, year) = (district_id.as_str(), *year);
        let idx = districts.index_of(district_id).expect("checked");
        let Some(peak) = peak_by_key.get(&(district_id, year)) else {
            drop(district_id, year, "no_peak_date".into());
            continue;
        };
        if !observed.contains(&idx) {
            drop(district_id, year, "no_towers".into());
            continue;
        }
        let (m_base, outcome, excess, first_offset) = match compute_outcome(metrics, measure, idx, peak.t0, &variant.windows) {
            OutcomeResult::Ok { m_base, outcome, series, first_offset } => (m_base, outcome, series, first_offset),
            OutcomeResult::InsufficientBaseline(n) => {
                drop(district_id, year, format!("insufficient_baseline({n})"));
                continue;
            }
            OutcomeResult::NoHarvestWindow => {
                drop(district_id, year, "no_valid_harvest_window".into());
                continue;
            }
        };
        let covariates = match &data.covariates {
            Some(c) => c
                .get(district_id, year)
                .ok_or_else(|| Error::KeyMismatch(format!("no covariates for {district_id} {year}")))?
                .to_vec(),
            None => Vec::new(),
        };
        let cultivation = classify_cultivation_with(poppy_ha, config.high_ha)?;
        let violence = district_violence(district_id, peak.t0, &data.events);
        let road_violence = data.roads.as_ref().map(|roads| {
            road_violence_flag(&roads[idx as usize], peak.t0, &data.events, data.road_filter, ROAD_DISTANCE_KM)
        });
        // Only years with eradication records get a value; within those years a
        // district-year without cultivation or eradication counts as 0%.
        let eradication_pct = match &data.eradication {
            Some(e) if erad_years.contains(&year) => {
                let eradicated = e.get(&(district_id.to_owned(), year)).copied().unwrap_or(0.0);
                Some(eradication_pct(poppy_ha, eradicated)?.unwrap_or(0.0))
            }
            _ => None,
        };
        rows.push(PanelRow {
            district_id: district_id.to_owned(),
            province_id: districts.province(idx).to_owned(),
            year,
            t0: peak.t0,
            outcome,
            m_base,
            poppy_ha,
            cultivation,
            violence_events: violence.events,
            violence_deaths: violence.deaths,
            road_violence,
            taliban: data.control[district_id],
            eradication_pct,
            majority_share: peak.majority_share,
            covariates,
        });
        series.push(OutcomeSeries {
            district_id: district_id.to_owned(),
            year,
            cultivation,
            t0: peak.t0,
            m_base,
            first_offset,
            excess,
        });
    }
    panel.report.candidates = data.cultivation.len();
    panel.report.emitted = rows.len();
    panel.rows = rows;
    panel.series = series;
    Ok(panel)
}

const PANEL_COLUMNS: [&str; 15] = [
    "district_id",
    "province_id",
    "year",
    "t0",
    "outcome",
    "m_base",
    "poppy_ha",
    "cultivation",
    "violence_events",
    "violence_deaths",
    "road_violence",
    "taliban",
    "eradication_pct",
    "majority_share",
    "n_covariates",
];

impl Panel {
    /// Stable column order; covariates follow with a `cov_` prefix.
    pub fn write_csv(&self, path: &Path, preamble: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(preamble.as_bytes()).map_err(io)?;
        let mut header: Vec<String> = PANEL_COLUMNS[..14].iter().map(|s| s.to_string()).collect();
        header.extend(self.covariate_names.iter().map(|n| format!("cov_{n}")));
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        let flag = |b: bool| if b { "1" } else { "0" };
        for r in &self.rows {
            let mut cells = vec![
                r.district_id.clone(),
                r.province_id.clone(),
                r.year.to_string(),
                r.t0.to_string(),
                format!("{:.10}", r.outcome),
                format!("{:.10}", r.m_base),
                r.poppy_ha.to_string(),
                r.cultivation.as_str().to_owned(),
                r.violence_events.to_string(),
                r.violence_deaths.to_string(),
                r.road_violence.map(|b| flag(b).to_owned()).unwrap_or_default(),
                flag(r.taliban).to_owned(),
                opt(r.eradication_pct),
                opt(r.majority_share),
            ];
            cells.extend(r.covariates.iter().map(|v| v.to_string()));
            writeln!(w, "{}", cells.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.iter().take(14).ne(PANEL_COLUMNS[..14].iter().copied()) {
            return Err(Error::invalid(format!("{}: not a panel file", path.display())));
        }
        let covariate_names: Vec<String> = headers
            .iter()
            .skip(14)
            .map(|h| h.strip_prefix("cov_").unwrap_or(h).to_owned())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let bad = |col: &str| Error::invalid(format!("{}: bad {col} in {:?}", path.display(), rec));
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(PANEL_COLUMNS[i]));
            let opt = |i: usize| match &rec[i] {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| bad(PANEL_COLUMNS[i])),
            };
            rows.push(PanelRow {
                district_id: rec[0].to_owned(),
                province_id: rec[1].to_owned(),
                year: rec[2].parse().map_err(|_| bad("year"))?,
                t0: rec[3].parse().map_err(|_| bad("t0"))?,
                outcome: num(4)?,
                m_base: num(5)?,
                poppy_ha: num(6)?,
                cultivation: Cultivation::parse(&rec[7]).ok_or_else(|| bad("cultivation"))?,
                violence_events: rec[8].parse().map_err(|_| bad("violence_events"))?,
                violence_deaths: rec[9].parse().map_err(|_| bad("violence_deaths"))?,
                road_violence: match &rec[10] {
                    "" => None,
                    s => Some(s == "1"),
                },
                taliban: &rec[11] == "1",
                eradication_pct: opt(12)?,
                majority_share: opt(13)?,
                covariates: (14..rec.len()).map(num).collect::<Result<_>>()?,
            });
        }
        Ok(Panel {
            report: PanelReport { candidates: rows.len(), emitted: rows.len(), drops: Vec::new() },
            rows,
            covariate_names,
            series: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cultivation_classes() {
        assert_eq!(classify_cultivation(1000.0).unwrap(), Cultivation::High);
        assert_eq!(classify_cultivation(500.0).unwrap(), Cultivation::Low);
        assert_eq!(classify_cultivation(0.0).unwrap(), Cultivation::None);
        assert_eq!(classify_cultivation(999.5).unwrap(), Cultivation::Low);
        assert!(classify_cultivation(-1.0).is_err());
        assert!(classify_cultivation(f64::NAN).is_err());
    }

    #[test]
    fn eradication_examples() {
        assert_eq!(eradication_pct(900.0, 100.0).unwrap(), Some(0.10));
        assert_eq!(eradication_pct(450.0, 0.0).unwrap(), Some(0.0));
        assert_eq!(eradication_pct(0.0, 50.0).unwrap(), Some(1.0));
        assert_eq!(eradication_pct(0.0, 0.0).unwrap(), None);
        assert!(eradication_pct(-1.0, 2.0).is_err());
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_mean(&vec![Some(0.02); 90], 90), Some(0.02));
        assert_eq!(baseline_mean(&vec![Some(0.3407273665612052); 90], 90), Some(0.3407273665612052));
        let mut w = vec![Some(0.02); 90];
        w[5] = None;
        assert_eq!(baseline_mean(&w, 90), None);
        let alt: Vec<Option<f64>> = (0..90).map(|i| Some(if i % 2 == 0 { 0.01 } else { 0.03 })).collect();
        assert!((baseline_mean(&alt, 90).unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn harvest_examples() {
        // offsets 15..=35
        let mut e = vec![Some(0.0f64); 21];
        for k in 20..=26 {
            e[k - 15] = Some(0.05);
        }
        assert!((harvest_excess(&e, 15, (15, 29), 7).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(harvest_excess(&vec![Some(0.01f64); 21], 15, (15, 29), 7).map(|x| (x * 1e6).round()), Some(1e4));
        let gappy: Vec<Option<f64>> = (0..21).map(|i| if i % 6 == 3 { None } else { Some(1.0) }).collect();
        assert_eq!(harvest_excess(&gappy, 15, (15, 29), 7), None);
    }

    #[test]
    fn variant_presets() {
        for name in OutcomeVariant::NAMES {
            let v = OutcomeVariant::preset(name).unwrap();
            let (_, hi) = v.windows.series_span();
            assert!(hi >= v.windows.harvest_starts.1 + v.windows.harvest_len as i32 - 1);
        }
        assert_eq!(OutcomeVariant::preset("lag15").unwrap().lag, 15);
        let m = OutcomeVariant::preset("mean14").unwrap().windows;
        assert_eq!(m.harvest_starts.1 + m.harvest_len as i32 - 1, 35);
        assert!(OutcomeVariant::preset("nope").is_none());
    }

    #[test]
    fn control_categories() {
        assert_eq!(control_is_taliban("contested"), Some(true));
        assert_eq!(control_is_taliban("government_controlled"), Some(false));
        assert_eq!(control_is_taliban("elsewhere"), None);
    }

    proptest! {
        #[test]
        fn constant_series_has_zero_excess(level in 0.0f64..0.5, shift in -0.2f64..0.2) {
            let m = vec![Some(level); 90];
            let base = baseline_mean(&m, 90).unwrap();
            let e: Vec<Option<f64>> = vec![Some(level - base); 21];
            prop_assert_eq!(harvest_excess(&e, 15, (15, 29), 7).unwrap(), 0.0);
            // level shifts are absorbed by the baseline
            let shifted: Vec<Option<f64>> = m.iter().map(|v| v.map(|x| x + shift)).collect();
            let b2 = baseline_mean(&shifted, 90).unwrap();
            prop_assert!(((b2 - base) - shift).abs() < 1e-12);
        }
    }
}
