//! Plot-ready tables: daily mean excess by cultivation group, baseline and
//! harvest migration histograms, the origin-destination difference matrix,
//! coefficient tables and total migrant estimates.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::day::StudyRange;
use crate::econometrics::specs::SpecResult;
use crate::error::{Error, Result};
use crate::ingest::geometry::Districts;
use crate::panel::{Cultivation, Panel};
use crate::phenology::PeakDate;
use crate::residence::ResidenceSegment;
use crate::scalar::Scalar;

pub const SERIES_SPAN: (i32, i32) = (-120, 90);
pub const HISTOGRAM_BIN: f64 = 0.0025;
pub const OD_BASELINE: (i32, i32) = (-120, -31);
pub const OD_HARVEST: (i32, i32) = (15, 35);
pub const OD_CLIP: f64 = 0.025;

const GROUPS: [Cultivation; 3] = [Cultivation::None, Cultivation::Low, Cultivation::High];

fn create(path: &Path, preamble: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(preamble.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub group: Cultivation,
    pub offset: i32,
    /// District-years in the group.
    pub rows: usize,
    /// District-years with a defined excess at this offset.
    pub n: usize,
    pub mean: Option<f64>,
    /// Standard error of the mean.
    pub se: Option<f64>,
}

/// Daily mean of `M_dt − M_base` across district-years of each cultivation group.
pub fn group_series(panel: &Panel, span: (i32, i32)) -> Vec<SeriesPoint> {
    let mut out = Vec::new();
    for g in GROUPS {
        let members: Vec<_> = panel.series.iter().filter(|s| s.cultivation == g).collect();
        for offset in span.0..=span.1 {
            let v: Vec<f64> = members.iter().filter_map(|s| s.at(offset)).collect();
            let n = v.len();
            let mean = (n > 0).then(|| v.iter().sum::<f64>() / n as f64);
            let se = mean.filter(|_| n > 1).map(|m| {
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            out.push(SeriesPoint { group: g, offset, rows: members.len(), n, mean, se });
        }
    }
    out
}

pub fn write_series_csv(path: &Path, preamble: &str, points: &[SeriesPoint]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = create(path, preamble)?;
    writeln!(w, "group,offset,rows,n,mean,se").map_err(io)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for p in points {
        writeln!(w, "{},{},{},{},{},{}", p.group.as_str(), p.offset, p.rows, p.n, opt(p.mean), opt(p.se)).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    /// `baseline` (mean rate in the reference window) or `harvest` (best-window rate).
    pub period: &'static str,
    pub group: Cultivation,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histograms of each district-year's baseline rate `M_base` and harvest rate
/// `M_base + E_dy`, by cultivation group, on a shared grid of width `bin`.
pub fn migration_histograms(panel: &Panel, bin: f64) -> Result<Vec<HistogramBin>> {
    if !(bin > 0.0) {
        return Err(Error::invalid(format!("histogram bin width must be positive, got {bin}")));
    }
    let values = |period: &str, r: &crate::panel::PanelRow| match period {
        "baseline" => r.m_base,
        _ => r.m_base + r.outcome,
    };
    let all: Vec<f64> = panel
        .rows
        .iter()
        .flat_map(|r| [values("baseline", r), values("harvest", r)])
        .collect();
    if all.is_empty() {
        return Ok(Vec::new());
    }
    let lo_bin = all.iter().map(|v| (v / bin).floor() as i64).min().unwrap();
    let hi_bin = all.iter().map(|v| (v / bin).floor() as i64).max().unwrap();
    let mut out = Vec::new();
    for period in ["baseline", "harvest"] {
        for g in GROUPS {
            let mut counts = vec![0usize; (hi_bin - lo_bin + 1) as usize];
            for r in panel.rows.iter().filter(|r| r.cultivation == g) {
                counts[((values(period, r) / bin).floor() as i64 - lo_bin) as usize] += 1;
            }
            for (i, count) in counts.into_iter().enumerate() {
                let k = lo_bin + i as i64;
                out.push(HistogramBin { period, group: g, lo: k as f64 * bin, hi: (k + 1) as f64 * bin, count });
            }
        }
    }
    Ok(out)
}

pub fn write_histograms_csv(path: &Path, preamble: &str, bins: &[HistogramBin]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = create(path, preamble)?;
    writeln!(w, "period,group,lo,hi,count").map_err(io)?;
    for b in bins {
        writeln!(w, "{},{},{},{},{}", b.period, b.group.as_str(), b.lo, b.hi, b.count).map_err(io)?;
    }
    w.flush().map_err(io)
}

const NO_SLOT: u32 = u32::MAX;
const NO_DISTRICT: u32 = u32::MAX;

/// Counts in-migrants by previous district on the baseline and harvest days of
/// each destination's peak in one year. Movers follow the same rule as the
/// migration metrics: resident today, resident elsewhere `lag` days ago.
pub struct OdAccumulator {
    range: StudyRange,
    n: usize,
    lag: usize,
    /// `(district, day) → slot` for tracked days.
    slot: Vec<u32>,
    /// Per slot: destination and whether it is a harvest day.
    slot_info: Vec<(u32, bool)>,
    counts: Vec<u32>,
    totals: Vec<u32>,
    buf: Vec<u32>,
}

impl OdAccumulator {
    /// Tracks the windows around `peaks` of `year` for districts in `districts`.
    pub fn new(range: StudyRange, districts: &Districts, peaks: &[PeakDate], year: i32, lag: u32) -> Self {
        let n = districts.len();
        let t_len = range.len();
        let mut slot = vec![NO_SLOT; n * t_len];
        let mut slot_info = Vec::new();
        for p in peaks.iter().filter(|p| p.year == year) {
            let Some(d) = districts.index_of(&p.district_id) else { continue };
            for (window, harvest) in [(OD_BASELINE, false), (OD_HARVEST, true)] {
                for off in window.0..=window.1 {
                    if let Some(t) = range.index(p.t0 + off) {
                        let cell = d as usize * t_len + t;
                        if t >= lag as usize && slot[cell] == NO_SLOT {
                            slot[cell] = slot_info.len() as u32;
                            slot_info.push((d, harvest));
                        }
                    }
                }
            }
        }
        let slots = slot_info.len();
        Self {
            range,
            n,
            lag: lag as usize,
            slot,
            slot_info,
            counts: vec![0; slots * n],
            totals: vec![0; slots],
            buf: vec![NO_DISTRICT; t_len],
        }
    }

    pub fn add_subscriber(&mut self, segments: &[ResidenceSegment]) {
        let t_len = self.range.len();
        self.buf.fill(NO_DISTRICT);
        for s in segments {
            let lo = (s.start - self.range.start).max(0);
            let hi = (s.end - self.range.start).min(t_len as i32 - 1);
            if lo <= hi {
                self.buf[lo as usize..=hi as usize].fill(s.district);
            }
        }
        for t in self.lag..t_len {
            let d = self.buf[t];
            if d == NO_DISTRICT {
                continue;
            }
            let slot = self.slot[d as usize * t_len + t];
            let src = self.buf[t - self.lag];
            if slot == NO_SLOT || src == NO_DISTRICT || src == d {
                continue;
            }
            self.totals[slot as usize] += 1;
            self.counts[slot as usize * self.n + src as usize] += 1;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.totals.iter_mut().zip(&other.totals).for_each(|(a, b)| *a += b);
        self
    }

    /// Harvest minus baseline mean daily share, `diff[source][destination]`.
    /// Days without in-migrants are skipped; a destination without any in
    /// either window gets `None` throughout.
    pub fn finish(self) -> OdMatrix {
        let n = self.n;
        // per destination and window: sum of daily shares and number of days
        let mut sums = vec![[0.0f64; 2]; n * n];
        let mut days = vec![[0usize; 2]; n];
        for (s, &(d, harvest)) in self.slot_info.iter().enumerate() {
            let total = self.totals[s];
            if total == 0 {
                continue;
            }
            let w = harvest as usize;
            days[d as usize][w] += 1;
            for src in 0..n {
                sums[src * n + d as usize][w] += self.counts[s * n + src] as f64 / total as f64;
            }
        }
        let diff = (0..n * n)
            .map(|i| {
                let d = i % n;
                let [b, h] = days[d];
                (b > 0 && h > 0).then(|| sums[i][1] / h as f64 - sums[i][0] / b as f64)
            })
            .collect();
        OdMatrix { n, diff }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdMatrix {
    pub n: usize,
    pub diff: Vec<Option<f64>>,
}

impl OdMatrix {
    pub fn get(&self, source: u32, destination: u32) -> Option<f64> {
        self.diff[source as usize * self.n + destination as usize]
    }

    /// Matrix CSV over `order` (district indices), rows sources and columns
    /// destinations, values clipped to `±clip`.
    pub fn write_csv(&self, path: &Path, preamble: &str, districts: &Districts, order: &[u32], clip: f64) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = create(path, preamble)?;
        write!(w, "source").map_err(io)?;
        for &d in order {
            write!(w, ",{}", districts.id(d)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for &s in order {
            write!(w, "{}", districts.id(s)).map_err(io)?;
            for &d in order {
                match self.get(s, d) {
                    Some(v) => write!(w, ",{}", v.clamp(-clip, clip)).map_err(io)?,
                    None => write!(w, ",").map_err(io)?,
                }
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Matrix ordering: high-cultivation districts first, then by province and id.
pub fn od_order(districts: &Districts, keep: &[u32], high: impl Fn(u32) -> bool) -> Vec<u32> {
    let mut order = keep.to_vec();
    order.sort_by(|&a, &b| {
        (!high(a), districts.province(a), districts.id(a)).cmp(&(!high(b), districts.province(b), districts.id(b)))
    });
    order
}

/// Coefficients and contrasts of several fits in one long table.
pub fn write_coefficients_csv<T: Scalar>(path: &Path, preamble: &str, fits: &[(String, &SpecResult<T>)]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = create(path, preamble)?;
    writeln!(w, "table,kind,label,estimate,se,p,ci_lo,ci_hi,n").map_err(io)?;
    for (table, r) in fits {
        let fit = &r.fit;
        for name in &fit.names {
            if name.starts_with('(') || name.contains('[') {
                continue;
            }
            let c = crate::econometrics::ols::coefficient(fit, name)?;
            writeln!(w, "{table},term,{name},{},{},{},{},{},{}", c.estimate, c.se, c.p, c.ci_lo, c.ci_hi, fit.n).map_err(io)?;
        }
        for c in &r.contrasts {
            writeln!(w, "{table},contrast,{},{},{},{},{},{},{}", c.label, c.estimate, c.se, c.p, c.ci_lo, c.ci_hi, fit.n).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistrictTotal {
    pub district_id: String,
    pub year: i32,
    pub population: f64,
    pub migrants: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrantTotals {
    pub coefficient: f64,
    pub districts: Vec<DistrictTotal>,
    pub per_year: BTreeMap<i32, f64>,
    /// High-cultivation district-years without a population.
    pub skipped: Vec<(String, i32)>,
}

impl MigrantTotals {
    pub fn min_year(&self) -> Option<(i32, f64)> {
        self.per_year.iter().map(|(&y, &v)| (y, v)).min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn max_year(&self) -> Option<(i32, f64)> {
        self.per_year.iter().map(|(&y, &v)| (y, v)).max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn write_csv(&self, path: &Path, preamble: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = create(path, preamble)?;
        writeln!(w, "# coefficient: {}", self.coefficient).map_err(io)?;
        writeln!(w, "district_id,year,population,migrants").map_err(io)?;
        for d in &self.districts {
            writeln!(w, "{},{},{},{}", d.district_id, d.year, d.population, d.migrants).map_err(io)?;
        }
        for (y, v) in &self.per_year {
            writeln!(w, "TOTAL,{y},,{v}").map_err(io)?;
        }
        for (d, y) in &self.skipped {
            writeln!(w, "{d},{y},,").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Seasonal migrants implied by `coefficient`: the estimated increase in
/// in-migration times each high-cultivation district's population, summed by year.
pub fn migrant_totals<'a>(
    coefficient: f64,
    high_rows: impl IntoIterator<Item = (&'a str, i32)>,
    population: impl Fn(&str, i32) -> Option<f64>,
) -> MigrantTotals {
    let mut out = MigrantTotals { coefficient, districts: Vec::new(), per_year: BTreeMap::new(), skipped: Vec::new() };
    for (d, y) in high_rows {
        match population(d, y) {
            Some(p) => {
                let migrants = coefficient * p;
                *out.per_year.entry(y).or_insert(0.0) += migrants;
                out.districts.push(DistrictTotal { district_id: d.to_string(), year: y, population: p, migrants });
            }
            None => out.skipped.push((d.to_string(), y)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::day::Day;
    use crate::panel::{OutcomeSeries, PanelRow};

    fn seg(district: u32, start: Day, end: Day) -> ResidenceSegment {
        ResidenceSegment { district, start, end }
    }

    #[test]
    fn totals_multiply_and_sum() {
        let pops = [("A", 13_500.0), ("B", 145_000.0)];
        let t = migrant_totals(0.0271, [("A", 2015), ("B", 2015), ("C", 2015), ("A", 2016)], |d, _| {
            pops.iter().find(|p| p.0 == d).map(|p| p.1)
        });
        assert!((t.districts[0].migrants - 365.85).abs() < 1e-9);
        assert!((t.districts[1].migrants - 3929.5).abs() < 1e-9);
        assert_eq!(t.skipped, vec![("C".to_string(), 2015)]);
        assert_eq!(t.min_year().unwrap().0, 2016);
        assert_eq!(t.max_year().unwrap().0, 2015);
        let zero = migrant_totals(0.0, [("A", 2015)], |_, _| Some(1e6));
        assert_eq!(zero.per_year[&2015], 0.0);
    }

    #[test]
    fn series_groups_partition_rows() {
        let t0 = Day::from_ymd(2015, 4, 7).unwrap();
        let mk = |id: &str, c: Cultivation, v: f64| OutcomeSeries {
            district_id: id.into(),
            year: 2015,
            cultivation: c,
            t0,
            m_base: 0.01,
            first_offset: -120,
            excess: (0..211).map(|i| (i % 7 != 3).then_some(v)).collect(),
        };
        let panel = Panel {
            series: vec![mk("a", Cultivation::High, 0.02), mk("b", Cultivation::High, 0.04), mk("c", Cultivation::None, 0.0)],
            ..Default::default()
        };
        let pts = group_series(&panel, SERIES_SPAN);
        let at = |g, off| pts.iter().find(|p| p.group == g && p.offset == off).unwrap();
        assert_eq!(GROUPS.iter().map(|&g| at(g, 0).rows).sum::<usize>(), 3);
        assert!((at(Cultivation::High, -120).mean.unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(at(Cultivation::High, -117).n, 0);
        assert_eq!(at(Cultivation::Low, 0).mean, None);
    }

    #[test]
    fn histogram_counts_every_row_twice() {
        let mut rows = Vec::new();
        for (i, c) in [Cultivation::High, Cultivation::Low, Cultivation::None, Cultivation::High].into_iter().enumerate() {
            rows.push(PanelRow {
                district_id: format!("D{i}"),
                province_id: "P".into(),
                year: 2015,
                t0: Day::from_ymd(2015, 4, 7).unwrap(),
                outcome: 0.01 * i as f64,
                m_base: 0.02,
                poppy_ha: 0.0,
                cultivation: c,
                violence_events: 0,
                violence_deaths: 0,
                road_violence: None,
                taliban: false,
                eradication_pct: None,
                majority_share: None,
                covariates: Vec::new(),
            });
        }
        let panel = Panel { rows, ..Default::default() };
        let bins = migration_histograms(&panel, HISTOGRAM_BIN).unwrap();
        for period in ["baseline", "harvest"] {
            assert_eq!(bins.iter().filter(|b| b.period == period).map(|b| b.count).sum::<usize>(), 4);
        }
        let high_harvest: Vec<_> = bins.iter().filter(|b| b.period == "harvest" && b.group == Cultivation::High && b.count > 0).collect();
        assert_eq!(high_harvest.len(), 2);
        assert!(migration_histograms(&panel, 0.0).is_err());
    }

    #[test]
    fn od_shares_follow_arrivals() {
        use crate::ingest::geometry::DistrictGeometry;
        use crate::spatial::geom::{Point, Polygon};
        let square = |x: f64| {
            let ring = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)];
            Polygon::new(ring.iter().map(|&(a, b)| Point::new(x + a, b)).collect(), vec![])
        };
        let geoms = (0..3)
            .map(|i| DistrictGeometry::new(format!("D{i}"), "P1", vec![square(i as f64)]))
            .collect::<Result<Vec<_>>>()
            .unwrap();
        let districts = Districts::new(geoms).unwrap();
        let start = Day::from_ymd(2014, 10, 1).unwrap();
        let range = StudyRange::new(start, Day::from_ymd(2015, 12, 31).unwrap());
        let t0 = Day::from_ymd(2015, 4, 7).unwrap();
        let peaks = vec![PeakDate { district_id: "D0".into(), year: 2015, period: 7, t0, majority_share: Some(1.0), qualifying_pixels: 1, clamped: false }];
        let mut acc = OdAccumulator::new(range, &districts, &peaks, 2015, 30);
        // one baseline arrival from D1, one harvest arrival from D2
        let base_day = t0 - 60;
        acc.add_subscriber(&[seg(1, start, base_day - 1), seg(0, base_day, range.end)]);
        let harvest_day = t0 + 20;
        acc.add_subscriber(&[seg(2, start, harvest_day - 1), seg(0, harvest_day, range.end)]);
        let m = acc.finish();
        assert_eq!(m.get(2, 0), Some(1.0));
        assert_eq!(m.get(1, 0), Some(-1.0));
        assert_eq!(m.get(0, 0), Some(0.0));
        assert_eq!(m.get(0, 1), None);
        let order = od_order(&districts, &[0, 1, 2], |d| d == 2);
        assert_eq!(order, vec![2, 0, 1]);
    }
}
