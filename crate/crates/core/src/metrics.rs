//! District-day migration rates, in-migrant composition by source class, and
//! retention/return shares.
//!
//! Presence is segment based: a subscriber is in district `d` on day `t` when
//! their residence segment covering `t` is in `d`. In-migrants to `d` on `t` are
//! present subscribers whose residence `lag` days earlier was a different
//! (known) district.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::day::{Day, StudyRange};
use crate::error::{Error, Result};
use crate::ingest::geometry::Districts;
use crate::panel::Cultivation;
use crate::residence::{residence_on_day, ResidenceSegment};

const NONE: u32 = u32::MAX;

/// Characteristics of an in-migrant's previous district.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceClass {
    pub cultivation: Cultivation,
    pub violence_30d: bool,
    pub taliban: bool,
}

impl SourceClass {
    pub const COUNT: usize = 12;

    pub fn index(self) -> usize {
        self.cultivation.index() * 4 + (self.violence_30d as usize) * 2 + self.taliban as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < Self::COUNT);
        Self {
            cultivation: Cultivation::ALL[i / 4],
            violence_30d: (i / 2) % 2 == 1,
            taliban: i % 2 == 1,
        }
    }

    /// e.g. `high_v1_t0`.
    pub fn label(self) -> String {
        format!(
            "{}_v{}_t{}",
            self.cultivation.as_str(),
            self.violence_30d as u8,
            self.taliban as u8
        )
    }

    pub fn all() -> impl Iterator<Item = SourceClass> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

/// A set of source classes (bit mask over [`SourceClass::index`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassSet(pub u16);

impl ClassSet {
    pub fn single(c: SourceClass) -> Self {
        ClassSet(1 << c.index())
    }

    pub fn cultivation(level: Cultivation) -> Self {
        Self::matching(|c| c.cultivation == level)
    }

    pub fn matching(pred: impl Fn(SourceClass) -> bool) -> Self {
        ClassSet(
            SourceClass::all()
                .filter(|&c| pred(c))
                .fold(0, |m, c| m | (1 << c.index())),
        )
    }

    pub fn contains(self, class_index: usize) -> bool {
        self.0 & (1 << class_index) != 0
    }

    /// Parse `high`, `low`, `none`, or a full label like `high_v1_t0`.
    pub fn parse(s: &str) -> Option<Self> {
        if let Some(level) = Cultivation::parse(s) {
            return Some(Self::cultivation(level));
        }
        SourceClass::all().find(|c| c.label() == s).map(Self::single)
    }
}

/// Source class of each (district, day) over a study range.
#[derive(Debug, Clone)]
pub struct SourceClassMap {
    range: StudyRange,
    table: Vec<u8>,
}

impl SourceClassMap {
    pub fn build(
        range: StudyRange,
        n_districts: usize,
        mut class_of: impl FnMut(u32, Day) -> SourceClass,
    ) -> Self {
        let t = range.len();
        let mut table = vec![0u8; n_districts * t];
        for d in 0..n_districts {
            for (i, day) in range.days().enumerate() {
                table[d * t + i] = class_of(d as u32, day).index() as u8;
            }
        }
        Self { range, table }
    }

    #[inline]
    pub fn class_index(&self, district: u32, day_index: usize) -> usize {
        self.table[district as usize * self.range.len() + day_index] as usize
    }

    pub fn class_of(&self, district: u32, day: Day) -> Option<SourceClass> {
        self.range
            .index(day)
            .map(|i| SourceClass::from_index(self.class_index(district, i)))
    }
}

/// A ratio with its counts. `rate` is `None` when the denominator is zero;
/// `valid` is false when undefined or exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RateObs {
    pub numerator: u32,
    pub denominator: u32,
    pub rate: Option<f64>,
    pub valid: bool,
}

impl RateObs {
    pub fn new(numerator: u32, denominator: u32) -> Self {
        let rate = (denominator > 0).then(|| numerator as f64 / denominator as f64);
        let valid = numerator > 0 && numerator < denominator;
        Self {
            numerator,
            denominator,
            rate,
            valid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionShares {
    pub still_same_30: f64,
    pub returned_prev_30: f64,
    pub returned_prev_90: f64,
}

/// Share of returners attributable to seasonal migrants, assuming regular
/// in-migrants return at the baseline rate:
/// `(r_h·N_h − r_b·N_b) / (N_h − N_b)`. Undefined unless `N_h > N_b`.
pub fn seasonal_return_share(r_base: f64, r_harvest: f64, n_base: f64, n_harvest: f64) -> Option<f64> {
    (n_harvest > n_base).then(|| (r_harvest * n_harvest - r_base * n_base) / (n_harvest - n_base))
}

/// All subscribers' segments in memory, for direct per-district-day queries.
/// Used for small inputs and as an independent route for checking the
/// streaming [`MetricsAccumulator`].
#[derive(Debug, Clone, Default)]
pub struct ResidenceIndex {
    pub subscribers: Vec<Vec<ResidenceSegment>>,
}

/// In-migration at one district-day with the subscribers counted as movers.
#[derive(Debug, Clone, PartialEq)]
pub struct InRate {
    pub obs: RateObs,
    pub movers: Vec<usize>,
}

impl ResidenceIndex {
    pub fn new(subscribers: Vec<Vec<ResidenceSegment>>) -> Self {
        Self { subscribers }
    }

    fn at(&self, s: usize, day: Day) -> Option<u32> {
        residence_on_day(&self.subscribers[s], day)
    }

    pub fn in_rate(&self, d: u32, t: Day, lag: i32) -> InRate {
        let mut present = 0;
        let mut movers = Vec::new();
        for s in 0..self.subscribers.len() {
            if self.at(s, t) != Some(d) {
                continue;
            }
            present += 1;
            if matches!(self.at(s, t - lag), Some(prev) if prev != d) {
                movers.push(s);
            }
        }
        InRate {
            obs: RateObs::new(movers.len() as u32, present),
            movers,
        }
    }

    /// Subscribers in `d` at `t − lag` who are positively observed elsewhere at `t`,
    /// over all subscribers in `d` at `t − lag`.
    pub fn out_rate(&self, d: u32, t: Day, lag: i32) -> RateObs {
        let (mut base, mut left) = (0, 0);
        for s in 0..self.subscribers.len() {
            if self.at(s, t - lag) != Some(d) {
                continue;
            }
            base += 1;
            if matches!(self.at(s, t), Some(now) if now != d) {
                left += 1;
            }
        }
        RateObs::new(left, base)
    }

    pub fn composition_share(
        &self,
        movers: &[usize],
        t: Day,
        lag: i32,
        classes: &SourceClassMap,
        set: ClassSet,
    ) -> Option<f64> {
        if movers.is_empty() {
            return None;
        }
        let hits = movers
            .iter()
            .filter(|&&s| {
                let src = self.at(s, t - lag).expect("movers have a previous residence");
                classes
                    .class_of(src, t)
                    .is_some_and(|c| set.contains(c.index()))
            })
            .count();
        Some(hits as f64 / movers.len() as f64)
    }

    pub fn retention_shares(&self, movers: &[usize], d: u32, t: Day, lag: i32) -> Option<RetentionShares> {
        if movers.is_empty() {
            return None;
        }
        let (mut still, mut back30, mut back90) = (0, 0, 0);
        for &s in movers {
            let prev = self.at(s, t - lag);
            let later = self.at(s, t + 30);
            still += (later == Some(d)) as u32;
            back30 += (later.is_some() && later == prev) as u32;
            back90 += (1..=90).any(|k| self.at(s, t + k) == prev) as u32;
        }
        let n = movers.len() as f64;
        Some(RetentionShares {
            still_same_30: still as f64 / n,
            returned_prev_30: back30 as f64 / n,
            returned_prev_90: back90 as f64 / n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Reference lag in days for in/out migration (30; 15 and 45 for robustness).
    pub lag: u32,
    /// District-days with fewer present subscribers are flagged low-support (kept).
    pub min_support: u32,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            lag: 30,
            min_support: 20,
        }
    }
}

/// Retention is measured `RET_SHORT` and up to `RET_LONG` days after arrival.
pub const RET_SHORT: usize = 30;
pub const RET_LONG: usize = 90;

/// Streaming accumulator over subscribers' segment lists. Accumulators built on
/// disjoint subscriber sets merge by addition.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator<'a> {
    range: StudyRange,
    n_districts: usize,
    config: MetricsConfig,
    classes: Option<&'a SourceClassMap>,
    present: Vec<u32>,
    movers: Vec<u32>,
    leavers: Vec<u32>,
    class_counts: Vec<u32>,
    still30: Vec<u32>,
    ret30: Vec<u32>,
    ret90: Vec<u32>,
    buf: Vec<u32>,
}

impl<'a> MetricsAccumulator<'a> {
    pub fn new(
        range: StudyRange,
        n_districts: usize,
        config: MetricsConfig,
        classes: Option<&'a SourceClassMap>,
    ) -> Self {
        let cells = n_districts * range.len();
        Self {
            range,
            n_districts,
            config,
            classes,
            present: vec![0; cells],
            movers: vec![0; cells],
            leavers: vec![0; cells],
            class_counts: if classes.is_some() { vec![0; cells * SourceClass::COUNT] } else { Vec::new() },
            still30: vec![0; cells],
            ret30: vec![0; cells],
            ret90: vec![0; cells],
            buf: vec![NONE; range.len()],
        }
    }

    pub fn add_subscriber(&mut self, segments: &[ResidenceSegment]) {
        let t_len = self.range.len();
        let lag = self.config.lag as usize;
        self.buf.fill(NONE);
        for s in segments {
            let lo = (s.start - self.range.start).max(0);
            let hi = (s.end - self.range.start).min(t_len as i32 - 1);
            if lo <= hi {
                self.buf[lo as usize..=hi as usize].fill(s.district);
            }
        }
        let buf = &self.buf;
        for t in 0..t_len {
            let d = buf[t];
            if d == NONE {
                continue;
            }
            let cell = d as usize * t_len + t;
            self.present[cell] += 1;
            if t < lag {
                continue;
            }
            let src = buf[t - lag];
            if src == NONE || src == d {
                continue;
            }
            self.movers[cell] += 1;
            self.leavers[src as usize * t_len + t] += 1;
            if let Some(classes) = self.classes {
                let c = classes.class_index(src, t);
                self.class_counts[cell * SourceClass::COUNT + c] += 1;
            }
            if t + RET_SHORT < t_len {
                let later = buf[t + RET_SHORT];
                self.still30[cell] += (later == d) as u32;
                self.ret30[cell] += (later == src) as u32;
            }
            if t + RET_LONG < t_len {
                self.ret90[cell] += buf[t + 1..=t + RET_LONG].contains(&src) as u32;
            }
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        let add = |a: &mut Vec<u32>, b: &[u32]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.present, &other.present);
        add(&mut self.movers, &other.movers);
        add(&mut self.leavers, &other.leavers);
        add(&mut self.class_counts, &other.class_counts);
        add(&mut self.still30, &other.still30);
        add(&mut self.ret30, &other.ret30);
        add(&mut self.ret90, &other.ret90);
        self
    }

    pub fn finish(self) -> MetricsTable {
        MetricsTable {
            range: self.range,
            n_districts: self.n_districts,
            config: self.config,
            has_classes: self.classes.is_some(),
            present: self.present,
            movers: self.movers,
            leavers: self.leavers,
            class_counts: self.class_counts,
            still30: self.still30,
            ret30: self.ret30,
            ret90: self.ret90,
        }
    }
}

/// Which district-day series to read from a [`MetricsTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "classes")]
pub enum Measure {
    InRate,
    OutRate,
    /// Share of in-migrants whose previous district is in the class set.
    Composition(ClassSet),
    Still30,
    Returned30,
    Returned90,
}

impl Measure {
    /// `in_rate`, `out_rate`, `share_<class>`, `still30`, `ret30`, `ret90`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_rate" => Some(Measure::InRate),
            "out_rate" => Some(Measure::OutRate),
            "still30" => Some(Measure::Still30),
            "ret30" => Some(Measure::Returned30),
            "ret90" => Some(Measure::Returned90),
            _ => s.strip_prefix("share_").and_then(ClassSet::parse).map(Measure::Composition),
        }
    }
}

/// One district-day row.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictDayMetrics {
    pub district: u32,
    pub day: Day,
    pub present: u32,
    pub in_rate: RateObs,
    pub out_rate: RateObs,
    /// Per [`SourceClass`] index; empty when no class map was supplied.
    pub composition: Option<Vec<f64>>,
    pub still_same_30: Option<f64>,
    pub returned_prev_30: Option<f64>,
    pub returned_prev_90: Option<f64>,
    pub low_support: bool,
}

/// Finished district × day counts over the study range.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub range: StudyRange,
    pub n_districts: usize,
    pub config: MetricsConfig,
    has_classes: bool,
    present: Vec<u32>,
    movers: Vec<u32>,
    leavers: Vec<u32>,
    class_counts: Vec<u32>,
    still30: Vec<u32>,
    ret30: Vec<u32>,
    ret90: Vec<u32>,
}

impl MetricsTable {
    #[inline]
    fn cell(&self, d: u32, t: usize) -> usize {
        d as usize * self.range.len() + t
    }

    fn lag(&self) -> usize {
        self.config.lag as usize
    }

    pub fn has_classes(&self) -> bool {
        self.has_classes
    }

    pub fn present(&self, d: u32, t: usize) -> u32 {
        self.present[self.cell(d, t)]
    }

    pub fn movers(&self, d: u32, t: usize) -> u32 {
        self.movers[self.cell(d, t)]
    }

    /// Districts with any presence at all (i.e. covered by towers).
    pub fn observed_districts(&self) -> Vec<u32> {
        let t = self.range.len();
        (0..self.n_districts as u32)
            .filter(|&d| self.present[d as usize * t..(d as usize + 1) * t].iter().any(|&p| p > 0))
            .collect()
    }

    pub fn in_rate(&self, d: u32, t: usize) -> RateObs {
        if t < self.lag() {
            return RateObs::new(0, 0);
        }
        let c = self.cell(d, t);
        RateObs::new(self.movers[c], self.present[c])
    }

    pub fn out_rate(&self, d: u32, t: usize) -> RateObs {
        if t < self.lag() {
            return RateObs::new(0, 0);
        }
        RateObs::new(self.leavers[self.cell(d, t)], self.present[self.cell(d, t - self.lag())])
    }

    pub fn composition(&self, d: u32, t: usize, set: ClassSet) -> Option<f64> {
        let c = self.cell(d, t);
        if !self.has_classes || self.movers[c] == 0 {
            return None;
        }
        let counts = &self.class_counts[c * SourceClass::COUNT..(c + 1) * SourceClass::COUNT];
        let hits: u32 = (0..SourceClass::COUNT).filter(|&i| set.contains(i)).map(|i| counts[i]).sum();
        Some(hits as f64 / self.movers[c] as f64)
    }

    fn retention(&self, d: u32, t: usize, horizon: usize, counts: &[u32]) -> Option<f64> {
        let c = self.cell(d, t);
        (t + horizon < self.range.len() && self.movers[c] > 0)
            .then(|| counts[c] as f64 / self.movers[c] as f64)
    }

    /// Value of a measure if it is usable: 0/1 in/out rates are discarded.
    pub fn value(&self, measure: Measure, d: u32, t: usize) -> Option<f64> {
        match measure {
            Measure::InRate => Some(self.in_rate(d, t)).filter(|r| r.valid).and_then(|r| r.rate),
            Measure::OutRate => Some(self.out_rate(d, t)).filter(|r| r.valid).and_then(|r| r.rate),
            Measure::Composition(set) => self.composition(d, t, set),
            Measure::Still30 => self.retention(d, t, RET_SHORT, &self.still30),
            Measure::Returned30 => self.retention(d, t, RET_SHORT, &self.ret30),
            Measure::Returned90 => self.retention(d, t, RET_LONG, &self.ret90),
        }
    }

    /// `value` at a calendar day; `None` outside the study range.
    pub fn value_on(&self, measure: Measure, d: u32, day: Day) -> Option<f64> {
        self.range.index(day).and_then(|t| self.value(measure, d, t))
    }

    pub fn row(&self, d: u32, t: usize) -> DistrictDayMetrics {
        let present = self.present(d, t);
        DistrictDayMetrics {
            district: d,
            day: self.range.day(t),
            present,
            in_rate: self.in_rate(d, t),
            out_rate: self.out_rate(d, t),
            composition: self.has_classes.then(|| {
                (0..SourceClass::COUNT)
                    .map(|i| {
                        self.composition(d, t, ClassSet(1 << i)).unwrap_or(f64::NAN)
                    })
                    .collect()
            }),
            still_same_30: self.value(Measure::Still30, d, t),
            returned_prev_30: self.value(Measure::Returned30, d, t),
            returned_prev_90: self.value(Measure::Returned90, d, t),
            low_support: present < self.config.min_support,
        }
    }

    /// CSV `district_id,day,present,in_rate,out_rate,share_<class>...,still30,ret30,ret90,valid_flags`.
    /// Only district-days with presence are written.
    pub fn write_csv(&self, path: &Path, districts: &Districts, preamble: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(preamble.as_bytes()).map_err(io)?;
        let shares: Vec<String> = SourceClass::all().map(|c| format!("share_{}", c.label())).collect();
        writeln!(
            w,
            "district_id,day,present,in_rate,out_rate,{}still30,ret30,ret90,valid_flags",
            shares.iter().map(|s| format!("{s},")).collect::<String>()
        )
        .map_err(io)?;
        let fmt = |v: Option<f64>| v.filter(|x| x.is_finite()).map(|x| format!("{x:.6}")).unwrap_or_default();
        for d in 0..self.n_districts as u32 {
            for t in 0..self.range.len() {
                let r = self.row(d, t);
                if r.present == 0 {
                    continue;
                }
                let mut flags = Vec::new();
                if r.in_rate.valid {
                    flags.push("in");
                }
                if r.out_rate.valid {
                    flags.push("out");
                }
                if r.in_rate.numerator > 0 && self.has_classes {
                    flags.push("comp");
                }
                if r.still_same_30.is_some() {
                    flags.push("ret30");
                }
                if r.returned_prev_90.is_some() {
                    flags.push("ret90");
                }
                if r.low_support {
                    flags.push("low_support");
                }
                let comp: String = match &r.composition {
                    Some(c) => c.iter().map(|&v| format!("{},", fmt(Some(v)))).collect(),
                    None => ",".repeat(SourceClass::COUNT),
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{}{},{},{},{}",
                    districts.id(d),
                    r.day,
                    r.present,
                    fmt(r.in_rate.rate),
                    fmt(r.out_rate.rate),
                    comp,
                    fmt(r.still_same_30),
                    fmt(r.returned_prev_30),
                    fmt(r.returned_prev_90),
                    flags.join("|")
                )
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day0() -> Day {
        Day::from_ymd(2015, 1, 1).unwrap()
    }

    fn seg(d: u32, a: i32, b: i32) -> ResidenceSegment {
        ResidenceSegment { district: d, start: day0() + a, end: day0() + b }
    }

    #[test]
    fn in_rate_ratio_by_definition() {
        // 100 present in district 0 on day 40, 3 of whom were in district 1 on day 10.
        let mut subs: Vec<Vec<ResidenceSegment>> = (0..97).map(|_| vec![seg(0, 0, 60)]).collect();
        subs.extend((0..3).map(|_| vec![seg(1, 0, 20), seg(0, 21, 60)]));
        let idx = ResidenceIndex::new(subs);
        let r = idx.in_rate(0, day0() + 40, 30);
        assert_eq!((r.obs.numerator, r.obs.denominator), (3, 100));
        assert_eq!(r.obs.rate, Some(0.03));
        assert!(r.obs.valid);
    }

    #[test]
    fn zero_and_one_rates_are_flagged() {
        let stay = ResidenceIndex::new((0..50).map(|_| vec![seg(0, 0, 60)]).collect());
        let r = stay.in_rate(0, day0() + 40, 30);
        assert_eq!(r.obs.rate, Some(0.0));
        assert!(!r.obs.valid);

        let all_new = ResidenceIndex::new((0..10).map(|_| vec![seg(1, 0, 20), seg(0, 21, 60)]).collect());
        let r = all_new.in_rate(0, day0() + 40, 30);
        assert_eq!(r.obs.rate, Some(1.0));
        assert!(!r.obs.valid);

        let empty = ResidenceIndex::new(vec![]);
        assert_eq!(empty.in_rate(0, day0(), 30).obs.rate, None);
    }

    #[test]
    fn unknown_previous_residence_counts_in_denominator_only() {
        let subs = vec![vec![seg(0, 35, 60)], vec![seg(1, 0, 20), seg(0, 21, 60)], vec![seg(0, 0, 60)]];
        let r = ResidenceIndex::new(subs).in_rate(0, day0() + 40, 30);
        assert_eq!((r.obs.numerator, r.obs.denominator), (1, 3));
    }

    #[test]
    fn out_rate_requires_positive_evidence() {
        // 80 in d0 at t-30: 70 stay, 4 observed in d1, 6 unobserved at t.
        let mut subs: Vec<Vec<ResidenceSegment>> = (0..70).map(|_| vec![seg(0, 0, 60)]).collect();
        subs.extend((0..4).map(|_| vec![seg(0, 0, 20), seg(1, 21, 60)]));
        subs.extend((0..6).map(|_| vec![seg(0, 0, 20)]));
        // 10 bystanders elsewhere all along.
        subs.extend((0..10).map(|_| vec![seg(1, 0, 60)]));
        assert_eq!(subs.len(), 90);
        let r = ResidenceIndex::new(subs).out_rate(0, day0() + 40, 30);
        assert_eq!((r.numerator, r.denominator), (4, 80));
        assert_eq!(r.rate, Some(0.05));
    }

    #[test]
    fn composition_and_partition() {
        let range = StudyRange::new(day0(), day0() + 100);
        // Source districts 1..=3 are high, low, none.
        let classes = SourceClassMap::build(range, 4, |d, _| SourceClass {
            cultivation: match d {
                1 => Cultivation::High,
                2 => Cultivation::Low,
                _ => Cultivation::None,
            },
            violence_30d: d == 1,
            taliban: d % 2 == 0,
        });
        let mut subs = Vec::new();
        for (src, n) in [(1u32, 4), (2, 5), (3, 1)] {
            subs.extend((0..n).map(|_| vec![seg(src, 0, 20), seg(0, 21, 60)]));
        }
        let idx = ResidenceIndex::new(subs);
        let t = day0() + 40;
        let r = idx.in_rate(0, t, 30);
        assert_eq!(r.movers.len(), 10);
        let share = |c| idx.composition_share(&r.movers, t, 30, &classes, ClassSet::cultivation(c)).unwrap();
        assert_eq!(share(Cultivation::High), 0.4);
        let total: f64 = Cultivation::ALL.iter().map(|&c| share(c)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(idx.composition_share(&[], t, 30, &classes, ClassSet::cultivation(Cultivation::High)), None);
    }

    #[test]
    fn retention_boundaries() {
        let t = 40;
        // Mover arrives from d1, stays through t+30.
        let stayer = vec![seg(1, 0, 20), seg(0, 21, 200)];
        // Mover back home exactly at t+90.
        let late_return = vec![seg(1, 0, 20), seg(0, 21, t + 89), seg(1, t + 90, 200)];
        // Mover with no residence at t+30.
        let vanished = vec![seg(1, 0, 20), seg(0, 21, 60)];
        let idx = ResidenceIndex::new(vec![stayer.clone()]);
        let m = idx.in_rate(0, day0() + t, 30).movers;
        assert_eq!(idx.retention_shares(&m, 0, day0() + t, 30).unwrap().still_same_30, 1.0);

        let idx = ResidenceIndex::new(vec![late_return]);
        let r = idx.retention_shares(&[0], 0, day0() + t, 30).unwrap();
        assert_eq!((r.returned_prev_30, r.returned_prev_90), (0.0, 1.0));

        let idx = ResidenceIndex::new(vec![vanished]);
        let r = idx.retention_shares(&[0], 0, day0() + t, 30).unwrap();
        assert_eq!((r.still_same_30, r.returned_prev_30, r.returned_prev_90), (0.0, 0.0, 0.0));
    }

    #[test]
    fn seasonal_return_decomposition() {
        let r = seasonal_return_share(0.46, 0.53, 100.0, 178.0).unwrap();
        // (0.53·178 − 0.46·100) / 78 = 48.34 / 78
        assert!((r - 48.34 / 78.0).abs() < 1e-12);
        assert!((r - 0.6197).abs() < 5e-5);
        assert_eq!(seasonal_return_share(0.3, 0.3, 50.0, 80.0), Some(0.3));
        let z = seasonal_return_share(0.0, 0.5, 100.0, 150.0).unwrap();
        assert!((z - 0.5 * 150.0 / 50.0).abs() < 1e-12);
        assert_eq!(seasonal_return_share(0.4, 0.5, 100.0, 100.0), None);
    }

    #[test]
    fn measure_names_parse() {
        assert_eq!(Measure::parse("in_rate"), Some(Measure::InRate));
        assert_eq!(Measure::parse("share_high"), Some(Measure::Composition(ClassSet::cultivation(Cultivation::High))));
        let c = SourceClass { cultivation: Cultivation::High, violence_30d: true, taliban: true };
        assert_eq!(Measure::parse("share_high_v1_t1"), Some(Measure::Composition(ClassSet::single(c))));
        assert_eq!(Measure::parse("bogus"), None);
        for i in 0..SourceClass::COUNT {
            assert_eq!(SourceClass::from_index(i).index(), i);
        }
    }
}
