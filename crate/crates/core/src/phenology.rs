//! Peak-vegetation date per district-year from 16-day NDVI composites.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::day::Day;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

pub const PERIODS_PER_YEAR: usize = 23;
/// Only the first twelve periods (DOY 1–192) are searched for the peak.
pub const SEARCH_PERIODS: u32 = 12;
pub const PERIOD_DAYS: i32 = 16;
pub const DEFAULT_NDVI_THRESHOLD: f64 = 0.3;

/// First day of 16-day period `p` (1-based) in `year`: DOY `1 + 16(p−1)`.
pub fn period_start(year: i32, period: u32) -> Day {
    assert!((1..=PERIODS_PER_YEAR as u32).contains(&period), "period {period} out of 1..=23");
    Day::first_of_year(year) + PERIOD_DAYS * (period as i32 - 1)
}

/// The 16-day period containing `day`.
pub fn period_of(day: Day) -> u32 {
    (day.ordinal() - 1) / PERIOD_DAYS as u32 + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdviSeries<T> {
    pub pixel_id: String,
    pub district_id: String,
    pub is_agriculture: bool,
    pub year: i32,
    /// One value per 16-day period, index 0 = period 1.
    pub values: Vec<T>,
}

impl<T: Scalar> NdviSeries<T> {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != PERIODS_PER_YEAR {
            return Err(Error::invalid(format!(
                "pixel {} year {}: {} NDVI values, expected {PERIODS_PER_YEAR}",
                self.pixel_id,
                self.year,
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(v.abs() <= T::one())) {
            return Err(Error::invalid(format!(
                "pixel {} year {}: NDVI {v} outside [-1, 1]",
                self.pixel_id, self.year
            )));
        }
        Ok(())
    }
}

/// Period (1..=12) with the pixel's highest value, earliest on ties; `None`
/// for non-agricultural pixels or when the maximum does not exceed `threshold`.
pub fn pixel_peak_window<T: Scalar>(series: &NdviSeries<T>, threshold: T) -> Option<u32> {
    if !series.is_agriculture {
        return None;
    }
    let first_half = &series.values[..SEARCH_PERIODS as usize];
    let (mut best, mut best_v) = (0, first_half[0]);
    for (i, &v) in first_half.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    (best_v > threshold).then_some(best as u32 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakDate {
    pub district_id: String,
    pub year: i32,
    /// 16-day period of `t0`; up to 12 when estimated, may be larger after a perturbation.
    pub period: u32,
    pub t0: Day,
    /// Votes for the modal period over all qualifying pixels; `None` for placebo draws.
    pub majority_share: Option<f64>,
    pub qualifying_pixels: u32,
    /// Set when a perturbation hit the calendar-year boundary.
    #[serde(default)]
    pub clamped: bool,
}

/// Modal period among pixel votes (earliest on ties).
pub fn district_peak_date(district_id: &str, year: i32, votes: &[u32]) -> Option<PeakDate> {
    let mut counts = [0u32; SEARCH_PERIODS as usize + 1];
    for &p in votes {
        assert!((1..=SEARCH_PERIODS).contains(&p), "vote for period {p}");
        counts[p as usize] += 1;
    }
    let total = votes.len() as u32;
    if total == 0 {
        return None;
    }
    let (mut period, mut best) = (1, counts[1]);
    for (p, &c) in counts.iter().enumerate().skip(2) {
        if c > best {
            period = p as u32;
            best = c;
        }
    }
    Some(PeakDate {
        district_id: district_id.to_owned(),
        year,
        period,
        t0: period_start(year, period),
        majority_share: Some(best as f64 / total as f64),
        qualifying_pixels: total,
        clamped: false,
    })
}

/// Shift `t0` by `delta_days`, clamped to the peak's calendar year.
pub fn perturb_peak(peak: &PeakDate, delta_days: i32) -> PeakDate {
    let (lo, hi) = (Day::first_of_year(peak.year), Day::last_of_year(peak.year));
    let raw = peak.t0 + delta_days;
    let t0 = raw.clamp(lo, hi);
    PeakDate {
        t0,
        period: period_of(t0),
        clamped: peak.clamped || t0 != raw,
        ..peak.clone()
    }
}

/// Uniform random period in 1..=12, reproducible per `(seed, district, year)`.
pub fn placebo_peak(seed: u64, district_id: &str, year: i32) -> PeakDate {
    let mut r = rng::stream(seed, &format!("placebo/{district_id}/{year}"));
    let period = r.random_range(1..=SEARCH_PERIODS);
    PeakDate {
        district_id: district_id.to_owned(),
        year,
        period,
        t0: period_start(year, period),
        majority_share: None,
        qualifying_pixels: 0,
        clamped: false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeakExclusion {
    pub district_id: String,
    pub year: i32,
    pub pixels: u32,
    pub reason: &'static str,
}

/// Peak dates for every district-year present in `series`; district-years
/// without qualifying pixels are reported instead.
pub fn estimate_peaks<T: Scalar>(
    series: &[NdviSeries<T>],
    threshold: T,
) -> (Vec<PeakDate>, Vec<PeakExclusion>) {
    let mut groups: BTreeMap<(&str, i32), (u32, Vec<u32>)> = BTreeMap::new();
    for s in series {
        let g = groups.entry((s.district_id.as_str(), s.year)).or_default();
        g.0 += 1;
        g.1.extend(pixel_peak_window(s, threshold));
    }
    let mut peaks = Vec::new();
    let mut excluded = Vec::new();
    for ((district, year), (pixels, votes)) in groups {
        match district_peak_date(district, year, &votes) {
            Some(p) => peaks.push(p),
            None => excluded.push(PeakExclusion {
                district_id: district.to_owned(),
                year,
                pixels,
                reason: "no_qualifying_pixels",
            }),
        }
    }
    (peaks, excluded)
}

#[derive(Debug, Deserialize)]
struct NdviRow<T> {
    pixel_id: String,
    district_id: String,
    is_agriculture: String,
    year: i32,
    period: u32,
    ndvi: T,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" => Some(false),
        _ => None,
    }
}

/// Long-format CSV `pixel_id,district_id,is_agriculture,year,period,ndvi`.
pub fn read_ndvi_csv<T: Scalar + serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<NdviSeries<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let mut by_pixel: BTreeMap<(String, i32), (String, bool, Vec<Option<T>>)> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: NdviRow<T> = row.map_err(|e| Error::csv(path, e))?;
        let agri = parse_bool(&row.is_agriculture)
            .ok_or_else(|| Error::invalid(format!("{}: bad is_agriculture {:?}", path.display(), row.is_agriculture)))?;
        if !(1..=PERIODS_PER_YEAR as u32).contains(&row.period) {
            return Err(Error::invalid(format!(
                "{}: pixel {} period {} out of 1..=23",
                path.display(),
                row.pixel_id,
                row.period
            )));
        }
        let entry = by_pixel
            .entry((row.pixel_id.clone(), row.year))
            .or_insert_with(|| (row.district_id.clone(), agri, vec![None; PERIODS_PER_YEAR]));
        if entry.0 != row.district_id {
            return Err(Error::invalid(format!(
                "{}: pixel {} listed under districts {} and {}",
                path.display(),
                row.pixel_id,
                entry.0,
                row.district_id
            )));
        }
        let slot = &mut entry.2[row.period as usize - 1];
        if slot.is_some() {
            return Err(Error::invalid(format!(
                "{}: pixel {} year {} period {} repeated",
                path.display(),
                row.pixel_id,
                row.year,
                row.period
            )));
        }
        *slot = Some(row.ndvi);
    }
    by_pixel
        .into_iter()
        .map(|((pixel_id, year), (district_id, is_agriculture, values))| {
            let n = values.iter().flatten().count();
            let values: Option<Vec<T>> = values.into_iter().collect();
            let values = values.ok_or_else(|| {
                Error::invalid(format!("pixel {pixel_id} year {year}: {n} of {PERIODS_PER_YEAR} periods present"))
            })?;
            let s = NdviSeries { pixel_id, district_id, is_agriculture, year, values };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn write_ndvi_csv<T: Scalar>(path: &Path, series: &[NdviSeries<T>]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "pixel_id,district_id,is_agriculture,year,period,ndvi").map_err(io)?;
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{:.5}",
                s.pixel_id,
                s.district_id,
                s.is_agriculture as u8,
                s.year,
                i + 1,
                v.as_f64()
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// CSV `district_id,year,period,t0,majority_share,qualifying_pixels`.
pub fn write_peaks_csv(path: &Path, peaks: &[PeakDate], preamble: &str) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(preamble.as_bytes()).map_err(io)?;
    writeln!(w, "district_id,year,period,t0,majority_share,qualifying_pixels").map_err(io)?;
    for p in peaks {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.district_id,
            p.year,
            p.period,
            p.t0,
            p.majority_share.map(|m| format!("{m:.6}")).unwrap_or_default(),
            p.qualifying_pixels
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_peaks_csv(path: &Path) -> Result<Vec<PeakDate>> {
    #[derive(Deserialize)]
    struct Row {
        district_id: String,
        year: i32,
        period: u32,
        t0: Day,
        majority_share: Option<f64>,
        qualifying_pixels: u32,
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(file));
    rdr.deserialize()
        .map(|r| {
            let r: Row = r.map_err(|e| Error::csv(path, e))?;
            Ok(PeakDate {
                district_id: r.district_id,
                year: r.year,
                period: r.period,
                t0: r.t0,
                majority_share: r.majority_share,
                qualifying_pixels: r.qualifying_pixels,
                clamped: false,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<f64>, agri: bool) -> NdviSeries<f64> {
        NdviSeries {
            pixel_id: "p".into(),
            district_id: "D".into(),
            is_agriculture: agri,
            year: 2016,
            values,
        }
    }

    fn with_values(pairs: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.1; PERIODS_PER_YEAR];
        for &(p, x) in pairs {
            v[p - 1] = x;
        }
        v
    }

    #[test]
    fn pixel_peak_examples() {
        assert_eq!(pixel_peak_window(&series(with_values(&[(7, 0.7)]), true), 0.3), Some(7));
        assert_eq!(pixel_peak_window(&series(with_values(&[(7, 0.25)]), true), 0.3), None);
        assert_eq!(pixel_peak_window(&series(with_values(&[(5, 0.6), (9, 0.6)]), true), 0.3), Some(5));
        // exactly at threshold does not exceed it
        assert_eq!(pixel_peak_window(&series(with_values(&[(4, 0.3)]), true), 0.3), None);
        assert_eq!(pixel_peak_window(&series(with_values(&[(7, 0.7)]), false), 0.3), None);
        // second-half maxima are ignored
        assert_eq!(pixel_peak_window(&series(with_values(&[(3, 0.5), (15, 0.9)]), true), 0.3), Some(3));
    }

    #[test]
    fn district_peak_examples() {
        let votes: Vec<u32> = [vec![7; 60], vec![8; 40]].concat();
        let p = district_peak_date("D", 2016, &votes).unwrap();
        assert_eq!((p.period, p.majority_share), (7, Some(0.6)));
        let votes: Vec<u32> = [vec![8; 50], vec![7; 50]].concat();
        assert_eq!(district_peak_date("D", 2016, &votes).unwrap().period, 7);
        assert_eq!(p.t0.ordinal(), 97);
        assert_eq!(p.t0, Day::from_ymd(2016, 4, 6).unwrap());
        assert!(district_peak_date("D", 2016, &[]).is_none());
    }

    #[test]
    fn period_grid() {
        for p in 1..=23 {
            let d = period_start(2017, p);
            assert_eq!(d.ordinal(), 1 + 16 * (p - 1));
            assert_eq!(period_of(d), p);
            if p < 23 {
                assert_eq!(period_of(d + 15), p);
            }
        }
        assert_eq!(period_of(Day::from_ymd(2016, 12, 31).unwrap()), 23);
    }

    #[test]
    fn perturbation_examples() {
        let base = PeakDate {
            district_id: "D".into(),
            year: 2016,
            period: 7,
            t0: Day::from_ymd(2016, 4, 7).unwrap(),
            majority_share: Some(0.6),
            qualifying_pixels: 10,
            clamped: false,
        };
        let up = perturb_peak(&base, 14);
        assert_eq!(up.t0, Day::from_ymd(2016, 4, 21).unwrap());
        assert!(!up.clamped);
        assert_eq!(perturb_peak(&base, 0), base);

        let jan = PeakDate { t0: Day::from_ymd(2016, 1, 5).unwrap(), period: 1, ..base.clone() };
        let down = perturb_peak(&jan, -14);
        assert_eq!(down.t0, Day::from_ymd(2016, 1, 1).unwrap());
        assert!(down.clamped);
        assert_eq!(down.period, 1);
        assert!(perturb_peak(&base, 400).clamped);
    }

    #[test]
    fn placebo_draws() {
        assert_eq!(placebo_peak(42, "D07", 2016), placebo_peak(42, "D07", 2016));
        let mut freq = [0u32; 13];
        for i in 0..12_000 {
            let p = placebo_peak(9, &format!("D{i}"), 2016);
            assert!((1..=12).contains(&p.period));
            assert_eq!(p.t0, period_start(2016, p.period));
            freq[p.period as usize] += 1;
        }
        // binomial(12000, 1/12): sd = sqrt(12000 * 1/12 * 11/12) ≈ 30.28
        let sd = (12_000.0f64 / 12.0 * 11.0 / 12.0).sqrt();
        for &f in &freq[1..] {
            assert!((f as f64 - 1000.0).abs() <= 3.0 * sd, "{freq:?}");
        }
    }

    #[test]
    fn estimate_reports_exclusions() {
        let mut s = vec![series(with_values(&[(6, 0.8)]), true), series(with_values(&[(6, 0.8)]), false)];
        s[1].district_id = "E".into();
        let (peaks, excluded) = estimate_peaks(&s, 0.3);
        assert_eq!(peaks.len(), 1);
        assert_eq!(excluded.len(), 1);
        assert_eq!(excluded[0].district_id, "E");
    }

    #[test]
    fn ndvi_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ndvi.csv");
        let s = vec![series(with_values(&[(6, 0.8)]), true)];
        write_ndvi_csv(&path, &s).unwrap();
        let back: Vec<NdviSeries<f64>> = read_ndvi_csv(&path).unwrap();
        assert_eq!(back, s);
        let back32: Vec<NdviSeries<f32>> = read_ndvi_csv(&path).unwrap();
        assert_eq!(pixel_peak_window(&back32[0], 0.3), Some(6));
    }

    proptest! {
        #[test]
        fn district_peak_order_invariant(mut votes in prop::collection::vec(1u32..=12, 1..200), seed in any::<u64>()) {
            let a = district_peak_date("D", 2016, &votes).unwrap();
            let mut r = rng::stream(seed, "shuffle");
            use rand::seq::SliceRandom;
            votes.shuffle(&mut r);
            prop_assert_eq!(a, district_peak_date("D", 2016, &votes).unwrap());
        }

        #[test]
        fn pixel_argmax_scale_invariant(values in prop::collection::vec(0.0f64..1.0, 23), k in 0.01f64..1.0) {
            let s = series(values.clone(), true);
            let scaled = series(values.iter().map(|v| v * k).collect(), true);
            let argmax = |s: &NdviSeries<f64>| pixel_peak_window(s, -1.0);
            prop_assert_eq!(argmax(&s), argmax(&scaled));
            prop_assert_eq!(
                pixel_peak_window(&scaled, 0.3).is_some(),
                values[..12].iter().cloned().fold(f64::MIN, f64::max) * k > 0.3
            );
        }
    }
}
