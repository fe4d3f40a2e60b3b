//! Robustness battery: placebo peak dates, shifted peak dates, the pixel
//! agreement split and sample restrictions.
//!
//! Batteries that change peak dates reuse the district-day metrics and only
//! rebuild the panel, which is cheap next to re-reading events.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::econometrics::specs::{high_coefficient, run_spec, SpecId, SpecOptions, SpecResult};
use crate::error::{Error, Result};
use crate::ingest::geometry::Districts;
use crate::metrics::MetricsTable;
use crate::panel::{build_panel, Panel, PanelConfig, PanelData, PanelRow};
use crate::phenology::{perturb_peak, placebo_peak, PeakDate};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

pub const DEFAULT_PLACEBO_ITERATIONS: usize = 250;
pub const PERTURBATION_DAYS: i32 = 14;

/// Everything a battery needs to rebuild panels and refit.
#[derive(Clone, Copy)]
pub struct BatteryInputs<'a> {
    pub districts: &'a Districts,
    pub metrics: &'a MetricsTable,
    pub peaks: &'a [PeakDate],
    pub data: &'a PanelData,
    pub panel: &'a PanelConfig,
    pub spec: SpecId,
    pub options: SpecOptions,
}

impl BatteryInputs<'_> {
    fn fit<T: Scalar>(&self, peaks: &[PeakDate]) -> Result<(Panel, SpecResult<T>)> {
        let panel = build_panel(self.districts, self.metrics, peaks, self.data, self.panel)?;
        let result = run_spec(self.spec, &panel, self.options)?;
        Ok((panel, result))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboRun {
    pub iteration: usize,
    pub seed: u64,
    pub coefficient: Option<f64>,
    pub n: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboReport {
    pub master_seed: u64,
    pub observed: f64,
    pub observed_n: usize,
    pub runs: Vec<PlaceboRun>,
    pub failures: usize,
    /// Placebo coefficients at least as large as the observed one.
    pub at_least_observed: usize,
    /// `(1 + at_least_observed) / (successful runs + 1)`.
    pub p_value: f64,
}

impl PlaceboReport {
    pub fn exceeds_all(&self) -> bool {
        self.at_least_observed == 0 && self.failures < self.runs.len()
    }

    pub fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.runs.iter().filter_map(|r| r.coefficient)
    }

    /// CSV `iteration,seed,coefficient,n,error`; the observed fit is iteration 0.
    pub fn write_csv(&self, path: &Path, preamble: &str) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(preamble.as_bytes()).map_err(io)?;
        writeln!(w, "# observed: {} p_value: {}", self.observed, self.p_value).map_err(io)?;
        writeln!(w, "iteration,seed,coefficient,n,error").map_err(io)?;
        writeln!(w, "0,{},{},{},", self.master_seed, self.observed, self.observed_n).map_err(io)?;
        for r in &self.runs {
            let coef = r.coefficient.map(|c| c.to_string()).unwrap_or_default();
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            writeln!(w, "{},{},{coef},{},{err}", r.iteration, r.seed, r.n).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Seed of placebo iteration `i` (1-based) under `master`.
pub fn placebo_seed(master: u64, iteration: usize) -> u64 {
    derive_seed(master, &format!("placebo-iteration/{iteration}"))
}

/// Refit with a random peak period (1..=12) for every district-year, `iterations`
/// times. Iterations are independent and merged by index, so results do not
/// depend on thread count. Failed fits are recorded and excluded.
pub fn placebo_battery<T: Scalar>(inputs: &BatteryInputs, iterations: usize, master_seed: u64) -> Result<PlaceboReport> {
    let (observed_panel, observed_fit) = inputs.fit::<T>(inputs.peaks)?;
    let observed = high_coefficient(&observed_fit)?.estimate.as_f64();
    let runs: Vec<PlaceboRun> = (1..=iterations)
        .into_par_iter()
        .map(|iteration| {
            let seed = placebo_seed(master_seed, iteration);
            let peaks: Vec<PeakDate> = inputs
                .peaks
                .iter()
                .map(|p| placebo_peak(seed, &p.district_id, p.year))
                .collect();
            match inputs.fit::<T>(&peaks).and_then(|(panel, fit)| Ok((panel.rows.len(), high_coefficient(&fit)?))) {
                Ok((n, c)) => PlaceboRun { iteration, seed, coefficient: Some(c.estimate.as_f64()), n, error: None },
                Err(e) => PlaceboRun { iteration, seed, coefficient: None, n: 0, error: Some(e.to_string()) },
            }
        })
        .collect();
    let failures = runs.iter().filter(|r| r.coefficient.is_none()).count();
    let at_least_observed = runs.iter().filter(|r| r.coefficient.is_some_and(|c| c >= observed)).count();
    let ok = runs.len() - failures;
    Ok(PlaceboReport {
        master_seed,
        observed,
        observed_n: observed_panel.rows.len(),
        runs,
        failures,
        at_least_observed,
        p_value: (1 + at_least_observed) as f64 / (ok + 1) as f64,
    })
}

#[derive(Debug, Clone)]
pub struct PerturbationFit<T> {
    pub delta_days: i32,
    /// Peak dates that hit the calendar-year edge.
    pub clamped: usize,
    pub n: usize,
    pub result: SpecResult<T>,
}

/// Refit with every peak date moved by each of `deltas` days. More than half
/// of the dates clamping at the year edge means the shift is meaningless.
pub fn perturbation_battery<T: Scalar>(inputs: &BatteryInputs, deltas: &[i32]) -> Result<Vec<PerturbationFit<T>>> {
    deltas
        .iter()
        .map(|&delta| {
            let peaks: Vec<PeakDate> = inputs.peaks.iter().map(|p| perturb_peak(p, delta)).collect();
            let clamped = peaks.iter().filter(|p| p.clamped).count();
            if 2 * clamped > peaks.len() {
                return Err(Error::invalid(format!(
                    "a {delta:+}-day shift clamps {clamped} of {} peak dates at the calendar year edge",
                    peaks.len()
                )));
            }
            let (panel, result) = inputs.fit::<T>(&peaks)?;
            Ok(PerturbationFit { delta_days: delta, clamped, n: panel.rows.len(), result })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Subsample<T> {
    Fit(Box<SpecResult<T>>),
    Skipped(String),
}

impl<T> Subsample<T> {
    pub fn fit(&self) -> Option<&SpecResult<T>> {
        match self {
            Subsample::Fit(r) => Some(r),
            Subsample::Skipped(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrecisionSplit<T> {
    pub threshold: f64,
    /// Rows whose modal peak period was chosen by more than `threshold` of pixels.
    pub majority: Subsample<T>,
    pub minority: Subsample<T>,
    /// Rows without an agreement share (e.g. placebo dates), in neither part.
    pub unknown: usize,
}

fn fit_subsample<T: Scalar>(panel: &Panel, spec: SpecId, options: SpecOptions) -> Subsample<T> {
    if panel.rows.is_empty() {
        return Subsample::Skipped("empty subsample".into());
    }
    match run_spec(spec, panel, options) {
        Ok(r) => Subsample::Fit(Box::new(r)),
        Err(e) => Subsample::Skipped(e.to_string()),
    }
}

/// Fit separately on district-years where pixels agree on the peak period
/// (share above `threshold`) and where they do not.
pub fn precision_split<T: Scalar>(panel: &Panel, threshold: f64, spec: SpecId, options: SpecOptions) -> PrecisionSplit<T> {
    let major = filter_panel(panel, |r| r.majority_share.is_some_and(|s| s > threshold));
    let minor = filter_panel(panel, |r| r.majority_share.is_some_and(|s| s <= threshold));
    PrecisionSplit {
        threshold,
        majority: fit_subsample(&major, spec, options),
        minority: fit_subsample(&minor, spec, options),
        unknown: panel.rows.iter().filter(|r| r.majority_share.is_none()).count(),
    }
}

/// Rows of `panel` satisfying `keep`, with their outcome series.
pub fn filter_panel(panel: &Panel, keep: impl Fn(&PanelRow) -> bool) -> Panel {
    let mut out = Panel {
        covariate_names: panel.covariate_names.clone(),
        report: panel.report.clone(),
        ..Default::default()
    };
    for r in &panel.rows {
        if keep(r) {
            out.rows.push(r.clone());
            if let Some(s) = panel.series.iter().find(|s| s.district_id == r.district_id && s.year == r.year) {
                out.series.push(s.clone());
            }
        }
    }
    out.report.emitted = out.rows.len();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Restriction {
    /// Drop district-years cultivating more than this many hectares.
    MaxHectares(f64),
    DropYear(i32),
    /// Keep years strictly before.
    YearsBefore(i32),
    /// Keep this year and later.
    YearsFrom(i32),
    /// Count only pre-peak violence with more than this many events.
    ViolenceEventsAbove(u32),
    /// Count only pre-peak violence with at least this many deaths.
    ViolenceDeathsAtLeast(u32),
    /// Either of the two intensity rules.
    ViolenceEventsOrDeaths(u32, u32),
}

impl Restriction {
    pub fn name(&self) -> String {
        match *self {
            Restriction::MaxHectares(h) => format!("max_{h}_ha"),
            Restriction::DropYear(y) => format!("drop_{y}"),
            Restriction::YearsBefore(y) => format!("before_{y}"),
            Restriction::YearsFrom(y) => format!("from_{y}"),
            Restriction::ViolenceEventsAbove(k) => format!("violence_events_gt_{k}"),
            Restriction::ViolenceDeathsAtLeast(k) => format!("violence_deaths_ge_{k}"),
            Restriction::ViolenceEventsOrDeaths(e, d) => format!("violence_events_gt_{e}_or_deaths_ge_{d}"),
        }
    }

    /// Restricted (and for intensity rules, recoded) panel. Intensity rules zero
    /// the violence counts of rows below the bar, so only intense violence
    /// enters the violence indicator. Emptying the panel is an error.
    pub fn apply(&self, panel: &Panel) -> Result<Panel> {
        let mut out = match *self {
            Restriction::MaxHectares(h) => filter_panel(panel, |r| r.poppy_ha <= h),
            Restriction::DropYear(y) => filter_panel(panel, |r| r.year != y),
            Restriction::YearsBefore(y) => filter_panel(panel, |r| r.year < y),
            Restriction::YearsFrom(y) => filter_panel(panel, |r| r.year >= y),
            _ => filter_panel(panel, |_| true),
        };
        let intense = |r: &PanelRow| match *self {
            Restriction::ViolenceEventsAbove(k) => r.violence_events > k,
            Restriction::ViolenceDeathsAtLeast(k) => r.violence_deaths >= k,
            Restriction::ViolenceEventsOrDeaths(e, d) => r.violence_events > e || r.violence_deaths >= d,
            _ => true,
        };
        for r in &mut out.rows {
            if !intense(r) {
                r.violence_events = 0;
                r.violence_deaths = 0;
            }
        }
        if out.rows.is_empty() {
            return Err(Error::invalid(format!("restriction {} leaves no rows", self.name())));
        }
        Ok(out)
    }

    /// The standard presets for a panel: drop >5000 ha, drop each year, before
    /// and from 2017, and three violence-intensity rules.
    pub fn presets(panel: &Panel) -> Vec<Restriction> {
        let mut years: Vec<i32> = panel.rows.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        let mut out = vec![Restriction::MaxHectares(5000.0)];
        out.extend(years.iter().map(|&y| Restriction::DropYear(y)));
        out.extend([
            Restriction::YearsBefore(2017),
            Restriction::YearsFrom(2017),
            Restriction::ViolenceEventsAbove(2),
            Restriction::ViolenceDeathsAtLeast(10),
            Restriction::ViolenceEventsOrDeaths(2, 10),
        ]);
        out
    }
}

#[derive(Debug, Clone)]
pub struct RestrictionFit<T> {
    pub restriction: String,
    pub spec: SpecId,
    pub n: usize,
    pub removed: usize,
    pub result: Subsample<T>,
}

/// Every restriction crossed with every spec. Restrictions that empty the
/// panel or specs that cannot be fitted are reported as skipped.
pub fn restriction_battery<T: Scalar>(
    panel: &Panel,
    restrictions: &[Restriction],
    specs: &[SpecId],
    options: SpecOptions,
) -> Vec<RestrictionFit<T>> {
    let mut out = Vec::new();
    for r in restrictions {
        let restricted = r.apply(panel);
        for &spec in specs {
            let (n, result) = match &restricted {
                Ok(p) => (p.rows.len(), fit_subsample(p, spec, options)),
                Err(e) => (0, Subsample::Skipped(e.to_string())),
            };
            out.push(RestrictionFit {
                restriction: r.name(),
                spec,
                n,
                removed: panel.rows.len() - n,
                result,
            });
        }
    }
    out
}

/// One line per (variant, spec, term or contrast) of interest: the high
/// coefficient and every contrast.
pub fn write_battery_csv<'a, T: Scalar + 'a>(
    path: &Path,
    preamble: &str,
    fits: impl IntoIterator<Item = (String, SpecId, usize, &'a Subsample<T>)>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(preamble.as_bytes()).map_err(io)?;
    writeln!(w, "variant,spec,n,label,estimate,se,p,ci_lo,ci_hi,status").map_err(io)?;
    for (variant, spec, n, sub) in fits {
        match sub {
            Subsample::Fit(r) => {
                let high = high_coefficient(r).ok();
                for c in high.iter().chain(r.contrasts.iter()) {
                    writeln!(
                        w,
                        "{variant},{spec},{n},{},{},{},{},{},{},ok",
                        c.label, c.estimate, c.se, c.p, c.ci_lo, c.ci_hi
                    )
                    .map_err(io)?;
                }
            }
            Subsample::Skipped(why) => {
                writeln!(w, "{variant},{spec},{n},,,,,,,skipped: {}", why.replace([',', '\n'], ";")).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::day::Day;
    use crate::panel::Cultivation;

    fn row(d: usize, year: i32, high: bool, outcome: f64, events: u32, deaths: u32, share: Option<f64>) -> PanelRow {
        PanelRow {
            district_id: format!("D{d:02}"),
            province_id: format!("P{}", d % 3),
            year,
            t0: Day::from_year_doy(year, 100).unwrap(),
            outcome,
            m_base: 0.02,
            poppy_ha: if high { 1000.0 + 500.0 * d as f64 } else { 0.0 },
            cultivation: if high { Cultivation::High } else { Cultivation::None },
            violence_events: events,
            violence_deaths: deaths,
            road_violence: None,
            taliban: d % 2 == 0,
            eradication_pct: None,
            majority_share: share,
            covariates: Vec::new(),
        }
    }

    fn panel() -> Panel {
        let mut rows = Vec::new();
        for d in 0..12 {
            for (k, y) in [2015, 2016, 2017].into_iter().enumerate() {
                let high = d % 2 == 0;
                let noise = ((d * 7 + k * 3) % 5) as f64 * 0.001;
                let share = Some(if d % 3 == 0 { 0.4 } else { 0.8 });
                rows.push(row(d, y, high, if high { 0.03 } else { 0.0 } + noise, (d % 4) as u32, (d * 3 % 13) as u32, share));
            }
        }
        Panel { rows, ..Default::default() }
    }

    #[test]
    fn restrictions_remove_countable_rows() {
        let p = panel();
        let base = p.rows.len();
        let over = p.rows.iter().filter(|r| r.poppy_ha > 5000.0).count();
        assert_eq!(Restriction::MaxHectares(5000.0).apply(&p).unwrap().rows.len(), base - over);
        assert_eq!(Restriction::DropYear(2016).apply(&p).unwrap().rows.len(), base - 12);
        assert_eq!(Restriction::YearsBefore(2017).apply(&p).unwrap().rows.len(), 24);
        assert_eq!(Restriction::YearsFrom(2017).apply(&p).unwrap().rows.len(), 12);
        assert!(Restriction::YearsFrom(2030).apply(&p).is_err());
        let recoded = Restriction::ViolenceEventsAbove(2).apply(&p).unwrap();
        assert_eq!(recoded.rows.len(), base);
        assert!(recoded.rows.iter().all(|r| r.violence_events == 0 || r.violence_events > 2));
        let either = Restriction::ViolenceEventsOrDeaths(2, 10).apply(&p).unwrap();
        for (a, b) in either.rows.iter().zip(&p.rows) {
            assert_eq!(a.violence(), b.violence_events > 0 && (b.violence_events > 2 || b.violence_deaths >= 10));
        }
    }

    #[test]
    fn single_year_drops_the_year_effect() {
        let p = Restriction::YearsFrom(2017).apply(&panel()).unwrap();
        let r = run_spec::<f64>(SpecId::Cultivation, &p, SpecOptions::default()).unwrap();
        assert!(!r.fit.names.iter().any(|n| n.starts_with("year[")));
        let fits = restriction_battery::<f64>(&panel(), &Restriction::presets(&panel()), &[SpecId::Cultivation], SpecOptions::default());
        for f in &fits {
            if let Some(r) = f.result.fit() {
                assert!(high_coefficient(r).unwrap().estimate > 0.0, "{}", f.restriction);
            }
        }
    }

    #[test]
    fn precision_split_partitions_rows() {
        let p = panel();
        let s = precision_split::<f64>(&p, 0.5, SpecId::Cultivation, SpecOptions::default());
        let (a, b) = (s.majority.fit().unwrap(), s.minority.fit().unwrap());
        assert_eq!(a.fit.n + b.fit.n, p.rows.len());
        // threshold 0 puts every row in the majority part
        let all = precision_split::<f64>(&p, 0.0, SpecId::Cultivation, SpecOptions::default());
        assert_eq!(all.majority.fit().unwrap().fit.n, p.rows.len());
        assert!(matches!(all.minority, Subsample::Skipped(_)));
    }
}
