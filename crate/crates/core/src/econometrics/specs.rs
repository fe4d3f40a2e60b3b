//! The named regression specifications on the district-year panel and their
//! contrast tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::econometrics::design::DesignBuilder;
use crate::econometrics::ols::{coefficient, contrast, fit_ols_with, CiMethod, Contrast, FitResult};
use crate::error::{Error, Result};
use crate::panel::{Cultivation, Panel, PanelRow};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecId {
    /// Outcome on high/low cultivation dummies.
    Cultivation,
    /// Outcome on log(1 + poppy hectares).
    LogHectares,
    /// Cultivation × pre-peak violence × Taliban presence, fully interacted.
    Conflict,
    /// Adds road violence and its interactions with cultivation and Taliban presence.
    RoadConflict,
    /// Cultivation × eradication share.
    Eradication,
}

impl SpecId {
    pub const ALL: [SpecId; 5] = [
        SpecId::Cultivation,
        SpecId::LogHectares,
        SpecId::Conflict,
        SpecId::RoadConflict,
        SpecId::Eradication,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpecId::Cultivation => "cultivation",
            SpecId::LogHectares => "log_hectares",
            SpecId::Conflict => "conflict",
            SpecId::RoadConflict => "road_conflict",
            SpecId::Eradication => "eradication",
        }
    }
}

impl fmt::Display for SpecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown specification {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecOptions {
    /// Include the panel's covariates as controls.
    pub controls: bool,
    pub ci: CiMethod,
}

impl Default for SpecOptions {
    fn default() -> Self {
        Self { controls: true, ci: CiMethod::Normal }
    }
}

pub const HIGH: &str = "high";
pub const LOW: &str = "low";
pub const VIOLENCE: &str = "violence";
pub const ROAD: &str = "road_violence";
pub const TALIBAN: &str = "taliban";
pub const ERADICATION: &str = "eradication";
pub const LOG_HA: &str = "log_poppy_ha";

/// Factor indicators for one row, keyed by factor name.
fn factors(r: &PanelRow) -> BTreeMap<&'static str, f64> {
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    let mut m = BTreeMap::new();
    m.insert(HIGH, b(r.high()));
    m.insert(LOW, b(r.low()));
    m.insert(VIOLENCE, b(r.violence()));
    m.insert(ROAD, b(r.road_violence.unwrap_or(false)));
    m.insert(TALIBAN, b(r.taliban));
    m.insert(ERADICATION, r.eradication_pct.unwrap_or(0.0));
    m
}

/// Model terms in display order; each term is a product of factors.
pub fn terms(spec: SpecId) -> Vec<Vec<&'static str>> {
    let t = |f: &[&'static str]| f.to_vec();
    match spec {
        SpecId::Cultivation => vec![t(&[HIGH]), t(&[LOW])],
        SpecId::LogHectares => Vec::new(),
        SpecId::Conflict => vec![
            t(&[HIGH]),
            t(&[LOW]),
            t(&[VIOLENCE]),
            t(&[TALIBAN]),
            t(&[HIGH, VIOLENCE]),
            t(&[LOW, VIOLENCE]),
            t(&[HIGH, TALIBAN]),
            t(&[LOW, TALIBAN]),
            t(&[VIOLENCE, TALIBAN]),
            t(&[HIGH, VIOLENCE, TALIBAN]),
            t(&[LOW, VIOLENCE, TALIBAN]),
        ],
        SpecId::RoadConflict => vec![
            t(&[HIGH]),
            t(&[LOW]),
            t(&[VIOLENCE]),
            t(&[ROAD]),
            t(&[TALIBAN]),
            t(&[HIGH, VIOLENCE]),
            t(&[LOW, VIOLENCE]),
            t(&[HIGH, ROAD]),
            t(&[LOW, ROAD]),
            t(&[HIGH, TALIBAN]),
            t(&[LOW, TALIBAN]),
            t(&[VIOLENCE, TALIBAN]),
            t(&[ROAD, TALIBAN]),
            t(&[HIGH, VIOLENCE, TALIBAN]),
            t(&[LOW, VIOLENCE, TALIBAN]),
            t(&[HIGH, ROAD, TALIBAN]),
            t(&[LOW, ROAD, TALIBAN]),
        ],
        SpecId::Eradication => vec![
            t(&[HIGH]),
            t(&[LOW]),
            t(&[ERADICATION]),
            t(&[LOW, ERADICATION]),
            t(&[HIGH, ERADICATION]),
        ],
    }
}

pub fn term_name(factors: &[&str]) -> String {
    factors.join(":")
}

/// Rows a specification can use, or the variables it lacks.
fn usable_rows<'a>(spec: SpecId, rows: &'a [PanelRow]) -> Result<Vec<&'a PanelRow>> {
    match spec {
        SpecId::RoadConflict => {
            if rows.iter().any(|r| r.road_violence.is_none()) {
                return Err(Error::MissingVariables { spec: spec.to_string(), names: vec![ROAD.into()] });
            }
            Ok(rows.iter().collect())
        }
        SpecId::Eradication => {
            let with: Vec<&PanelRow> = rows.iter().filter(|r| r.eradication_pct.is_some()).collect();
            if with.is_empty() {
                return Err(Error::MissingVariables { spec: spec.to_string(), names: vec![ERADICATION.into()] });
            }
            Ok(with)
        }
        _ => Ok(rows.iter().collect()),
    }
}

/// Assigns dense cluster ids (one per district).
fn cluster_ids(rows: &[&PanelRow]) -> Vec<u32> {
    let mut ids: BTreeMap<&str, u32> = BTreeMap::new();
    for r in rows {
        let next = ids.len() as u32;
        ids.entry(r.district_id.as_str()).or_insert(next);
    }
    rows.iter().map(|r| ids[r.district_id.as_str()]).collect()
}

/// Regression design for `spec`: intercept, model terms, optional controls,
/// province and year fixed effects. Returns the design and dropped all-zero columns.
pub fn build_design<T: Scalar>(
    spec: SpecId,
    panel: &Panel,
    options: SpecOptions,
) -> Result<(crate::econometrics::ols::DesignMatrix<T>, Vec<String>)> {
    let rows = usable_rows(spec, &panel.rows)?;
    let n = rows.len();
    let table: Vec<BTreeMap<&str, f64>> = rows.iter().map(|r| factors(r)).collect();
    let mut b = DesignBuilder::<T>::new(n).intercept();
    if spec == SpecId::LogHectares {
        b = b.column(LOG_HA, rows.iter().map(|r| T::lit(r.poppy_ha.ln_1p())).collect());
    }
    for term in terms(spec) {
        let col = table
            .iter()
            .map(|f| T::lit(term.iter().map(|name| f[name]).product()))
            .collect();
        b = b.column(term_name(&term), col);
    }
    if options.controls {
        for (j, name) in panel.covariate_names.iter().enumerate() {
            b = b.column(format!("cov:{name}"), rows.iter().map(|r| T::lit(r.covariates[j])).collect());
        }
    }
    let provinces: Vec<String> = rows.iter().map(|r| r.province_id.clone()).collect();
    let years: Vec<String> = rows.iter().map(|r| r.year.to_string()).collect();
    b = b.fixed_effects("province", &provinces).fixed_effects("year", &years);
    let dropped = b.dropped.clone();
    let y = rows.iter().map(|r| T::lit(r.outcome)).collect();
    Ok((b.build(y, cluster_ids(&rows))?, dropped))
}

/// A group defined by cultivation level and active binary factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub cultivation: Cultivation,
    pub active: Vec<&'static str>,
}

impl Cell {
    pub fn label(&self, factors: &[(&'static str, &'static str)]) -> String {
        let mut s = self.cultivation.as_str().to_owned();
        for &(f, short) in factors {
            s.push_str(&format!("_{short}{}", self.active.contains(&f) as u8));
        }
        s
    }

    fn all_active(&self) -> Vec<&'static str> {
        let mut v = self.active.clone();
        match self.cultivation {
            Cultivation::High => v.push(HIGH),
            Cultivation::Low => v.push(LOW),
            Cultivation::None => {}
        }
        v
    }

    /// Model terms whose factors are all active in this cell.
    pub fn terms(&self, spec: SpecId) -> Vec<String> {
        let active = self.all_active();
        terms(spec)
            .into_iter()
            .filter(|t| t.iter().all(|f| active.contains(f)))
            .map(|t| term_name(&t))
            .collect()
    }
}

/// Binary factors crossed with cultivation for a spec's group contrasts.
pub fn cell_factors(spec: SpecId) -> Vec<(&'static str, &'static str)> {
    match spec {
        SpecId::Conflict => vec![(VIOLENCE, "v"), (TALIBAN, "t")],
        SpecId::RoadConflict => vec![(ROAD, "rv"), (TALIBAN, "t")],
        _ => Vec::new(),
    }
}

/// Every cultivation × factor cell except the reference (no cultivation, no factors).
pub fn cells(spec: SpecId) -> Vec<Cell> {
    let factors = cell_factors(spec);
    let mut out = Vec::new();
    for cult in [Cultivation::High, Cultivation::Low, Cultivation::None] {
        for mask in 0..(1u32 << factors.len()) {
            if cult == Cultivation::None && mask == 0 {
                continue;
            }
            let active = factors
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, f)| f.0)
                .collect();
            out.push(Cell { cultivation: cult, active });
        }
    }
    out
}

/// Eradication shares at which the high-cultivation effect is reported.
pub const ERADICATION_LEVELS: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecResult<T> {
    pub spec: SpecId,
    pub fit: FitResult<T>,
    pub dropped_columns: Vec<String>,
    pub contrasts: Vec<Contrast<T>>,
    /// Contrasts that could not be formed (e.g. an empty cell), with reasons.
    pub skipped_contrasts: Vec<(String, String)>,
}

impl<T: Scalar> SpecResult<T> {
    pub fn contrast(&self, label: &str) -> Option<&Contrast<T>> {
        self.contrasts.iter().find(|c| c.label == label)
    }

    pub fn coefficient(&self, term: &str) -> Option<T> {
        self.fit.coef(term)
    }
}

/// Fit `spec` on the panel and compute its contrast table.
pub fn run_spec<T: Scalar>(spec: SpecId, panel: &Panel, options: SpecOptions) -> Result<SpecResult<T>> {
    let (design, dropped) = build_design::<T>(spec, panel, options)?;
    let fit = fit_ols_with(&design, options.ci)?;
    let mut contrasts = Vec::new();
    let mut skipped = Vec::new();
    let mut push = |label: String, weights: Result<Vec<T>>| match weights.and_then(|w| contrast(&fit, &w, &label)) {
        Ok(c) => contrasts.push(c),
        Err(e) => skipped.push((label, e.to_string())),
    };
    match spec {
        SpecId::Cultivation => {
            for t in [HIGH, LOW] {
                push(t.to_owned(), fit.weights(&[t]));
            }
        }
        SpecId::LogHectares => push(LOG_HA.to_owned(), fit.weights(&[LOG_HA])),
        SpecId::Conflict | SpecId::RoadConflict => {
            let factors = cell_factors(spec);
            for cell in cells(spec) {
                let terms = cell.terms(spec);
                let label = cell.label(&factors);
                if let Some(t) = terms.iter().find(|t| dropped.contains(t)) {
                    push(label, Err(Error::invalid(format!("no observations for term {t}"))));
                    continue;
                }
                let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
                push(label, fit.weights(&refs));
            }
        }
        SpecId::Eradication => {
            for t in terms(spec) {
                let name = term_name(&t);
                push(name.clone(), fit.weights(&[&name]));
            }
            let inter = term_name(&[HIGH, ERADICATION]);
            for level in ERADICATION_LEVELS {
                let label = format!("high_at_eradication_{level}");
                let w = fit.weights(&[HIGH]).and_then(|mut w| {
                    let j = fit.index(&inter).ok_or_else(|| Error::invalid(format!("no coefficient named {inter}")))?;
                    w[j] = T::lit(level);
                    Ok(w)
                });
                push(label, w);
            }
        }
    }
    Ok(SpecResult { spec, fit, dropped_columns: dropped, contrasts, skipped_contrasts: skipped })
}

/// The headline coefficient of a spec (β̂ on high cultivation), as a contrast.
pub fn high_coefficient<T: Scalar>(result: &SpecResult<T>) -> Result<Contrast<T>> {
    coefficient(&result.fit, HIGH)
}
