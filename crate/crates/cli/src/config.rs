use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use harvest_migration::econometrics::ols::CiMethod;
use harvest_migration::econometrics::specs::{SpecId, SpecOptions};
use harvest_migration::metrics::{Measure, MetricsConfig};
use harvest_migration::panel::{OutcomeVariant, PanelConfig, DEFAULT_HIGH_HA};
use harvest_migration::residence::SegmentParams;
use harvest_migration::{Day, StudyRange};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub districts: PathBuf,
    pub towers: PathBuf,
    pub events: Vec<PathBuf>,
    pub ndvi: PathBuf,
    /// `district_id,year,poppy_ha`.
    pub cultivation: PathBuf,
    /// `district_id,year,eradicated_ha`.
    pub eradication: Option<PathBuf>,
    pub control: PathBuf,
    pub covariates: Option<PathBuf>,
    pub violence: PathBuf,
    /// Needed only for the road-violence specification.
    pub roads: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phenology {
    pub threshold: f64,
}

impl Default for Phenology {
    fn default() -> Self {
        Self { threshold: 0.3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Robustness {
    pub placebo_iterations: usize,
    pub perturbation_days: i32,
    pub precision_threshold: f64,
    /// Outcome variants rerun with the first spec.
    pub variants: Vec<String>,
}

impl Default for Robustness {
    fn default() -> Self {
        Self {
            placebo_iterations: 250,
            perturbation_days: 14,
            precision_threshold: 0.5,
            variants: OutcomeVariant::NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Figures {
    /// Year of the origin-destination matrix; the first study year when unset.
    pub od_year: Option<i32>,
    pub od_clip: f64,
    pub histogram_bin: f64,
}

impl Default for Figures {
    fn default() -> Self {
        Self { od_year: None, od_clip: 0.025, histogram_bin: 0.0025 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Totals {
    pub population_covariate: String,
}

impl Default for Totals {
    fn default() -> Self {
        Self { population_covariate: "population".into() }
    }
}

fn default_shards() -> u32 {
    64
}

fn default_seed() -> u64 {
    1
}

fn default_outcomes() -> Vec<String> {
    vec!["in_rate".into()]
}

fn default_specs() -> Vec<String> {
    vec!["cultivation".into(), "conflict".into()]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    /// Output directory. Not part of the fingerprint.
    pub output: PathBuf,
    /// First and last study day, `YYYY-MM-DD`.
    pub study_start: String,
    pub study_end: String,
    #[serde(default = "default_shards")]
    pub shards: u32,
    /// Master seed for placebo draws.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub residence: SegmentParams,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub phenology: Phenology,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_high_ha")]
    pub high_ha: f64,
    /// Outcome measures; each gets its own panel and fits.
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<String>,
    #[serde(default = "default_specs")]
    pub specs: Vec<String>,
    #[serde(default = "default_true")]
    pub controls: bool,
    #[serde(default)]
    pub ci: CiMethod,
    #[serde(default)]
    pub robustness: Robustness,
    #[serde(default)]
    pub figures: Figures,
    #[serde(default)]
    pub totals: Totals,
}

fn default_variant() -> String {
    "default".into()
}

fn default_high_ha() -> f64 {
    DEFAULT_HIGH_HA
}

/// A problem with the configuration itself, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn parse_spec(s: &str) -> Option<SpecId> {
    SpecId::ALL.into_iter().find(|id| id.as_str() == s)
}

impl RunConfig {
    /// Reads TOML, rejecting unknown keys, and resolves relative paths against
    /// the config file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.districts, &mut i.towers, &mut i.ndvi, &mut i.cultivation, &mut i.control, &mut i.violence] {
            fix(p);
        }
        for p in [&mut i.eradication, &mut i.covariates, &mut i.roads].into_iter().flatten() {
            fix(p);
        }
        i.events.iter_mut().for_each(fix);
        fix(&mut self.output);
    }

    /// Semantic checks and input existence, before any work is done.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.range() {
            problems.push(e.to_string());
        }
        if self.shards == 0 {
            problems.push("shards must be positive".into());
        }
        if self.inputs.events.is_empty() {
            problems.push("inputs.events is empty".into());
        }
        if OutcomeVariant::preset(&self.variant).is_none() {
            problems.push(format!("unknown variant {:?}", self.variant));
        }
        for v in &self.robustness.variants {
            if OutcomeVariant::preset(v).is_none() {
                problems.push(format!("unknown robustness variant {v:?}"));
            }
        }
        for o in &self.outcomes {
            if Measure::parse(o).is_none() {
                problems.push(format!("unknown outcome {o:?}"));
            }
        }
        if self.specs.is_empty() {
            problems.push("specs is empty".into());
        }
        for s in &self.specs {
            if parse_spec(s).is_none() {
                problems.push(format!("unknown spec {s:?}"));
            }
        }
        if self.specs.iter().any(|s| s == "road_conflict") && self.inputs.roads.is_none() {
            problems.push("spec road_conflict needs inputs.roads".into());
        }
        if self.specs.iter().any(|s| s == "eradication") && self.inputs.eradication.is_none() {
            problems.push("spec eradication needs inputs.eradication".into());
        }
        if !(self.high_ha > 0.0) {
            problems.push("high_ha must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.robustness.precision_threshold) {
            problems.push("robustness.precision_threshold must be in [0, 1]".into());
        }
        let i = &self.inputs;
        let required = [&i.districts, &i.towers, &i.ndvi, &i.cultivation, &i.control, &i.violence];
        let optional = [&i.eradication, &i.covariates, &i.roads];
        for p in required.into_iter().chain(optional.into_iter().flatten()).chain(&i.events) {
            if !p.is_file() {
                problems.push(format!("missing input {}", p.display()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config_error(problems.join("\n")))
        }
    }

    pub fn range(&self) -> anyhow::Result<StudyRange> {
        let start: Day = self.study_start.parse().map_err(|_| config_error(format!("bad study_start {:?}", self.study_start)))?;
        let end: Day = self.study_end.parse().map_err(|_| config_error(format!("bad study_end {:?}", self.study_end)))?;
        if start > end {
            bail!(config_error("study_start is after study_end"));
        }
        Ok(StudyRange::new(start, end))
    }

    pub fn spec_ids(&self) -> Vec<SpecId> {
        self.specs.iter().filter_map(|s| parse_spec(s)).collect()
    }

    pub fn spec_options(&self) -> SpecOptions {
        SpecOptions { controls: self.controls, ci: self.ci }
    }

    pub fn panel_config(&self, outcome: &str) -> PanelConfig {
        PanelConfig { variant: self.variant.clone(), outcome: outcome.into(), high_ha: self.high_ha }
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output");
        let canonical = serde_json::to_string(&v).expect("json");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// First lines of every CSV output.
    pub fn preamble(&self) -> String {
        format!("# fingerprint: {}\n", self.fingerprint())
    }

    pub fn write_toml(&self, path: &Path) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self).context("serialize config")?;
        std::fs::write(path, text).with_context(|| format!("write {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output = "out"
study_start = "2015-01-01"
study_end = "2015-12-31"
[inputs]
districts = "d.geojson"
towers = "t.csv"
events = ["e.csv"]
ndvi = "n.csv"
cultivation = "c.csv"
control = "k.csv"
violence = "v.csv"
"#;

    #[test]
    fn defaults_and_fingerprint() {
        let a: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(a.shards, 64);
        assert_eq!(a.robustness.placebo_iterations, 250);
        let mut b = a.clone();
        b.output = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 2;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nbogus = 1\n");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
        let nested = MINIMAL.replace("[inputs]", "[residence]\nmin_days = 7\nmax_gap = 3\nwobble = 2\n[inputs]");
        assert!(toml::from_str::<RunConfig>(&nested).is_err());
    }
}
