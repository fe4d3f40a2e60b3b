//! Stage runner for `hmig run`, plus loaders shared by the other subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use harvest_migration::econometrics::output::{write_fit_csv, write_fit_json};
use harvest_migration::econometrics::specs::run_spec;
use harvest_migration::ingest::geometry::Districts;
use harvest_migration::ingest::shard::ingest_to_shards;
use harvest_migration::ingest::towers::{read_towers, TowerRegistry};
use harvest_migration::metrics::{MetricsConfig, MetricsTable, SourceClassMap};
use harvest_migration::panel::{build_panel, read_control_csv, read_district_year_csv, Covariates, Panel, PanelData};
use harvest_migration::phenology::{estimate_peaks, read_ndvi_csv, read_peaks_csv, write_peaks_csv, PeakDate};
use harvest_migration::pipeline::{metrics_from_segments, source_class_map};
use harvest_migration::residence::residence_stage;
use harvest_migration::spatial::roads::{entry_roads, RoadNetwork, ENTRY_BUFFER_KM};
use harvest_migration::spatial::violence::{read_events_csv, RoadEventFilter};
use harvest_migration::{SpecFitF64, StudyRange};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Ingest,
    Residence,
    Metrics,
    Phenology,
    Panel,
    Fit,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Residence, Stage::Metrics, Stage::Phenology, Stage::Panel, Stage::Fit];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Residence => "residence",
            Stage::Metrics => "metrics",
            Stage::Phenology => "phenology",
            Stage::Panel => "panel",
            Stage::Fit => "fit",
        }
    }
}

/// Output layout under the configured output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn events(&self) -> PathBuf {
        self.root.join("ingest")
    }
    pub fn residence(&self) -> PathBuf {
        self.root.join("residence")
    }
    fn stages(&self) -> PathBuf {
        self.root.join("stages")
    }
    fn marker(&self, s: Stage, ext: &str) -> PathBuf {
        self.stages().join(format!("{}.{ext}", s.name()))
    }
    pub fn peaks(&self) -> PathBuf {
        self.root.join("peaks.csv")
    }
    pub fn panel(&self, outcome: &str) -> PathBuf {
        self.root.join(format!("panel_{}.csv", file_tag(outcome)))
    }
    pub fn dir(&self, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d).with_context(|| format!("create {}", d.display()))?;
        Ok(d)
    }

    pub fn is_done(&self, s: Stage, fingerprint: &str) -> bool {
        fs::read_to_string(self.marker(s, "done")).is_ok_and(|f| f.trim() == fingerprint)
    }

    fn mark(&self, s: Stage, ext: &str, body: &str) -> anyhow::Result<()> {
        fs::create_dir_all(self.stages())?;
        fs::write(self.marker(s, ext), body).with_context(|| format!("write marker for {}", s.name()))
    }

    fn clear(&self, s: Stage) {
        let _ = fs::remove_file(self.marker(s, "done"));
        let _ = fs::remove_file(self.marker(s, "failed"));
    }

    /// Fails unless every stage up to `s` completed under this fingerprint.
    pub fn require(&self, s: Stage, fingerprint: &str) -> anyhow::Result<()> {
        for st in Stage::ALL.into_iter().filter(|&st| st <= s) {
            if !self.is_done(st, fingerprint) {
                bail!("stage {} has not completed for this configuration; run `hmig run` first", st.name());
            }
        }
        Ok(())
    }
}

pub fn file_tag(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

/// Static inputs shared by every stage after ingest.
pub struct Context {
    pub cfg: RunConfig,
    pub fingerprint: String,
    pub preamble: String,
    pub range: StudyRange,
    pub districts: Districts,
    pub registry: TowerRegistry,
    pub data: PanelData,
    pub layout: Layout,
}

impl Context {
    pub fn load(cfg: RunConfig, with_roads: bool) -> anyhow::Result<Self> {
        let i = &cfg.inputs;
        let districts = Districts::read_geojson(&i.districts)?;
        let towers = read_towers(&i.towers)?;
        let registry = TowerRegistry::new(&towers, &districts)?;
        let roads = match (&i.roads, with_roads) {
            (Some(p), true) => Some(entry_roads(&districts, &RoadNetwork::read_geojson(p)?, ENTRY_BUFFER_KM)),
            _ => None,
        };
        let data = PanelData {
            cultivation: read_district_year_csv(&i.cultivation, "poppy_ha")?,
            eradication: i.eradication.as_deref().map(|p| read_district_year_csv(p, "eradicated_ha")).transpose()?,
            control: read_control_csv(&i.control)?,
            covariates: i.covariates.as_deref().map(Covariates::read_csv).transpose()?,
            events: read_events_csv(&i.violence)?,
            roads,
            road_filter: RoadEventFilter::default(),
        };
        Ok(Self {
            fingerprint: cfg.fingerprint(),
            preamble: cfg.preamble(),
            range: cfg.range()?,
            layout: Layout::new(&cfg.output),
            cfg,
            districts,
            registry,
            data,
        })
    }

    pub fn needs_roads(cfg: &RunConfig) -> bool {
        cfg.specs.iter().any(|s| s == "road_conflict")
    }

    pub fn classes(&self) -> anyhow::Result<SourceClassMap> {
        Ok(source_class_map(
            self.range,
            &self.districts,
            &self.data.cultivation,
            &self.data.control,
            &self.data.events,
            self.cfg.high_ha,
        )?)
    }

    /// District-day metrics from the residence stage's segments.
    pub fn metrics(&self, lag: u32) -> anyhow::Result<MetricsTable> {
        let classes = self.classes()?;
        let config = MetricsConfig { lag, ..self.cfg.metrics };
        Ok(metrics_from_segments(&self.layout.residence(), self.cfg.shards, &self.districts, self.range, config, Some(&classes))?)
    }

    pub fn peaks(&self) -> anyhow::Result<Vec<PeakDate>> {
        Ok(read_peaks_csv(&self.layout.peaks())?)
    }

    pub fn build_panel(&self, metrics: &MetricsTable, peaks: &[PeakDate], outcome: &str) -> anyhow::Result<Panel> {
        Ok(build_panel(&self.districts, metrics, peaks, &self.data, &self.cfg.panel_config(outcome))?)
    }

    pub fn fit_all(&self, panel: &Panel) -> Vec<(String, anyhow::Result<SpecFitF64>)> {
        self.cfg
            .spec_ids()
            .into_iter()
            .map(|s| (s.as_str().to_string(), run_spec::<f64>(s, panel, self.cfg.spec_options()).map_err(Into::into)))
            .collect()
    }
}

/// Runs the pipeline from the first incomplete stage (or `from`), writing a
/// completion marker after each stage and a failure marker on error.
pub fn run(cfg: RunConfig, from: Option<Stage>) -> anyhow::Result<String> {
    let fingerprint = cfg.fingerprint();
    let layout = Layout::new(&cfg.output);
    fs::create_dir_all(&layout.root).with_context(|| format!("create {}", layout.root.display()))?;
    let first_missing = Stage::ALL.into_iter().find(|&s| !layout.is_done(s, &fingerprint));
    let start = match (from, first_missing) {
        (Some(f), Some(m)) if f > m => bail!("cannot start at {}: stage {} has not completed", f.name(), m.name()),
        (Some(f), _) => f,
        (None, Some(m)) => m,
        (None, None) => {
            let summary = fs::read_to_string(layout.root.join("summary.txt")).unwrap_or_default();
            return Ok(format!("all stages complete for fingerprint {fingerprint}\n{summary}"));
        }
    };
    for s in Stage::ALL.into_iter().filter(|&s| s >= start) {
        layout.clear(s);
    }
    let with_roads = Context::needs_roads(&cfg);
    let ctx = Context::load(cfg, with_roads)?;
    let mut state = State::default();
    for s in Stage::ALL.into_iter().filter(|&s| s >= start) {
        eprintln!("[{}] running", s.name());
        match run_stage(&ctx, s, &mut state) {
            Ok(()) => layout.mark(s, "done", &format!("{fingerprint}\n"))?,
            Err(e) => {
                layout.mark(s, "failed", &format!("{fingerprint}\n{e:#}\n"))?;
                return Err(e.context(format!("stage {} failed", s.name())));
            }
        }
    }
    Ok(state.summary)
}

#[derive(Default)]
struct State {
    metrics: Option<MetricsTable>,
    peaks: Option<Vec<PeakDate>>,
    panels: Vec<(String, Panel)>,
    summary: String,
}

fn run_stage(ctx: &Context, stage: Stage, st: &mut State) -> anyhow::Result<()> {
    let cfg = &ctx.cfg;
    let layout = &ctx.layout;
    match stage {
        Stage::Ingest => {
            let root = layout.events();
            if root.exists() {
                fs::remove_dir_all(&root).with_context(|| format!("clear {}", root.display()))?;
            }
            let report = ingest_to_shards(&cfg.inputs.events, &ctx.registry, ctx.range, &root, cfg.shards)?;
            report.write_csv(&layout.root.join("rejections.csv"), &ctx.preamble)?;
            eprintln!("[ingest] {} rows rejected", report.rejected());
        }
        Stage::Residence => {
            let s = residence_stage(&layout.events(), &layout.residence(), cfg.shards, &ctx.districts, cfg.residence)?;
            let json = serde_json::json!({
                "fingerprint": ctx.fingerprint,
                "subscribers": s.subscribers,
                "subscribers_with_segments": s.subscribers_with_segments,
                "events": s.events,
                "daily_locations": s.daily_locations,
                "segments": s.segments,
            });
            fs::write(layout.root.join("residence_summary.json"), serde_json::to_string_pretty(&json)? + "\n")?;
        }
        Stage::Metrics => {
            let m = ctx.metrics(cfg.metrics.lag)?;
            m.write_csv(&layout.root.join("metrics.csv"), &ctx.districts, &ctx.preamble)?;
            st.metrics = Some(m);
        }
        Stage::Phenology => {
            let ndvi = read_ndvi_csv::<f64>(&cfg.inputs.ndvi)?;
            let (peaks, excluded) = estimate_peaks(&ndvi, cfg.phenology.threshold);
            write_peaks_csv(&layout.peaks(), &peaks, &ctx.preamble)?;
            let mut text = ctx.preamble.clone();
            text.push_str("district_id,year,pixels,reason\n");
            for e in &excluded {
                writeln!(text, "{},{},{},{}", e.district_id, e.year, e.pixels, e.reason)?;
            }
            fs::write(layout.root.join("peak_exclusions.csv"), text)?;
            st.peaks = Some(peaks);
        }
        Stage::Panel => {
            let metrics = match st.metrics.take() {
                Some(m) => m,
                None => ctx.metrics(cfg.metrics.lag)?,
            };
            let peaks = match st.peaks.take() {
                Some(p) => p,
                None => ctx.peaks()?,
            };
            for outcome in &cfg.outcomes {
                let panel = ctx.build_panel(&metrics, &peaks, outcome)?;
                panel.write_csv(&layout.panel(outcome), &ctx.preamble)?;
                let drops = layout.root.join(format!("panel_drops_{}.csv", file_tag(outcome)));
                panel.report.write_csv(&drops, &ctx.preamble)?;
                st.panels.push((outcome.clone(), panel));
            }
        }
        Stage::Fit => {
            if st.panels.is_empty() {
                for outcome in &cfg.outcomes {
                    st.panels.push((outcome.clone(), Panel::read_csv(&layout.panel(outcome))?));
                }
            }
            let dir = layout.dir("fits")?;
            let mut summary = format!("fingerprint {}\n", ctx.fingerprint);
            let mut failures = Vec::new();
            for (outcome, panel) in &st.panels {
                let dropped = panel.report.candidates.saturating_sub(panel.rows.len());
                writeln!(summary, "\noutcome {outcome}: {} rows kept, {dropped} dropped", panel.rows.len())?;
                for (reason, n) in panel.report.reasons() {
                    writeln!(summary, "  dropped {reason}: {n}")?;
                }
                for (spec, fit) in ctx.fit_all(panel) {
                    let tag = format!("{}_{}", file_tag(outcome), spec);
                    match fit {
                        Ok(r) => {
                            write_fit_csv(&dir.join(format!("{tag}.csv")), &r, &ctx.preamble)?;
                            write_fit_json(&dir.join(format!("{tag}.json")), &r, &ctx.fingerprint)?;
                            summary.push_str(&summary_table(&spec, &r));
                        }
                        Err(e) => {
                            writeln!(summary, "  spec {spec}: FAILED {e:#}")?;
                            failures.push(format!("{outcome}/{spec}: {e:#}"));
                        }
                    }
                }
            }
            fs::write(layout.root.join("summary.txt"), &summary)?;
            st.summary = summary;
            if !failures.is_empty() {
                return Err(anyhow!("fits failed: {}", failures.join("; ")));
            }
        }
    }
    Ok(())
}

pub fn summary_table(spec: &str, r: &SpecFitF64) -> String {
    let mut s = format!("  spec {spec}: N={} G={} R2={:.4}\n", r.fit.n, r.fit.g, r.fit.r2);
    let _ = writeln!(s, "    {:<40} {:>10} {:>10} {:>8} {:>22}", "term", "estimate", "se", "p", "95% CI");
    for name in r.fit.names.iter().filter(|n| !n.starts_with('(') && !n.contains('[')) {
        if let Ok(c) = harvest_migration::econometrics::ols::coefficient(&r.fit, name) {
            let _ = writeln!(s, "    {:<40} {:>10.5} {:>10.5} {:>8.4} [{:>9.5}, {:>9.5}]", name, c.estimate, c.se, c.p, c.ci_lo, c.ci_hi);
        }
    }
    // contrasts named after a single term repeat that term's row
    for c in r.contrasts.iter().filter(|c| r.fit.index(&c.label).is_none()) {
        let _ = writeln!(s, "    {:<40} {:>10.5} {:>10.5} {:>8.4} [{:>9.5}, {:>9.5}]", c.label, c.estimate, c.se, c.p, c.ci_lo, c.ci_hi);
    }
    s
}
