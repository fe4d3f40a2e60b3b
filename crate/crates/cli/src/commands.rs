use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context as _};
use harvest_migration::econometrics::specs::{high_coefficient, run_spec, SpecId};
use harvest_migration::figures::{
    group_series, migration_histograms, migrant_totals, od_order, write_coefficients_csv, write_histograms_csv,
    write_series_csv, OdAccumulator, SERIES_SPAN,
};
use harvest_migration::panel::{classify_cultivation_with, Cultivation, OutcomeVariant, Panel, PanelConfig};
use harvest_migration::residence::{read_segments, segment_shard_path};
use harvest_migration::robustness::{
    perturbation_battery, placebo_battery, precision_split, restriction_battery, write_battery_csv, BatteryInputs,
    Restriction, Subsample,
};
use harvest_migration::synth::{World, WorldConfig};
use rayon::prelude::*;

use crate::config::{config_error, Figures, Inputs, RunConfig};
use crate::stages::{file_tag, Context, Stage};

/// Writes a synthetic world and a ready-to-run `run.toml` next to it.
pub fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> anyhow::Result<String> {
    let mut wc = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<WorldConfig>(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => WorldConfig::default(),
    };
    if let Some(s) = seed {
        wc.seed = s;
    }
    wc.validate().map_err(|e| config_error(e.to_string()))?;
    let world = World::generate(&wc)?;
    let files = world.write_files(out)?;
    let rel = |p: &Path| p.strip_prefix(out).unwrap_or(p).to_path_buf();
    let run = RunConfig {
        inputs: Inputs {
            districts: rel(&files.districts),
            towers: rel(&files.towers),
            events: files.events.iter().map(|p| rel(p)).collect(),
            ndvi: rel(&files.ndvi),
            cultivation: rel(&files.cultivation),
            eradication: Some(rel(&files.eradication)),
            control: rel(&files.control),
            covariates: Some(rel(&files.covariates)),
            violence: rel(&files.violence),
            roads: Some(rel(&files.roads)),
        },
        output: "run".into(),
        study_start: world.range.start.to_string(),
        study_end: world.range.end.to_string(),
        ..toml::from_str(&minimal_toml()).expect("defaults")
    };
    run.write_toml(&out.join("run.toml"))?;
    Ok(format!(
        "wrote {} districts, {} subscribers, {} event files and ground truth to {}\nrun it with: hmig run --config {}",
        world.districts.len(),
        world.n_subscribers(),
        files.events.len(),
        out.display(),
        out.join("run.toml").display()
    ))
}

fn minimal_toml() -> String {
    let mut s = String::from("output = \"run\"\nstudy_start = \"2000-01-01\"\nstudy_end = \"2000-01-01\"\n[inputs]\n");
    for k in ["districts", "towers", "ndvi", "cultivation", "control", "violence"] {
        let _ = writeln!(s, "{k} = \"\"");
    }
    s.push_str("events = []\n");
    s
}

fn loaded(cfg: RunConfig, through: Stage) -> anyhow::Result<Context> {
    let fingerprint = cfg.fingerprint();
    crate::stages::Layout::new(&cfg.output).require(through, &fingerprint)?;
    let roads = Context::needs_roads(&cfg);
    Context::load(cfg, roads)
}

/// Plot-ready CSVs: mean excess series, histograms, the origin-destination
/// matrix and the coefficient table.
pub fn figures(cfg: RunConfig) -> anyhow::Result<String> {
    let ctx = loaded(cfg, Stage::Phenology)?;
    let dir = ctx.layout.dir("figures")?;
    let metrics = ctx.metrics(ctx.cfg.metrics.lag)?;
    let peaks = ctx.peaks()?;
    let mut report = String::new();
    let mut fits = Vec::new();
    let mut outcomes = ctx.cfg.outcomes.clone();
    for extra in ["in_rate", "out_rate"] {
        if !outcomes.iter().any(|o| o == extra) {
            outcomes.push(extra.into());
        }
    }
    for outcome in &outcomes {
        let panel = ctx.build_panel(&metrics, &peaks, outcome)?;
        let tag = file_tag(outcome);
        write_series_csv(&dir.join(format!("series_{tag}.csv")), &ctx.preamble, &group_series(&panel, SERIES_SPAN))?;
        let Figures { histogram_bin, .. } = ctx.cfg.figures;
        write_histograms_csv(&dir.join(format!("histogram_{tag}.csv")), &ctx.preamble, &migration_histograms(&panel, histogram_bin)?)?;
        let _ = writeln!(report, "outcome {outcome}: {} district-years", panel.rows.len());
        if ctx.cfg.outcomes.contains(outcome) {
            for (spec, fit) in ctx.fit_all(&panel) {
                match fit {
                    Ok(r) => fits.push((format!("{tag}_{spec}"), r)),
                    Err(e) => {
                        let _ = writeln!(report, "  spec {spec} skipped: {e:#}");
                    }
                }
            }
        }
    }
    let refs: Vec<_> = fits.iter().map(|(t, r)| (t.clone(), r)).collect();
    write_coefficients_csv(&dir.join("coefficients.csv"), &ctx.preamble, &refs)?;

    let year = ctx.cfg.figures.od_year.unwrap_or(ctx.range.start.year().max(ctx.range.end.year().min(ctx.range.start.year() + 1)));
    let od = od_matrix(&ctx, &peaks, year)?;
    let with_towers: Vec<u32> = ctx
        .registry
        .towers_per_district(&ctx.districts)
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(i, _)| i as u32)
        .collect();
    let high = |d: u32| {
        ctx.data
            .cultivation
            .get(&(ctx.districts.id(d).to_string(), year))
            .and_then(|&ha| classify_cultivation_with(ha, ctx.cfg.high_ha).ok())
            == Some(Cultivation::High)
    };
    let order = od_order(&ctx.districts, &with_towers, high);
    od.write_csv(&dir.join(format!("od_matrix_{year}.csv")), &ctx.preamble, &ctx.districts, &order, ctx.cfg.figures.od_clip)?;
    let _ = writeln!(report, "origin-destination matrix for {year}: {} districts with towers", order.len());
    let _ = writeln!(report, "figures written to {}", dir.display());
    Ok(report)
}

fn od_matrix(ctx: &Context, peaks: &[harvest_migration::phenology::PeakDate], year: i32) -> anyhow::Result<harvest_migration::figures::OdMatrix> {
    let root = ctx.layout.residence();
    let new = || OdAccumulator::new(ctx.range, &ctx.districts, peaks, year, ctx.cfg.metrics.lag);
    let acc = (0..ctx.cfg.shards)
        .into_par_iter()
        .map(|s| {
            let mut acc = new();
            for r in read_segments(&segment_shard_path(&root, s), &ctx.districts)? {
                acc.add_subscriber(&r.segments);
            }
            Ok::<_, harvest_migration::Error>(acc)
        })
        .try_reduce(new, |a, b| Ok(a.merge(b)))?;
    Ok(acc.finish())
}

/// Seasonal migrants implied by the high-cultivation coefficient.
pub fn totals(cfg: RunConfig, coefficient: Option<f64>) -> anyhow::Result<String> {
    let ctx = loaded(cfg, Stage::Panel)?;
    let path = ctx.layout.panel("in_rate");
    let panel = Panel::read_csv(&path).with_context(|| "totals need the in_rate outcome in the run configuration".to_string())?;
    let coef = match coefficient {
        Some(c) => c,
        None => high_coefficient(&run_spec::<f64>(SpecId::Cultivation, &panel, ctx.cfg.spec_options())?)?.estimate,
    };
    let name = &ctx.cfg.totals.population_covariate;
    let cov = ctx.data.covariates.as_ref();
    let t = migrant_totals(coef, panel.rows.iter().filter(|r| r.high()).map(|r| (r.district_id.as_str(), r.year)), |d, y| {
        cov.and_then(|c| c.value(d, y, name))
    });
    let dir = ctx.layout.dir("figures")?;
    t.write_csv(&dir.join("totals.csv"), &ctx.preamble)?;
    let mut s = format!("coefficient {coef:.5}; {} high-cultivation district-years\n", t.districts.len());
    for (y, v) in &t.per_year {
        let _ = writeln!(s, "  {y}: {v:.0} migrants");
    }
    if let (Some(lo), Some(hi)) = (t.min_year(), t.max_year()) {
        let _ = writeln!(s, "  range across years: {:.0} ({}) to {:.0} ({})", lo.1, lo.0, hi.1, hi.0);
    }
    if !t.skipped.is_empty() {
        let _ = writeln!(s, "  skipped {} district-years without {name}", t.skipped.len());
    }
    Ok(s)
}

fn main_spec(ctx: &Context) -> SpecId {
    ctx.cfg.spec_ids().first().copied().unwrap_or(SpecId::Cultivation)
}

pub fn placebo(cfg: RunConfig, iterations: Option<usize>) -> anyhow::Result<String> {
    let ctx = loaded(cfg, Stage::Phenology)?;
    let r = iterations.unwrap_or(ctx.cfg.robustness.placebo_iterations);
    let metrics = ctx.metrics(ctx.cfg.metrics.lag)?;
    let peaks = ctx.peaks()?;
    let panel_cfg = ctx.cfg.panel_config("in_rate");
    let inputs = BatteryInputs {
        districts: &ctx.districts,
        metrics: &metrics,
        peaks: &peaks,
        data: &ctx.data,
        panel: &panel_cfg,
        spec: SpecId::Cultivation,
        options: ctx.cfg.spec_options(),
    };
    let report = placebo_battery::<f64>(&inputs, r, ctx.cfg.seed)?;
    let dir = ctx.layout.dir("robustness")?;
    report.write_csv(&dir.join("placebo.csv"), &ctx.preamble)?;
    Ok(format!(
        "observed {:.5}; {} of {} placebo coefficients at least as large ({} failed); rank p = {:.4}",
        report.observed,
        report.at_least_observed,
        r - report.failures,
        report.failures,
        report.p_value
    ))
}

pub fn robustness(cfg: RunConfig) -> anyhow::Result<String> {
    let ctx = loaded(cfg, Stage::Phenology)?;
    let dir = ctx.layout.dir("robustness")?;
    let rob = ctx.cfg.robustness.clone();
    let options = ctx.cfg.spec_options();
    let spec = main_spec(&ctx);
    let metrics = ctx.metrics(ctx.cfg.metrics.lag)?;
    let peaks = ctx.peaks()?;
    let panel_cfg = ctx.cfg.panel_config("in_rate");
    let inputs = BatteryInputs { districts: &ctx.districts, metrics: &metrics, peaks: &peaks, data: &ctx.data, panel: &panel_cfg, spec, options };
    let mut s = String::new();

    let d = rob.perturbation_days;
    let shifted = perturbation_battery::<f64>(&inputs, &[-d, d])?;
    let subs: Vec<_> = shifted.into_iter().map(|p| (format!("shift_{:+}", p.delta_days), p.n, Subsample::Fit(Box::new(p.result)))).collect();
    write_battery_csv(&dir.join("perturbation.csv"), &ctx.preamble, subs.iter().map(|(v, n, r)| (v.clone(), spec, *n, r)))?;
    report_high(&mut s, "perturbation", subs.iter().map(|(v, _, r)| (v.as_str(), r)));

    let base = ctx.build_panel(&metrics, &peaks, "in_rate")?;
    let split = precision_split::<f64>(&base, rob.precision_threshold, spec, options);
    let parts = [("majority", &split.majority), ("minority", &split.minority)];
    write_battery_csv(&dir.join("precision.csv"), &ctx.preamble, parts.iter().map(|(v, r)| (v.to_string(), spec, r.fit().map_or(0, |f| f.fit.n), *r)))?;
    report_high(&mut s, "precision split", parts.iter().map(|(v, r)| (*v, *r)));

    let specs = ctx.cfg.spec_ids();
    let fits = restriction_battery::<f64>(&base, &Restriction::presets(&base), &specs, options);
    write_battery_csv(&dir.join("restrictions.csv"), &ctx.preamble, fits.iter().map(|f| (f.restriction.clone(), f.spec, f.n, &f.result)))?;
    report_high(&mut s, "restrictions", fits.iter().filter(|f| f.spec == spec).map(|f| (f.restriction.as_str(), &f.result)));

    let mut by_lag = std::collections::BTreeMap::new();
    by_lag.insert(ctx.cfg.metrics.lag, metrics);
    let mut variants = Vec::new();
    for name in &rob.variants {
        let v = OutcomeVariant::preset(name).ok_or_else(|| anyhow!("unknown variant {name}"))?;
        if !by_lag.contains_key(&v.lag) {
            by_lag.insert(v.lag, ctx.metrics(v.lag)?);
        }
        let pc = PanelConfig { variant: name.clone(), ..panel_cfg.clone() };
        let sub = match harvest_migration::panel::build_panel(&ctx.districts, &by_lag[&v.lag], &peaks, &ctx.data, &pc) {
            Ok(p) => match run_spec::<f64>(spec, &p, options) {
                Ok(r) => Subsample::Fit(Box::new(r)),
                Err(e) => Subsample::Skipped(e.to_string()),
            },
            Err(e) => Subsample::Skipped(e.to_string()),
        };
        variants.push((name.clone(), sub));
    }
    write_battery_csv(&dir.join("variants.csv"), &ctx.preamble, variants.iter().map(|(v, r)| (v.clone(), spec, r.fit().map_or(0, |f| f.fit.n), r)))?;
    report_high(&mut s, "outcome variants", variants.iter().map(|(v, r)| (v.as_str(), r)));
    let _ = writeln!(s, "battery CSVs written to {}", dir.display());
    Ok(s)
}

fn report_high<'a>(s: &mut String, title: &str, rows: impl Iterator<Item = (&'a str, &'a Subsample<f64>)>) {
    let _ = writeln!(s, "{title}:");
    for (name, r) in rows {
        match r.fit().map(high_coefficient) {
            Some(Ok(c)) => {
                let _ = writeln!(s, "  {name:<40} high {:>9.5} se {:>8.5} [{:.5}, {:.5}]", c.estimate, c.se, c.ci_lo, c.ci_hi);
            }
            Some(Err(e)) => {
                let _ = writeln!(s, "  {name:<40} {e}");
            }
            None => {
                let why = match r {
                    Subsample::Skipped(w) => w.as_str(),
                    Subsample::Fit(_) => "",
                };
                let _ = writeln!(s, "  {name:<40} skipped: {why}");
            }
        }
    }
}
