//! Glue between stages: source classes, metrics from segment shards or from an
//! in-memory synthetic world, and assembly of panel inputs.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::day::{Day, StudyRange};
use crate::error::Result;
use crate::ingest::geometry::Districts;
use crate::ingest::towers::TowerRegistry;
use crate::metrics::{MetricsAccumulator, MetricsConfig, MetricsTable, SourceClass, SourceClassMap};
use crate::panel::{classify_cultivation_with, Cultivation, PanelData};
use crate::phenology::{estimate_peaks, PeakDate, PeakExclusion};
use crate::residence::{daily_locations, infer_segments, read_segments, segment_shard_path, SegmentParams};
use crate::spatial::roads::{entry_roads, ENTRY_BUFFER_KM};
use crate::spatial::violence::{RoadEventFilter, ViolentEvent, PRE_PEAK_DAYS};
use crate::synth::{TripLedger, World};

/// Class of every (district, day): cultivation in that calendar year, any
/// violent event in the 30 days before, and territorial control. Districts
/// without a cultivation row for a year count as non-cultivating.
pub fn source_class_map(
    range: StudyRange,
    districts: &Districts,
    cultivation: &BTreeMap<(String, i32), f64>,
    control: &BTreeMap<String, bool>,
    events: &[ViolentEvent],
    high_ha: f64,
) -> Result<SourceClassMap> {
    let n = districts.len();
    let mut classes: BTreeMap<(u32, i32), Cultivation> = BTreeMap::new();
    for ((d, y), &ha) in cultivation {
        if let Some(i) = districts.index_of(d) {
            classes.insert((i, *y), classify_cultivation_with(ha, high_ha)?);
        }
    }
    // Week spans of each district's events, for the pre-day violence test.
    let mut weeks: Vec<Vec<(Day, Day)>> = vec![Vec::new(); n];
    for e in events {
        if let Some(i) = districts.index_of(&e.district_id) {
            weeks[i as usize].push((e.week.monday(), e.week.sunday()));
        }
    }
    let taliban: Vec<bool> = (0..n as u32)
        .map(|i| control.get(districts.id(i)).copied().unwrap_or(false))
        .collect();
    Ok(SourceClassMap::build(range, n, |d, day| {
        let (lo, hi) = (day - PRE_PEAK_DAYS, day - 1);
        SourceClass {
            cultivation: classes.get(&(d, day.year())).copied().unwrap_or(Cultivation::None),
            violence_30d: weeks[d as usize].iter().any(|&(m, s)| m <= hi && s >= lo),
            taliban: taliban[d as usize],
        }
    }))
}

/// Metrics from the residence stage's segment shards, one shard per worker.
pub fn metrics_from_segments(
    residence_root: &Path,
    shards: u32,
    districts: &Districts,
    range: StudyRange,
    config: MetricsConfig,
    classes: Option<&SourceClassMap>,
) -> Result<MetricsTable> {
    let n = districts.len();
    let acc = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut acc = MetricsAccumulator::new(range, n, config, classes);
            for r in read_segments(&segment_shard_path(residence_root, s), districts)? {
                acc.add_subscriber(&r.segments);
            }
            Ok(acc)
        })
        .try_reduce(|| MetricsAccumulator::new(range, n, config, classes), |a, b| Ok(a.merge(b)))?;
    Ok(acc.finish())
}

/// Runs a synthetic world's events straight through daily modes, segments and
/// metrics without touching disk. Towers are resolved through the same
/// registry the file pipeline uses.
pub fn metrics_from_world(
    world: &World,
    config: MetricsConfig,
    params: SegmentParams,
    classes: Option<&SourceClassMap>,
) -> Result<(MetricsTable, TripLedger)> {
    let registry = TowerRegistry::new(&world.towers, &world.districts)?;
    let tower_district: Vec<Option<u32>> = world
        .towers
        .iter()
        .map(|t| registry.district_of(&t.tower_id).flatten())
        .collect();
    let n = world.districts.len();
    let range = world.range;
    let (acc, ledger) = world.fold_subscribers(
        || (MetricsAccumulator::new(range, n, config, classes), Vec::new()),
        |(acc, buf), _, events| {
            buf.clear();
            buf.extend(events.iter().filter_map(|&(ts, t)| tower_district[t as usize].map(|d| (ts, d))));
            let segments = infer_segments(&daily_locations(buf), params);
            acc.add_subscriber(&segments);
        },
        |(a, buf), (b, _)| (a.merge(b), buf),
    );
    Ok((acc.0.finish(), ledger))
}

/// Panel inputs of a synthetic world. Road pieces are built only on request
/// since the clipping is the slow part.
pub fn world_panel_data(world: &World, with_roads: bool) -> PanelData {
    PanelData {
        cultivation: world.cultivation.clone(),
        eradication: Some(world.eradication.clone()),
        control: world.control.clone(),
        covariates: Some(world.covariates.clone()),
        events: world.events.clone(),
        roads: with_roads.then(|| entry_roads(&world.districts, &world.roads, ENTRY_BUFFER_KM)),
        road_filter: RoadEventFilter::default(),
    }
}

pub fn world_peaks(world: &World, threshold: f64) -> (Vec<PeakDate>, Vec<PeakExclusion>) {
    estimate_peaks(&world.ndvi, threshold)
}

pub fn world_source_classes(world: &World, high_ha: f64) -> Result<SourceClassMap> {
    source_class_map(
        world.range,
        &world.districts,
        &world.cultivation,
        &world.control,
        &world.events,
        high_ha,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ClassSet, ResidenceIndex};
    use crate::residence::residence_on_day;
    use crate::synth::WorldConfig;

    fn tiny() -> WorldConfig {
        WorldConfig {
            rows: 1,
            cols: 3,
            subscribers_per_district: 60,
            days_before: 40,
            days_after: 160,
            years: 1,
            high_share: 0.34,
            low_share: 0.33,
            pulse_excess: 0.1,
            move_prob_30d: 0.05,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn streaming_metrics_match_the_direct_index() {
        let world = World::generate(&tiny()).unwrap();
        let classes = world_source_classes(&world, 1000.0).unwrap();
        let config = MetricsConfig::default();
        let (table, _) = metrics_from_world(&world, config, SegmentParams::default(), Some(&classes)).unwrap();
        // Second route: per-subscriber segments into the direct index.
        let mut subs = Vec::new();
        let mut buf = Vec::new();
        let mut ledger = TripLedger::new(world.pulses.len());
        for s in 0..world.n_subscribers() {
            world.subscriber_events(s, &mut buf, &mut ledger);
            let ev: Vec<(i64, u32)> = buf.iter().map(|&(ts, t)| (ts, world.tower_district[t as usize])).collect();
            subs.push(infer_segments(&daily_locations(&ev), SegmentParams::default()));
        }
        let index = ResidenceIndex::new(subs.clone());
        for d in 0..3u32 {
            // the index has no notion of the study range, so start past the lag
            for t in (30..world.range.len()).step_by(9) {
                let day = world.range.day(t);
                let direct = index.in_rate(d, day, 30);
                assert_eq!(table.in_rate(d, t), direct.obs, "d {d} t {t}");
                assert_eq!(table.out_rate(d, t), index.out_rate(d, day, 30));
                let high = ClassSet::cultivation(Cultivation::High);
                let share = index.composition_share(&direct.movers, day, 30, &classes, high);
                assert_eq!(table.composition(d, t, high), share);
            }
        }
        // present counts are the number of subscribers resident that day
        let t = world.range.len() / 2;
        let day = world.range.day(t);
        for d in 0..3u32 {
            let n = subs.iter().filter(|s| residence_on_day(s, day) == Some(d)).count() as u32;
            assert!(table.present(d, t) <= n);
        }
    }

    #[test]
    fn classes_follow_inputs() {
        let world = World::generate(&tiny()).unwrap();
        let map = world_source_classes(&world, 1000.0).unwrap();
        for d in 0..3u32 {
            let id = world.districts.id(d);
            let day = Day::from_ymd(2015, 5, 1).unwrap();
            let c = map.class_of(d, day).unwrap();
            assert_eq!(c.cultivation, world.cultivation_class(d, 2015));
            assert_eq!(c.taliban, world.control[id]);
            let v = world
                .events
                .iter()
                .any(|e| e.district_id == id && e.week.overlaps(day - 30, day - 1));
            assert_eq!(c.violence_30d, v);
        }
    }
}
