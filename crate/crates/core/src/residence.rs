//! Daily modal districts and multi-day residence segments.
//!
//! A subscriber's day is assigned to the district that carried most of the
//! day's events. Days are then scanned greedily into residence segments: runs
//! of same-district days, bridging short unobserved gaps, that span at least
//! `min_days` days.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::day::Day;
use crate::error::{Error, Result};
use crate::ingest::geometry::Districts;
use crate::ingest::shard::{read_shard, ShardEvents};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DailyLocation {
    pub day: Day,
    pub district: u32,
    /// Located events that day (all districts).
    pub event_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidenceSegment {
    pub district: u32,
    pub start: Day,
    /// Inclusive.
    pub end: Day,
}

impl ResidenceSegment {
    pub fn len_days(&self) -> i32 {
        self.end - self.start + 1
    }

    pub fn contains(&self, day: Day) -> bool {
        day >= self.start && day <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParams {
    /// Minimum segment span in days (K).
    pub min_days: u32,
    /// Longest run of unobserved days bridged inside a segment (G).
    pub max_gap: u32,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            min_days: 7,
            max_gap: 3,
        }
    }
}

impl SegmentParams {
    pub fn min_observed(&self) -> u32 {
        self.min_days.div_ceil(2)
    }
}

/// Modal district of one subscriber-day. `events` are `(unix_ts, district)`
/// pairs of a single day, already sorted by time. Ties go to the district whose
/// first event came earliest.
pub fn daily_modal_district(events: &[(i64, u32)]) -> Option<DailyLocation> {
    let (first_ts, _) = *events.first()?;
    // (district, count, first seen ts); districts per day are few.
    let mut tally: Vec<(u32, u32, i64)> = Vec::with_capacity(4);
    for &(ts, d) in events {
        match tally.iter_mut().find(|t| t.0 == d) {
            Some(t) => t.1 += 1,
            None => tally.push((d, 1, ts)),
        }
    }
    let (district, _, _) = tally
        .iter()
        .copied()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)).then(b.0.cmp(&a.0)))?;
    Some(DailyLocation {
        day: Day::from_unix(first_ts),
        district,
        event_count: events.len() as u32,
    })
}

/// Daily locations of one subscriber from its time-sorted `(ts, district)` events.
pub fn daily_locations(events: &[(i64, u32)]) -> Vec<DailyLocation> {
    events
        .chunk_by(|a, b| Day::from_unix(a.0) == Day::from_unix(b.0))
        .filter_map(daily_modal_district)
        .collect()
}

/// Greedy left-to-right segmentation of day-sorted daily locations.
///
/// A candidate opens at an observed day in district D and extends over
/// following observed days in D while unobserved gaps are at most `max_gap`.
/// It is accepted if it spans `min_days` days with at least `ceil(min_days/2)`
/// observed days; otherwise scanning resumes at the next observed day.
/// Consecutive accepted segments in the same district are joined, so adjacent
/// output segments always differ in district.
pub fn infer_segments(days: &[DailyLocation], params: SegmentParams) -> Vec<ResidenceSegment> {
    let mut out: Vec<ResidenceSegment> = Vec::new();
    let max_step = params.max_gap as i32 + 1;
    let mut i = 0;
    while i < days.len() {
        let district = days[i].district;
        let mut last = i;
        while last + 1 < days.len()
            && days[last + 1].district == district
            && days[last + 1].day - days[last].day <= max_step
        {
            last += 1;
        }
        let span = days[last].day - days[i].day + 1;
        let observed = (last - i + 1) as u32;
        if span >= params.min_days as i32 && observed >= params.min_observed() {
            let seg = ResidenceSegment {
                district,
                start: days[i].day,
                end: days[last].day,
            };
            match out.last_mut() {
                Some(prev) if prev.district == district => prev.end = seg.end,
                _ => out.push(seg),
            }
            i = last + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// District of the segment covering `day`. Segments must be sorted and disjoint.
pub fn residence_on_day(segments: &[ResidenceSegment], day: Day) -> Option<u32> {
    let idx = segments.partition_point(|s| s.end < day);
    segments
        .get(idx)
        .filter(|s| s.start <= day)
        .map(|s| s.district)
}

/// Segments of one subscriber.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriberResidence {
    pub subscriber_id: String,
    pub segments: Vec<ResidenceSegment>,
}

/// Daily locations and segments for every subscriber in a shard.
pub fn process_shard(
    shard: &ShardEvents,
    params: SegmentParams,
    mut on_daily: impl FnMut(&str, &[DailyLocation]) -> Result<()>,
) -> Result<Vec<SubscriberResidence>> {
    let mut out = Vec::new();
    let mut buf: Vec<(i64, u32)> = Vec::new();
    for (sub, evs) in shard.by_subscriber() {
        buf.clear();
        buf.extend(evs.iter().map(|&(_, ts, d)| (ts, d)));
        let daily = daily_locations(&buf);
        on_daily(sub, &daily)?;
        let segments = infer_segments(&daily, params);
        if !segments.is_empty() {
            out.push(SubscriberResidence {
                subscriber_id: sub.to_string(),
                segments,
            });
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::with_capacity(
        1 << 16,
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub fn daily_shard_path(root: &Path, shard: u32) -> PathBuf {
    root.join("daily").join(format!("shard-{shard:04}.csv"))
}

pub fn segment_shard_path(root: &Path, shard: u32) -> PathBuf {
    root.join("segments").join(format!("shard-{shard:04}.csv"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidenceSummary {
    pub subscribers: u64,
    pub subscribers_with_segments: u64,
    pub events: u64,
    pub daily_locations: u64,
    pub segments: u64,
}

/// Residence stage over all event shards: writes `daily/shard-*.csv`
/// (`subscriber_id,day,district_id,event_count`) and `segments/shard-*.csv`
/// (`subscriber_id,district_id,start_day,end_day`). Shards run in parallel and
/// only one shard per worker is held in memory.
pub fn residence_stage(
    events_root: &Path,
    out_root: &Path,
    shards: u32,
    districts: &Districts,
    params: SegmentParams,
) -> Result<ResidenceSummary> {
    let parts = (0..shards)
        .into_par_iter()
        .map(|s| {
            let shard = read_shard(events_root, s)?;
            let daily_path = daily_shard_path(out_root, s);
            let mut daily_w = create(&daily_path)?;
            writeln!(daily_w, "subscriber_id,day,district_id,event_count").map_err(|e| Error::io(&daily_path, e))?;
            let mut n_daily = 0u64;
            let residences = process_shard(&shard, params, |sub, daily| {
                n_daily += daily.len() as u64;
                for d in daily {
                    writeln!(daily_w, "{sub},{},{},{}", d.day, districts.id(d.district), d.event_count)
                        .map_err(|e| Error::io(&daily_path, e))?;
                }
                Ok(())
            })?;
            daily_w.flush().map_err(|e| Error::io(&daily_path, e))?;
            let seg_path = segment_shard_path(out_root, s);
            write_segments(&seg_path, &residences, districts)?;
            Ok(ResidenceSummary {
                subscribers: shard.subscribers.len() as u64,
                subscribers_with_segments: residences.len() as u64,
                events: shard.events.len() as u64,
                daily_locations: n_daily,
                segments: residences.iter().map(|r| r.segments.len() as u64).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(ResidenceSummary::default(), |a, b| ResidenceSummary {
        subscribers: a.subscribers + b.subscribers,
        subscribers_with_segments: a.subscribers_with_segments + b.subscribers_with_segments,
        events: a.events + b.events,
        daily_locations: a.daily_locations + b.daily_locations,
        segments: a.segments + b.segments,
    }))
}

pub fn write_segments(path: &Path, residences: &[SubscriberResidence], districts: &Districts) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "subscriber_id,district_id,start_day,end_day").map_err(io)?;
    for r in residences {
        for s in &r.segments {
            writeln!(w, "{},{},{},{}", r.subscriber_id, districts.id(s.district), s.start, s.end).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Read a segment shard file back, grouped per subscriber in file order.
pub fn read_segments(path: &Path, districts: &Districts) -> Result<Vec<SubscriberResidence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<SubscriberResidence> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 || line.is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("{}:{}: bad segment row", path.display(), n + 1));
        let f: Vec<&str> = line.split(',').collect();
        let [sub, d, start, end] = f[..] else {
            return Err(bad());
        };
        let district = districts
            .index_of(d)
            .ok_or_else(|| Error::KeyMismatch(format!("segment district {d} not in geometry")))?;
        let seg = ResidenceSegment {
            district,
            start: start.parse().map_err(|_| bad())?,
            end: end.parse().map_err(|_| bad())?,
        };
        match out.last_mut() {
            Some(r) if r.subscriber_id == sub => r.segments.push(seg),
            _ => out.push(SubscriberResidence {
                subscriber_id: sub.to_string(),
                segments: vec![seg],
            }),
        }
    }
    Ok(out)
}
