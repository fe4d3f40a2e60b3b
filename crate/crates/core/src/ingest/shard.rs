//! Partitioning of the event stream by subscriber so that each subscriber's full
//! history lives in exactly one shard.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::day::StudyRange;
use crate::error::{Error, Result};
use crate::ingest::events::{parse_event_file, RejectionReport};
use crate::ingest::towers::TowerRegistry;

pub const DEFAULT_SHARDS: u32 = 64;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn shard_of(subscriber_id: &str, shards: u32) -> u32 {
    (fnv1a64(subscriber_id.as_bytes()) % shards as u64) as u32
}

pub fn shard_dir(root: &Path, shard: u32) -> PathBuf {
    root.join(format!("shard-{shard:04}"))
}

/// Writes `subscriber_id,unix_ts,district_index` lines into per-shard part files.
/// Each writer owns one part file per shard, so concurrent writers never share a file.
pub struct ShardWriter {
    root: PathBuf,
    part: usize,
    writers: Vec<Option<BufWriter<File>>>,
}

impl ShardWriter {
    pub fn new(root: &Path, shards: u32, part: usize) -> Self {
        Self {
            root: root.to_path_buf(),
            part,
            writers: (0..shards).map(|_| None).collect(),
        }
    }

    pub fn write(&mut self, subscriber_id: &str, ts: i64, district: u32) -> Result<()> {
        let shard = shard_of(subscriber_id, self.writers.len() as u32);
        let slot = &mut self.writers[shard as usize];
        if slot.is_none() {
            let dir = shard_dir(&self.root, shard);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("part-{:05}.csv", self.part));
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            *slot = Some(BufWriter::with_capacity(1 << 16, f));
        }
        let w = slot.as_mut().expect("opened above");
        writeln!(w, "{subscriber_id},{ts},{district}").map_err(|e| Error::io(&self.root, e))
    }

    pub fn finish(self) -> Result<()> {
        for w in self.writers.into_iter().flatten() {
            w.into_inner()
                .map_err(|e| Error::io(&self.root, e.into_error()))?
                .sync_all()
                .ok();
        }
        Ok(())
    }
}

/// Parse every event file (in parallel, one worker per file) and route accepted
/// events into `shards` subscriber shards under `root`.
pub fn ingest_to_shards(
    files: &[PathBuf],
    registry: &TowerRegistry,
    range: StudyRange,
    root: &Path,
    shards: u32,
) -> Result<RejectionReport> {
    assert!(shards > 0, "shard count must be positive");
    for f in files {
        if !f.is_file() {
            return Err(Error::io(f, std::io::ErrorKind::NotFound.into()));
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let reports = files
        .par_iter()
        .enumerate()
        .map(|(part, path)| {
            let mut writer = ShardWriter::new(root, shards, part);
            let report = parse_event_file(path, registry, range, |ev| {
                writer.write(ev.subscriber_id, ev.timestamp, ev.district)
            })?;
            writer.finish()?;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = RejectionReport::default();
    for r in reports {
        total.merge(r);
    }
    Ok(total)
}

/// One shard's events, with subscribers interned to dense local ids.
#[derive(Debug, Default)]
pub struct ShardEvents {
    /// Sorted subscriber ids.
    pub subscribers: Vec<String>,
    /// (subscriber index, unix ts, district), sorted.
    pub events: Vec<(u32, i64, u32)>,
}

impl ShardEvents {
    /// Build from unsorted events. Sorting makes results independent of file order.
    pub fn from_events<'a>(rows: impl IntoIterator<Item = (&'a str, i64, u32)>) -> Self {
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut names = Vec::new();
        let mut events = Vec::new();
        for (sub, ts, d) in rows {
            let id = match ids.get(sub) {
                Some(&i) => i,
                None => {
                    let i = names.len() as u32;
                    names.push(sub.to_string());
                    ids.insert(sub.to_string(), i);
                    i
                }
            };
            events.push((id, ts, d));
        }
        Self::sorted(names, events)
    }

    fn sorted(names: Vec<String>, mut events: Vec<(u32, i64, u32)>) -> Self {
        let mut order: Vec<u32> = (0..names.len() as u32).collect();
        order.sort_by(|&a, &b| names[a as usize].cmp(&names[b as usize]));
        let mut rank = vec![0u32; names.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i as usize] = r as u32;
        }
        for e in &mut events {
            e.0 = rank[e.0 as usize];
        }
        events.sort_unstable();
        let mut names: Vec<Option<String>> = names.into_iter().map(Some).collect();
        let subscribers = order.iter().map(|&i| names[i as usize].take().unwrap()).collect();
        Self {
            subscribers,
            events,
        }
    }

    /// Events grouped per subscriber, in subscriber order.
    pub fn by_subscriber(&self) -> impl Iterator<Item = (&str, &[(u32, i64, u32)])> {
        self.events
            .chunk_by(|a, b| a.0 == b.0)
            .map(|chunk| (self.subscribers[chunk[0].0 as usize].as_str(), chunk))
    }
}

/// Load all part files of one shard.
pub fn read_shard(root: &Path, shard: u32) -> Result<ShardEvents> {
    let dir = shard_dir(root, shard);
    if !dir.exists() {
        return Ok(ShardEvents::default());
    }
    let mut parts: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    parts.sort();

    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut events = Vec::new();
    let mut line = String::new();
    for path in parts {
        let mut rdr = BufReader::with_capacity(1 << 16, File::open(&path).map_err(|e| Error::io(&path, e))?);
        loop {
            line.clear();
            if rdr.read_line(&mut line).map_err(|e| Error::io(&path, e))? == 0 {
                break;
            }
            let bad = || Error::invalid(format!("corrupt shard line in {}: {line:?}", path.display()));
            let mut it = line.trim_end().split(',');
            let (Some(sub), Some(ts), Some(d), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad());
            };
            let ts: i64 = ts.parse().map_err(|_| bad())?;
            let d: u32 = d.parse().map_err(|_| bad())?;
            let id = match ids.get(sub) {
                Some(&i) => i,
                None => {
                    let i = names.len() as u32;
                    names.push(sub.to_string());
                    ids.insert(sub.to_string(), i);
                    i
                }
            };
            events.push((id, ts, d));
        }
    }
    Ok(ShardEvents::sorted(names, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn shard_assignment_is_stable_and_in_range() {
        for s in ["h1", "abc", "0123456789abcdef"] {
            let a = shard_of(s, 64);
            assert!(a < 64);
            assert_eq!(a, shard_of(s, 64));
        }
    }

    #[test]
    fn writer_and_reader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ShardWriter::new(dir.path(), 4, 0);
        w.write("b", 20, 1).unwrap();
        w.write("a", 10, 0).unwrap();
        w.write("b", 5, 2).unwrap();
        w.finish().unwrap();
        let mut seen = 0;
        for s in 0..4 {
            let shard = read_shard(dir.path(), s).unwrap();
            for (sub, evs) in shard.by_subscriber() {
                assert_eq!(shard_of(sub, 4), s);
                assert!(evs.windows(2).all(|w| w[0].1 <= w[1].1));
                seen += evs.len();
            }
        }
        assert_eq!(seen, 3);
    }
}
