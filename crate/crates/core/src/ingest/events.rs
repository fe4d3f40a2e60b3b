//! Event CSV parsing (`subscriber_id,timestamp,tower_id`) with per-file rejection accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::day::StudyRange;
use crate::error::{Error, Result};
use crate::ingest::towers::TowerRegistry;

/// One pseudonymized phone transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdrEvent {
    pub subscriber_id: String,
    /// Unix seconds, UTC.
    pub timestamp: i64,
    pub tower_id: String,
}

/// How a data row was disposed of. Every row lands in exactly one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowCategory {
    Accepted,
    /// Parsed and valid, but its tower group lies outside every district.
    Unlocated,
    MalformedRow,
    BadTimestamp,
    OutOfRange,
    UnknownTower,
}

impl RowCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            RowCategory::Accepted => "accepted",
            RowCategory::Unlocated => "unlocated",
            RowCategory::MalformedRow => "malformed_row",
            RowCategory::BadTimestamp => "bad_timestamp",
            RowCategory::OutOfRange => "out_of_range",
            RowCategory::UnknownTower => "unknown_tower",
        }
    }

    pub fn is_rejection(self) -> bool {
        !matches!(self, RowCategory::Accepted | RowCategory::Unlocated)
    }
}

impl fmt::Display for RowCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-file row counts by category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectionReport {
    counts: BTreeMap<(String, RowCategory), u64>,
}

impl RejectionReport {
    pub fn add(&mut self, file: &str, cat: RowCategory, n: u64) {
        if n > 0 {
            *self.counts.entry((file.to_string(), cat)).or_default() += n;
        }
    }

    pub fn merge(&mut self, other: RejectionReport) {
        for ((f, c), n) in other.counts {
            *self.counts.entry((f, c)).or_default() += n;
        }
    }

    pub fn count(&self, file: &str, cat: RowCategory) -> u64 {
        self.counts.get(&(file.to_string(), cat)).copied().unwrap_or(0)
    }

    pub fn total(&self, cat: RowCategory) -> u64 {
        self.counts.iter().filter(|((_, c), _)| *c == cat).map(|(_, n)| n).sum()
    }

    pub fn rows_in_file(&self, file: &str) -> u64 {
        self.counts.iter().filter(|((f, _), _)| f == file).map(|(_, n)| n).sum()
    }

    pub fn rejected(&self) -> u64 {
        self.counts.iter().filter(|((_, c), _)| c.is_rejection()).map(|(_, n)| n).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, RowCategory, u64)> {
        self.counts.iter().map(|((f, c), n)| (f.as_str(), *c, *n))
    }

    /// CSV `file,category,count` after `preamble`.
    pub fn write_csv(&self, path: &Path, preamble: &str) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        std::io::Write::write_all(&mut file, preamble.as_bytes()).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["file", "category", "count"]).map_err(|e| Error::csv(path, e))?;
        for (f, c, n) in self.entries() {
            w.write_record([f, c.as_str(), &n.to_string()]).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// RFC 3339 timestamp (any offset, converted to the UTC instant) or a naive
/// `YYYY-MM-DDTHH:MM:SS` read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|n| n.and_utc().timestamp())
}

/// Subscriber ids are written verbatim into shard files, so they must not
/// contain delimiters.
fn valid_subscriber(s: &str) -> bool {
    !s.is_empty() && !s.bytes().any(|b| matches!(b, b',' | b'"' | b'\n' | b'\r'))
}

/// A validated event resolved to a district index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedEvent<'a> {
    pub subscriber_id: &'a str,
    pub timestamp: i64,
    pub tower_id: &'a str,
    pub district: u32,
}

/// Validate one raw row.
pub fn classify_row<'a>(
    fields: &[&'a str],
    registry: &TowerRegistry,
    range: StudyRange,
) -> std::result::Result<ParsedEvent<'a>, RowCategory> {
    let [sub, ts, tower] = fields else {
        return Err(RowCategory::MalformedRow);
    };
    if !valid_subscriber(sub) || tower.is_empty() {
        return Err(RowCategory::MalformedRow);
    }
    let timestamp = parse_timestamp(ts).ok_or(RowCategory::BadTimestamp)?;
    if !range.contains(crate::day::Day::from_unix(timestamp)) {
        return Err(RowCategory::OutOfRange);
    }
    match registry.district_of(tower) {
        None => Err(RowCategory::UnknownTower),
        Some(None) => Err(RowCategory::Unlocated),
        Some(Some(district)) => Ok(ParsedEvent {
            subscriber_id: sub,
            timestamp,
            tower_id: tower,
            district,
        }),
    }
}

/// File label used in reports: the file name, or the full path if it has none.
pub fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Stream one event file, handing every accepted event to `sink`.
/// Malformed rows and unknown towers are counted, never silently dropped.
pub fn parse_event_file(
    path: &Path,
    registry: &TowerRegistry,
    range: StudyRange,
    mut sink: impl FnMut(ParsedEvent<'_>) -> Result<()>,
) -> Result<RejectionReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::with_capacity(1 << 20, file));
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = ["subscriber_id", "timestamp", "tower_id"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::invalid(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let label = file_label(path);
    let mut counts: BTreeMap<RowCategory, u64> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let fields: Vec<&str> = record.iter().collect();
                let cat = match classify_row(&fields, registry, range) {
                    Ok(ev) => {
                        sink(ev)?;
                        RowCategory::Accepted
                    }
                    Err(cat) => cat,
                };
                *counts.entry(cat).or_default() += 1;
            }
            // Invalid UTF-8 and similar record-level problems.
            Err(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                *counts.entry(RowCategory::MalformedRow).or_default() += 1;
            }
            Err(e) => return Err(Error::csv(path, e)),
        }
    }
    let mut report = RejectionReport::default();
    for (cat, n) in counts {
        report.add(&label, cat, n);
    }
    Ok(report)
}

/// Parse a list of files into memory. Suitable for small inputs and tests;
/// large inputs go through [`crate::ingest::shard::ingest_to_shards`].
pub fn parse_event_stream(
    files: &[PathBuf],
    registry: &TowerRegistry,
    range: StudyRange,
) -> Result<(Vec<(CdrEvent, u32)>, RejectionReport)> {
    let mut events = Vec::new();
    let mut report = RejectionReport::default();
    for path in files {
        report.merge(parse_event_file(path, registry, range, |ev| {
            events.push((
                CdrEvent {
                    subscriber_id: ev.subscriber_id.to_string(),
                    timestamp: ev.timestamp,
                    tower_id: ev.tower_id.to_string(),
                },
                ev.district,
            ));
            Ok(())
        })?);
    }
    Ok((events, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::day::Day;
    use crate::ingest::geometry::{DistrictGeometry, Districts};
    use crate::ingest::towers::Tower;
    use crate::spatial::geom::{Point, Polygon};
    use std::io::Write;

    fn registry() -> TowerRegistry {
        let ring = vec![
            Point::new(60.0, 30.0),
            Point::new(70.0, 30.0),
            Point::new(70.0, 35.0),
            Point::new(60.0, 35.0),
            Point::new(60.0, 30.0),
        ];
        let d = Districts::new(vec![DistrictGeometry::new("D01", "P1", vec![Polygon::new(ring, vec![])]).unwrap()]).unwrap();
        let towers = [
            Tower::new("T17", 65.0, 32.0),
            Tower::new("T18", 66.0, 32.0),
            Tower::new("TOUT", 10.0, 10.0),
        ];
        TowerRegistry::new(&towers, &d).unwrap()
    }

    fn range() -> StudyRange {
        StudyRange::new(Day::from_ymd(2014, 1, 1).unwrap(), Day::from_ymd(2016, 12, 31).unwrap())
    }

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        write!(f, "subscriber_id,timestamp,tower_id\n{body}").unwrap();
        p
    }

    #[test]
    fn parses_a_valid_row() {
        let reg = registry();
        let ev = classify_row(&["h1", "2015-04-02T08:00:00Z", "T17"], &reg, range()).unwrap();
        assert_eq!(ev.subscriber_id, "h1");
        assert_eq!(ev.timestamp, Day::from_ymd(2015, 4, 2).unwrap().unix_start() + 8 * 3600);
        assert_eq!(ev.district, 0);
    }

    #[test]
    fn invalid_calendar_date_is_bad_timestamp() {
        let reg = registry();
        assert_eq!(
            classify_row(&["h1", "2015-13-40", "T17"], &reg, range()),
            Err(RowCategory::BadTimestamp)
        );
        assert_eq!(
            classify_row(&["h1", "2015-13-40T00:00:00Z", "T17"], &reg, range()),
            Err(RowCategory::BadTimestamp)
        );
    }

    #[test]
    fn categorizes_every_failure_mode() {
        let reg = registry();
        let r = range();
        assert_eq!(classify_row(&["h1", "2015-04-02T08:00:00Z"], &reg, r), Err(RowCategory::MalformedRow));
        assert_eq!(classify_row(&["", "2015-04-02T08:00:00Z", "T17"], &reg, r), Err(RowCategory::MalformedRow));
        assert_eq!(classify_row(&["h1", "2019-04-02T08:00:00Z", "T17"], &reg, r), Err(RowCategory::OutOfRange));
        assert_eq!(classify_row(&["h1", "2015-04-02T08:00:00Z", "T99"], &reg, r), Err(RowCategory::UnknownTower));
        assert_eq!(classify_row(&["h1", "2015-04-02T08:00:00Z", "TOUT"], &reg, r), Err(RowCategory::Unlocated));
    }

    #[test]
    fn three_row_file_with_unknown_tower() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "ev.csv",
            "h1,2015-04-02T08:00:00Z,T17\nh2,2015-04-02T09:00:00Z,T99\nh1,2015-04-03T08:00:00Z,T18\n",
        );
        let (events, report) = parse_event_stream(&[p], &registry(), range()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(report.count("ev.csv", RowCategory::UnknownTower), 1);
        assert_eq!(report.rejected(), 1);
        assert_eq!(report.rows_in_file("ev.csv"), 3);
    }

    #[test]
    fn conservation_holds_with_garbage_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "ev.csv",
            "h1,2015-04-02T08:00:00Z,T17\ngarbage\nh3,notatime,T17\nh4,2015-04-02T08:00:00Z,T17,extra\nh5,2015-04-02T08:00:00Z,TOUT\n",
        );
        let (events, report) = parse_event_stream(&[p], &registry(), range()).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(report.rows_in_file("ev.csv"), 5);
        assert_eq!(report.count("ev.csv", RowCategory::MalformedRow), 2);
        assert_eq!(report.count("ev.csv", RowCategory::Unlocated), 1);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        let err = parse_event_stream(&[PathBuf::from("/nonexistent/ev.csv")], &registry(), range());
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
