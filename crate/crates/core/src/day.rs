//! Calendar days as integer offsets from the Unix epoch (UTC).

use std::fmt;
use std::ops::{Add, Sub};

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const SECONDS_PER_DAY: i64 = 86_400;

/// A UTC calendar day. Day boundaries are UTC midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i32);

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

impl Day {
    pub fn from_date(date: NaiveDate) -> Self {
        Day((date - epoch()).num_days() as i32)
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(Self::from_date)
    }

    /// Day containing a Unix timestamp (seconds, UTC).
    pub fn from_unix(ts: i64) -> Self {
        Day(ts.div_euclid(SECONDS_PER_DAY) as i32)
    }

    /// First day of `year` plus `doy - 1` days (`doy` is 1-based).
    pub fn from_year_doy(year: i32, doy: u32) -> Option<Self> {
        NaiveDate::from_yo_opt(year, doy).map(Self::from_date)
    }

    pub fn to_date(self) -> NaiveDate {
        if self.0 >= 0 {
            epoch() + Days::new(self.0 as u64)
        } else {
            epoch() - Days::new(self.0.unsigned_abs() as u64)
        }
    }

    pub fn year(self) -> i32 {
        self.to_date().year()
    }

    /// 1-based day of year.
    pub fn ordinal(self) -> u32 {
        self.to_date().ordinal()
    }

    pub fn first_of_year(year: i32) -> Self {
        Self::from_ymd(year, 1, 1).expect("valid year")
    }

    pub fn last_of_year(year: i32) -> Self {
        Self::from_ymd(year, 12, 31).expect("valid year")
    }

    pub fn unix_start(self) -> i64 {
        self.0 as i64 * SECONDS_PER_DAY
    }
}

impl Add<i32> for Day {
    type Output = Day;
    fn add(self, rhs: i32) -> Day {
        Day(self.0 + rhs)
    }
}

impl Sub<i32> for Day {
    type Output = Day;
    fn sub(self, rhs: i32) -> Day {
        Day(self.0 - rhs)
    }
}

impl Sub<Day> for Day {
    type Output = i32;
    fn sub(self, rhs: Day) -> i32 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_date().format("%Y-%m-%d"))
    }
}

impl std::str::FromStr for Day {
    type Err = chrono::ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").map(Day::from_date)
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of days covered by a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRange {
    pub start: Day,
    pub end: Day,
}

impl StudyRange {
    pub fn new(start: Day, end: Day) -> Self {
        assert!(start <= end, "study range start after end");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, day: Day) -> bool {
        day >= self.start && day <= self.end
    }

    /// Offset of `day` from the start, if inside the range.
    pub fn index(&self, day: Day) -> Option<usize> {
        self.contains(day).then(|| (day - self.start) as usize)
    }

    pub fn day(&self, index: usize) -> Day {
        self.start + index as i32
    }

    pub fn days(&self) -> impl Iterator<Item = Day> + '_ {
        (self.start.0..=self.end.0).map(Day)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_dates() {
        let d = Day::from_ymd(2015, 4, 7).unwrap();
        assert_eq!(d.to_string(), "2015-04-07");
        assert_eq!("2015-04-07".parse::<Day>().unwrap(), d);
        assert_eq!(d.ordinal(), 97);
        assert_eq!(Day::from_year_doy(2015, 97), Some(d));
        assert_eq!(Day(-1).to_string(), "1969-12-31");
    }

    #[test]
    fn unix_timestamps_floor_to_utc_day() {
        let d = Day::from_ymd(2015, 4, 2).unwrap();
        assert_eq!(Day::from_unix(d.unix_start()), d);
        assert_eq!(Day::from_unix(d.unix_start() + 86_399), d);
        assert_eq!(Day::from_unix(d.unix_start() - 1), d - 1);
    }
}
