//! Calendar quarters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::FlowError;

/// A calendar quarter, ordered by `(year, quarter)`.
///
/// The textual form is `YYYYQn`, e.g. `2018Q3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuarterId {
    year: i32,
    quarter: u8,
}

impl QuarterId {
    pub fn new(year: i32, quarter: u8) -> Result<Self, FlowError> {
        if !(1..=4).contains(&quarter) {
            return Err(FlowError::BadQuarter(format!("{year}Q{quarter}")));
        }
        Ok(Self { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    /// Quarters since year 0, Q1. Used for offsets and differences.
    fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(4) as i32,
            quarter: (ord.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn succ(self) -> Self {
        self.offset(1)
    }

    pub fn pred(self) -> Self {
        self.offset(-1)
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    /// Signed number of quarters from `other` to `self`.
    pub fn since(self, other: QuarterId) -> i64 {
        self.ordinal() - other.ordinal()
    }

    /// Inclusive range of quarters; empty if `end < start`.
    pub fn range_inclusive(start: QuarterId, end: QuarterId) -> Vec<QuarterId> {
        (start.ordinal()..=end.ordinal())
            .map(Self::from_ordinal)
            .collect()
    }
}

impl fmt::Display for QuarterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}Q{}", self.year, self.quarter)
    }
}

impl FromStr for QuarterId {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FlowError::BadQuarter(s.to_string());
        let bytes = s.as_bytes();
        if bytes.len() != 6 || bytes[4] != b'Q' || !bytes[..4].iter().all(u8::is_ascii_digit) {
            return Err(bad());
        }
        let year: i32 = s[..4].parse().map_err(|_| bad())?;
        let quarter = match bytes[5] {
            b @ b'1'..=b'4' => b - b'0',
            _ => return Err(bad()),
        };
        Self::new(year, quarter)
    }
}

impl Serialize for QuarterId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuarterId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive window of quarters, written `2016Q1:2018Q3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarterWindow {
    pub start: QuarterId,
    pub end: QuarterId,
}

impl QuarterWindow {
    pub fn new(start: QuarterId, end: QuarterId) -> Result<Self, FlowError> {
        if end < start {
            return Err(FlowError::BadWindow(format!("{start}:{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn quarters(&self) -> Vec<QuarterId> {
        QuarterId::range_inclusive(self.start, self.end)
    }

    pub fn len(&self) -> usize {
        (self.end.since(self.start) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, q: QuarterId) -> bool {
        self.start <= q && q <= self.end
    }
}

impl fmt::Display for QuarterWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for QuarterWindow {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| FlowError::BadWindow(s.to_string()))?;
        Self::new(a.trim().parse()?, b.trim().parse()?)
    }
}
