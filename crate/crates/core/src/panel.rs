//! Longitudinal person-quarter microdata: schema, parsing, linkage of
//! consecutive quarters into transitions, and subgroup filters.
//!
//! The on-disk schema is a CSV with header
//! `person_id,period,state,weight,sex,age,education,region`; empty
//! stratifier fields mean "unknown". Files ending in `.gz` are gzip
//! compressed.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::flow::StateSpace;
use crate::quarter::QuarterId;

pub const COLUMNS: [&str; 8] = [
    "person_id",
    "period",
    "state",
    "weight",
    "sex",
    "age",
    "education",
    "region",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    M,
    F,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Education {
    Low,
    High,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    NorthCenter,
    South,
    Unknown,
}

impl Sex {
    fn code(self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
            Sex::Unknown => "",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "M" | "m" => Some(Sex::M),
            "F" | "f" => Some(Sex::F),
            "" => Some(Sex::Unknown),
            _ => None,
        }
    }
}

impl Education {
    fn code(self) -> &'static str {
        match self {
            Education::Low => "low",
            Education::High => "high",
            Education::Unknown => "",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(Education::Low),
            "high" => Some(Education::High),
            "" => Some(Education::Unknown),
            _ => None,
        }
    }
}

impl Region {
    fn code(self) -> &'static str {
        match self {
            Region::NorthCenter => "north_center",
            Region::South => "south",
            Region::Unknown => "",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "north_center" => Some(Region::NorthCenter),
            "south" => Some(Region::South),
            "" => Some(Region::Unknown),
            _ => None,
        }
    }
}

/// One person observed in one quarter. `state` indexes the panel's
/// [`StateSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct PersonQuarterRecord {
    pub person_id: String,
    pub period: QuarterId,
    pub state: usize,
    pub weight: f64,
    pub sex: Sex,
    pub age: Option<u32>,
    pub education: Education,
    pub region: Region,
}

/// Person-quarter records together with the state space they index into.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub space: StateSpace,
    pub records: Vec<PersonQuarterRecord>,
}

impl Panel {
    pub fn new(space: StateSpace, records: Vec<PersonQuarterRecord>) -> Self {
        Self { space, records }
    }

    /// First and last quarter present, if any.
    pub fn span(&self) -> Option<(QuarterId, QuarterId)> {
        let first = self.records.iter().map(|r| r.period).min()?;
        let last = self.records.iter().map(|r| r.period).max()?;
        Some((first, last))
    }
}

/// A quarter-on-quarter move by one person, dated at the destination quarter.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub person_id: String,
    pub from: usize,
    pub to: usize,
    pub period: QuarterId,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub space: StateSpace,
    /// Inclusive age band kept at parse time; records with unknown age are
    /// always kept.
    pub working_age: Option<(u32, u32)>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            space: StateSpace::canonical(),
            working_age: Some((15, 64)),
        }
    }
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

/// Reads a panel file. Row numbers in errors are 1-based data rows.
pub fn parse_panel(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<Panel, IngestError> {
    let path = path.as_ref();
    read_panel(open_reader(path)?, opts).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_panel<R: Read>(reader: R, opts: &ParseOptions) -> Result<Panel, IngestError> {
    let io_err = |e: csv::Error| IngestError::Io {
        path: String::new(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(io_err)?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }
    let [c_id, c_period, c_state, c_weight, c_sex, c_age, c_edu, c_region] = idx;

    let mut records = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row_no = n + 1;
        let row = row.map_err(io_err)?;
        if row.len() != headers.len() {
            return Err(IngestError::FieldCount {
                row: row_no,
                expected: headers.len(),
                found: row.len(),
            });
        }
        let field = |c: usize| row.get(c).unwrap_or("");
        let bad = |column: &str, value: &str| IngestError::BadField {
            row: row_no,
            column: column.to_string(),
            value: value.to_string(),
        };

        let period = QuarterId::from_str(field(c_period)).map_err(|_| IngestError::BadQuarterFormat {
            row: row_no,
            value: field(c_period).to_string(),
        })?;
        let state = opts
            .space
            .index_of(field(c_state))
            .ok_or_else(|| IngestError::BadStateLabel {
                row: row_no,
                label: field(c_state).to_string(),
            })?;
        let weight = match field(c_weight).parse::<f64>() {
            Ok(w) if w > 0.0 && w.is_finite() => w,
            _ => {
                return Err(IngestError::NonPositiveWeight {
                    row: row_no,
                    weight: field(c_weight).to_string(),
                })
            }
        };
        let sex = Sex::parse(field(c_sex)).ok_or_else(|| bad("sex", field(c_sex)))?;
        let age = match field(c_age) {
            "" => None,
            s => Some(s.parse::<u32>().map_err(|_| bad("age", s))?),
        };
        let education = Education::parse(field(c_edu)).ok_or_else(|| bad("education", field(c_edu)))?;
        let region = Region::parse(field(c_region)).ok_or_else(|| bad("region", field(c_region)))?;

        if let (Some((lo, hi)), Some(a)) = (opts.working_age, age) {
            if a < lo || a > hi {
                continue;
            }
        }
        records.push(PersonQuarterRecord {
            person_id: field(c_id).to_string(),
            period,
            state,
            weight,
            sex,
            age,
            education,
            region,
        });
    }
    Ok(Panel::new(opts.space.clone(), records))
}

/// Writes a panel in the documented schema; gzip if the path ends in `.gz`.
pub fn write_panel(path: impl AsRef<Path>, panel: &Panel) -> Result<(), IngestError> {
    let path = path.as_ref();
    let io = |source: std::io::Error| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut sink: Box<dyn Write> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzEncoder::new(BufWriter::new(file), flate2::Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    write_records(&mut sink, panel).map_err(io)?;
    sink.flush().map_err(io)
}

pub fn write_records<W: Write>(out: &mut W, panel: &Panel) -> std::io::Result<()> {
    writeln!(out, "{}", COLUMNS.join(","))?;
    for r in &panel.records {
        let age = r.age.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.person_id,
            r.period,
            panel.space.label(r.state),
            r.weight,
            r.sex.code(),
            age,
            r.education.code(),
            r.region.code()
        )?;
    }
    Ok(())
}

/// Which wave's sampling weight a linked transition carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    Destination,
    Origin,
}

/// Links each person's observations in consecutive quarters `(t-1, t)`
/// into one transition dated `t`. Observations separated by a gap yield
/// nothing. Output is sorted by `(period, person_id)`.
pub fn link_transitions(
    records: &[PersonQuarterRecord],
    weight_source: WeightSource,
) -> Result<Vec<TransitionRecord>, IngestError> {
    let mut by_person: HashMap<&str, Vec<&PersonQuarterRecord>> = HashMap::new();
    for r in records {
        by_person.entry(r.person_id.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (person, mut obs) in by_person {
        obs.sort_by_key(|r| r.period);
        for pair in obs.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            if prev.period == cur.period {
                return Err(IngestError::DuplicateObservation {
                    person: person.to_string(),
                    period: cur.period,
                });
            }
            if cur.period.since(prev.period) == 1 {
                out.push(TransitionRecord {
                    person_id: person.to_string(),
                    from: prev.state,
                    to: cur.state,
                    period: cur.period,
                    weight: match weight_source {
                        WeightSource::Destination => cur.weight,
                        WeightSource::Origin => prev.weight,
                    },
                });
            }
        }
    }
    out.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.person_id.cmp(&b.person_id)));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Sex { value: Sex },
    AgeBelow { cutoff: u32 },
    AgeAtLeast { cutoff: u32 },
    Education { value: Education },
    Region { value: Region },
}

impl Condition {
    fn holds(&self, r: &PersonQuarterRecord) -> bool {
        match *self {
            Condition::Sex { value } => r.sex == value,
            Condition::AgeBelow { cutoff } => r.age.is_some_and(|a| a < cutoff),
            Condition::AgeAtLeast { cutoff } => r.age.is_some_and(|a| a >= cutoff),
            Condition::Education { value } => r.education == value,
            Condition::Region { value } => r.region == value,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Sex { value } => write!(f, "sex={}", value.code()),
            Condition::AgeBelow { cutoff } => write!(f, "age<{cutoff}"),
            Condition::AgeAtLeast { cutoff } => write!(f, "age>={cutoff}"),
            Condition::Education { value } => write!(f, "edu={}", value.code()),
            Condition::Region { value } => write!(f, "region={}", value.code()),
        }
    }
}

/// Default age threshold separating young workers.
pub const YOUNG_CUTOFF: u32 = 35;

/// Conjunction of stratifier conditions. The empty conjunction keeps
/// everything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupFilter {
    pub name: String,
    pub conditions: Vec<Condition>,
}

impl SubgroupFilter {
    pub fn all() -> Self {
        Self {
            name: "all".into(),
            conditions: vec![],
        }
    }

    pub fn young(cutoff: u32) -> Self {
        Self::from_conditions(vec![Condition::AgeBelow { cutoff }])
    }

    pub fn from_conditions(conditions: Vec<Condition>) -> Self {
        let name = if conditions.is_empty() {
            "all".to_string()
        } else {
            conditions.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        Self { name, conditions }
    }

    pub fn matches(&self, r: &PersonQuarterRecord) -> bool {
        self.conditions.iter().all(|c| c.holds(r))
    }

    pub fn is_all(&self) -> bool {
        self.conditions.is_empty()
    }
}

impl FromStr for SubgroupFilter {
    type Err = IngestError;

    /// Parses `sex=F`, `age<35`, `age>=35`, `edu=low`, `region=south`, or
    /// `all`, joined by `,` or `&`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::BadFilter(s.to_string());
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(Self::all());
        }
        let mut conditions = Vec::new();
        for term in s.split([',', '&']).map(str::trim) {
            let cond = if let Some(v) = term.strip_prefix("age<") {
                Condition::AgeBelow {
                    cutoff: v.parse().map_err(|_| bad())?,
                }
            } else if let Some(v) = term.strip_prefix("age>=") {
                Condition::AgeAtLeast {
                    cutoff: v.parse().map_err(|_| bad())?,
                }
            } else if let Some(v) = term.strip_prefix("sex=") {
                Condition::Sex {
                    value: Sex::parse(v).filter(|x| *x != Sex::Unknown).ok_or_else(bad)?,
                }
            } else if let Some(v) = term.strip_prefix("edu=").or_else(|| term.strip_prefix("education=")) {
                Condition::Education {
                    value: Education::parse(v)
                        .filter(|x| *x != Education::Unknown)
                        .ok_or_else(bad)?,
                }
            } else if let Some(v) = term.strip_prefix("region=") {
                Condition::Region {
                    value: Region::parse(v).filter(|x| *x != Region::Unknown).ok_or_else(bad)?,
                }
            } else {
                return Err(bad());
            };
            conditions.push(cond);
        }
        Ok(Self::from_conditions(conditions))
    }
}

/// Keeps the person-quarter records that satisfy `filter`. Filtering is
/// applied before linking, so a transition survives only if both of its
/// quarters pass.
pub fn apply_filter(records: &[PersonQuarterRecord], filter: &SubgroupFilter) -> Vec<PersonQuarterRecord> {
    records.iter().filter(|r| filter.matches(r)).cloned().collect()
}
