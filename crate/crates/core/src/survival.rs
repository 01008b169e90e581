//! Observed competing-risks data and the counting-process bookkeeping shared
//! by every estimator.
//!
//! A subject contributes `O = (X, A, T~, D~)` where `T~ = min(T, C)` and the
//! observed event code is 0 (censored), 1 (main event) or 2 (competing event).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of distinct levels of a predictive covariate.
pub const DEFAULT_MAX_LEVELS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    Censored = 0,
    Main = 1,
    Competing = 2,
}

impl EventType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EventType::Censored),
            1 => Some(EventType::Main),
            2 => Some(EventType::Competing),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub time: f64,
    pub event: EventType,
    /// Binary treatment, 0 or 1.
    pub treatment: u8,
    pub covariates: Vec<f64>,
}

impl SubjectRecord {
    /// Treatment as an arm index (0 or 1).
    #[inline]
    pub fn arm(&self) -> usize {
        self.treatment as usize
    }
}

/// Membership in the subdistribution risk set at `t`: still event free, or
/// already failed from the competing cause. Censoring is handled by IPCW
/// weights, not here.
pub fn subdist_risk_indicator(subject: &SubjectRecord, t: f64) -> u8 {
    let still_free = subject.time >= t;
    let competed = subject.event == EventType::Competing && subject.time < t;
    u8::from(still_free || competed)
}

/// `N(t) = 1(T~ <= t, D~ = 1)`.
pub fn counting_process(subject: &SubjectRecord, t: f64) -> u8 {
    u8::from(subject.event == EventType::Main && subject.time <= t)
}

/// `Y(t) = 1 - N(t-)`.
pub fn at_risk(subject: &SubjectRecord, t: f64) -> u8 {
    u8::from(!(subject.event == EventType::Main && subject.time < t))
}

/// Levels of the predictive covariates that define one subgroup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupKey {
    pub values: Vec<f64>,
}

impl Eq for SubgroupKey {}

impl PartialOrd for SubgroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SubgroupKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.values.iter().zip(&other.values) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.values.len().cmp(&other.values.len())
    }
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.values.is_empty() {
            return write!(f, "all");
        }
        write!(f, "(")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// A validated cohort together with its predictive/prognostic designation
/// and the induced subgroup partition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CohortDataset {
    subjects: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
    predictive_idx: Vec<usize>,
    prognostic_idx: Vec<usize>,
    max_levels: usize,
    #[serde(skip)]
    subgroups: BTreeMap<SubgroupKey, Vec<usize>>,
}

impl CohortDataset {
    pub fn new(
        subjects: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
        predictive_idx: Vec<usize>,
        prognostic_idx: Vec<usize>,
        max_levels: usize,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidData("no subjects".into()));
        }
        let p = covariate_names.len();
        for (row, s) in subjects.iter().enumerate() {
            if !s.time.is_finite() {
                return Err(Error::InvalidData(format!("row {row}: non-finite time")));
            }
            if s.time < 0.0 {
                return Err(Error::NegativeTime { row, time: s.time });
            }
            if s.treatment > 1 {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: s.treatment.to_string(),
                });
            }
            if s.covariates.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {row}: {} covariates, expected {p}",
                    s.covariates.len()
                )));
            }
            if s.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!("row {row}: non-finite covariate")));
            }
        }
        for &j in predictive_idx.iter().chain(&prognostic_idx) {
            if j >= p {
                return Err(Error::InvalidData(format!("covariate index {j} out of range")));
            }
        }
        if let Some(j) = predictive_idx.iter().find(|j| prognostic_idx.contains(j)) {
            return Err(Error::InvalidData(format!(
                "`{}` is both predictive and prognostic",
                covariate_names[*j]
            )));
        }
        let mut ds = CohortDataset {
            subjects,
            covariate_names,
            predictive_idx,
            prognostic_idx,
            max_levels,
            subgroups: BTreeMap::new(),
        };
        ds.rebuild_subgroups()?;
        Ok(ds)
    }

    fn rebuild_subgroups(&mut self) -> Result<()> {
        for &j in &self.predictive_idx {
            let mut levels: Vec<f64> = self.subjects.iter().map(|s| s.covariates[j]).collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            if levels.len() > self.max_levels {
                return Err(Error::TooManyLevels {
                    name: self.covariate_names[j].clone(),
                    levels: levels.len(),
                    max: self.max_levels,
                });
            }
        }
        let mut groups: BTreeMap<SubgroupKey, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.subjects.iter().enumerate() {
            let key = SubgroupKey {
                values: self.predictive_idx.iter().map(|&j| s.covariates[j]).collect(),
            };
            groups.entry(key).or_default().push(i);
        }
        self.subgroups = groups;
        Ok(())
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn predictive_idx(&self) -> &[usize] {
        &self.predictive_idx
    }

    pub fn prognostic_idx(&self) -> &[usize] {
        &self.prognostic_idx
    }

    pub fn max_levels(&self) -> usize {
        self.max_levels
    }

    /// Subgroups keyed by predictive levels, each holding subject indices
    /// in ascending order.
    pub fn subgroups(&self) -> &BTreeMap<SubgroupKey, Vec<usize>> {
        &self.subgroups
    }

    /// Human-readable label such as `V1=0;V2=1`.
    pub fn subgroup_label(&self, key: &SubgroupKey) -> String {
        if key.values.is_empty() {
            return "all".to_string();
        }
        self.predictive_idx
            .iter()
            .zip(&key.values)
            .map(|(&j, v)| format!("{}={}", self.covariate_names[j], v))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// The subjects at `indices` (repeats allowed) as a new cohort with the
    /// same covariate roles.
    pub fn subset(&self, indices: &[usize]) -> Result<CohortDataset> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        CohortDataset::new(
            subjects,
            self.covariate_names.clone(),
            self.predictive_idx.clone(),
            self.prognostic_idx.clone(),
            self.max_levels,
        )
    }

    /// Same subjects, different predictive set (the subgroup partition is
    /// rebuilt).
    pub fn with_predictive(&self, predictive_idx: Vec<usize>) -> Result<CohortDataset> {
        CohortDataset::new(
            self.subjects.clone(),
            self.covariate_names.clone(),
            predictive_idx,
            self.prognostic_idx.clone(),
            self.max_levels,
        )
    }

    /// Data of a single subgroup.
    pub fn subgroup_data(&self, key: &SubgroupKey) -> Result<CohortDataset> {
        let idx = self
            .subgroups
            .get(key)
            .ok_or_else(|| Error::EmptySubgroup(key.to_string()))?;
        self.subset(idx)
    }

    /// Shares of censored, main and competing outcomes, in that order.
    pub fn event_shares(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for s in &self.subjects {
            counts[s.event.code() as usize] += 1;
        }
        let n = self.subjects.len() as f64;
        counts.map(|c| c as f64 / n)
    }

    /// Empirical quantile (linear interpolation between order statistics)
    /// of the observed times of uncensored subjects.
    pub fn event_time_quantile(&self, q: f64) -> Option<f64> {
        let mut times: Vec<f64> = self
            .subjects
            .iter()
            .filter(|s| s.event != EventType::Censored)
            .map(|s| s.time)
            .collect();
        if times.is_empty() {
            return None;
        }
        times.sort_by(f64::total_cmp);
        Some(crate::stats::quantile_sorted(&times, q))
    }
}

/// Distinct main-event times of a fitting cohort plus the horizon `t0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    horizon: f64,
}

impl TimeGrid {
    pub fn from_subjects(subjects: &[SubjectRecord], horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidData(format!("horizon must be positive, got {horizon}")));
        }
        let mut times: Vec<f64> = subjects
            .iter()
            .filter(|s| s.event == EventType::Main)
            .map(|s| s.time)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(TimeGrid { times, horizon })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of grid points `<= t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Number of grid points at or before the horizon.
    pub fn horizon_len(&self) -> usize {
        self.count_le(self.horizon)
    }

    /// Index of an exact grid time.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|s| s.total_cmp(&t)).ok()
    }
}

/// Header plus string cells, as read from a CSV file.
#[derive(Clone, Debug, Default)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(RawTable { headers, rows })
    }
}

const FIXED_COLUMNS: [&str; 4] = ["id", "time", "event", "a"];

/// Validate an ingested table with columns `id,time,event,a,<covariates...>`.
///
/// `l_names` empty means every non-predictive covariate is prognostic.
pub fn validate_cohort(
    table: &RawTable,
    v_names: &[&str],
    l_names: &[&str],
    max_levels: usize,
) -> Result<CohortDataset> {
    if table.rows.is_empty() {
        return Err(Error::InvalidData("no rows".into()));
    }
    let col = |name: &str| {
        table
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_id, c_time, c_event, c_a) = (col("id")?, col("time")?, col("event")?, col("a")?);
    let cov_cols: Vec<usize> = (0..table.headers.len())
        .filter(|c| !FIXED_COLUMNS.contains(&table.headers[*c].as_str()))
        .collect();
    let covariate_names: Vec<String> = cov_cols.iter().map(|&c| table.headers[c].clone()).collect();
    let lookup = |name: &str| {
        covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let predictive_idx = v_names.iter().map(|n| lookup(n)).collect::<Result<Vec<_>>>()?;
    let prognostic_idx = if l_names.is_empty() {
        (0..covariate_names.len()).filter(|j| !predictive_idx.contains(j)).collect()
    } else {
        l_names.iter().map(|n| lookup(n)).collect::<Result<Vec<_>>>()?
    };

    let parse = |row: usize, c: usize| -> Result<f64> {
        let cell = table.rows[row].get(c).map(String::as_str).unwrap_or("");
        cell.parse::<f64>().map_err(|_| {
            Error::InvalidData(format!("row {row}: cannot parse `{cell}` in `{}`", table.headers[c]))
        })
    };
    let mut subjects = Vec::with_capacity(table.rows.len());
    for (row, cells) in table.rows.iter().enumerate() {
        if cells.len() != table.headers.len() {
            return Err(Error::InvalidData(format!("row {row}: wrong number of fields")));
        }
        let time = parse(row, c_time)?;
        if time < 0.0 {
            return Err(Error::NegativeTime { row, time });
        }
        let event = match cells[c_event].as_str() {
            "0" => EventType::Censored,
            "1" => EventType::Main,
            "2" => EventType::Competing,
            other => {
                return Err(Error::InvalidEvent {
                    row,
                    code: other.to_string(),
                })
            }
        };
        let treatment = match cells[c_a].as_str() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let covariates = cov_cols.iter().map(|&c| parse(row, c)).collect::<Result<Vec<_>>>()?;
        subjects.push(SubjectRecord {
            id: cells[c_id].clone(),
            time,
            event,
            treatment,
            covariates,
        });
    }
    CohortDataset::new(subjects, covariate_names, predictive_idx, prognostic_idx, max_levels)
}

/// Read and validate a cohort CSV.
pub fn read_cohort_csv<R: Read>(reader: R, v_names: &[&str], l_names: &[&str]) -> Result<CohortDataset> {
    let table = RawTable::from_reader(reader)?;
    validate_cohort(&table, v_names, l_names, DEFAULT_MAX_LEVELS)
}

/// Write a cohort in the ingestion schema.
pub fn write_cohort_csv<W: Write>(data: &CohortDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(data.covariate_names().iter().map(String::as_str));
    wtr.write_record(&header)?;
    for s in data.subjects() {
        let mut rec = vec![
            s.id.clone(),
            s.time.to_string(),
            s.event.code().to_string(),
            s.treatment.to_string(),
        ];
        rec.extend(s.covariates.iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
