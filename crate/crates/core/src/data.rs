//! Weekly mortality panels: CSV ingestion, validation, the southern
//! hemisphere reciprocal transform and log-rate views.
//!
//! Rates are kept exactly as read. The hemisphere transform is recorded as
//! a per-country flag, so the log view of a transformed country is the
//! negated log of its raw rates and applying the transform twice restores
//! the original tensor bit for bit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const WEEKS_PER_YEAR: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    #[default]
    North,
    South,
}

/// ISO year / ISO week label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct WeekLabel {
    pub year: i32,
    pub week: u32,
}

impl WeekLabel {
    pub fn new(year: i32, week: u32) -> Self {
        Self { year, week }
    }

    /// `count` consecutive labels starting at `start`, using 52 weeks per
    /// year (week 53 is never produced).
    pub fn sequence(start: WeekLabel, count: usize) -> Vec<WeekLabel> {
        let mut out = Vec::with_capacity(count);
        let mut cur = start;
        for _ in 0..count {
            out.push(cur);
            cur = if cur.week >= WEEKS_PER_YEAR as u32 {
                WeekLabel::new(cur.year + 1, 1)
            } else {
                WeekLabel::new(cur.year, cur.week + 1)
            };
        }
        out
    }

    /// The preceding label on the 52-week calendar used by [`sequence`](Self::sequence).
    pub fn previous(self) -> WeekLabel {
        if self.week > 1 {
            WeekLabel::new(self.year, self.week - 1)
        } else {
            WeekLabel::new(self.year - 1, WEEKS_PER_YEAR as u32)
        }
    }
}

impl fmt::Display for WeekLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl FromStr for WeekLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad week label {s:?}, expected YYYY-Www"));
        let (y, w) = s.trim().split_once('-').ok_or_else(bad)?;
        let w = w.trim_start_matches(['W', 'w']);
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let week = w.parse::<u32>().map_err(|_| bad())?;
        if !(1..=53).contains(&week) {
            return Err(bad());
        }
        Ok(WeekLabel { year, week })
    }
}

/// Number of ISO weeks (52 or 53) in `year`.
pub fn iso_weeks_in_year(year: i32) -> u32 {
    // A year has 53 ISO weeks iff Jan 1 is a Thursday, or it is a leap
    // year and Jan 1 is a Wednesday.
    let jan1 = day_of_week(year, 1, 1);
    let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    if jan1 == 4 || (leap && jan1 == 3) {
        53
    } else {
        52
    }
}

// 0 = Sunday .. 6 = Saturday (Sakamoto).
fn day_of_week(year: i32, month: u32, day: u32) -> u32 {
    const T: [i32; 12] = [0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4];
    let y = if month < 3 { year - 1 } else { year };
    let v = y + y / 4 - y / 100 + y / 400 + T[(month - 1) as usize] + day as i32;
    v.rem_euclid(7) as u32
}

/// Fractional part of the year for one week, stored as the week position
/// within a 52-week cycle so that advancing by 52 weeks is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct YearFraction {
    index: u8,
}

impl YearFraction {
    pub fn from_index(index: usize) -> Self {
        Self {
            index: (index % WEEKS_PER_YEAR) as u8,
        }
    }

    /// Fraction for an ISO week number (week 1 maps to 0).
    pub fn from_week(week: u32) -> Self {
        Self::from_index(week.saturating_sub(1) as usize)
    }

    pub fn index(self) -> usize {
        self.index as usize
    }

    pub fn value(self) -> f64 {
        self.index as f64 / WEEKS_PER_YEAR as f64
    }

    pub fn advance(self, weeks: usize) -> Self {
        Self::from_index(self.index as usize + weeks)
    }
}

/// Country x age-group x week panel of central mortality rates.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityTensor {
    // index: (j * n_ages + x) * n_weeks + t
    rates: Vec<f64>,
    countries: Vec<String>,
    age_groups: Vec<String>,
    weeks: Vec<WeekLabel>,
    hemispheres: Vec<Hemisphere>,
    reciprocal: Vec<bool>,
    phase: usize,
}

impl MortalityTensor {
    /// Builds a tensor from raw rates laid out country-major, then age, then
    /// week. Validates positivity and the 52-weeks-per-year layout.
    pub fn from_rates(
        countries: Vec<String>,
        age_groups: Vec<String>,
        weeks: Vec<WeekLabel>,
        hemispheres: Vec<Hemisphere>,
        rates: Vec<f64>,
    ) -> Result<Self> {
        let (nj, nx, nt) = (countries.len(), age_groups.len(), weeks.len());
        if nj == 0 || nx == 0 || nt == 0 {
            return Err(Error::InvalidData("empty panel".into()));
        }
        if hemispheres.len() != nj {
            return Err(Error::InvalidData(format!(
                "{} hemisphere flags for {nj} countries",
                hemispheres.len()
            )));
        }
        if rates.len() != nj * nx * nt {
            return Err(Error::InvalidData(format!(
                "expected {} rates, got {}",
                nj * nx * nt,
                rates.len()
            )));
        }
        check_week_layout(&weeks)?;
        for j in 0..nj {
            for x in 0..nx {
                for t in 0..nt {
                    let v = rates[(j * nx + x) * nt + t];
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::NonPositiveRate {
                            country: countries[j].clone(),
                            age: age_groups[x].clone(),
                            week: weeks[t].to_string(),
                            value: v,
                        });
                    }
                }
            }
        }
        let phase = (weeks[0].week.max(1) as usize - 1) % WEEKS_PER_YEAR;
        Ok(Self {
            rates,
            reciprocal: vec![false; nj],
            countries,
            age_groups,
            weeks,
            hemispheres,
            phase,
        })
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_ages(&self) -> usize {
        self.age_groups.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn age_groups(&self) -> &[String] {
        &self.age_groups
    }

    pub fn weeks(&self) -> &[WeekLabel] {
        &self.weeks
    }

    pub fn hemispheres(&self) -> &[Hemisphere] {
        &self.hemispheres
    }

    /// Whether the reciprocal transform is currently applied to country `j`.
    pub fn is_reciprocal(&self, j: usize) -> bool {
        self.reciprocal[j]
    }

    pub fn reciprocal_flags(&self) -> &[bool] {
        &self.reciprocal
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == code)
    }

    fn offset(&self, j: usize, x: usize, t: usize) -> usize {
        (j * self.n_ages() + x) * self.n_weeks() + t
    }

    /// Rate as read from the source, ignoring the transform flag.
    pub fn raw_rate(&self, j: usize, x: usize, t: usize) -> f64 {
        self.rates[self.offset(j, x, t)]
    }

    /// Rate on the current (possibly reciprocal) scale.
    pub fn rate(&self, j: usize, x: usize, t: usize) -> f64 {
        let m = self.raw_rate(j, x, t);
        if self.reciprocal[j] {
            1.0 / m
        } else {
            m
        }
    }

    /// Log rates of one country on the current scale, `T x N`.
    pub fn log_panel(&self, j: usize) -> DMatrix<f64> {
        let sign = if self.reciprocal[j] { -1.0 } else { 1.0 };
        DMatrix::from_fn(self.n_weeks(), self.n_ages(), |t, x| {
            sign * self.raw_rate(j, x, t).ln()
        })
    }

    pub fn log_panels(&self) -> Vec<DMatrix<f64>> {
        (0..self.n_countries()).map(|j| self.log_panel(j)).collect()
    }

    /// Year fraction of every week in the panel.
    pub fn week_fractions(&self) -> Vec<YearFraction> {
        (0..self.n_weeks())
            .map(|t| YearFraction::from_index(self.phase + t))
            .collect()
    }

    /// Replaces every southern hemisphere country's rates by their
    /// reciprocals (or undoes it if already applied).
    pub fn apply_hemisphere_transform(mut self) -> Self {
        for (flag, h) in self.reciprocal.iter_mut().zip(&self.hemispheres) {
            if *h == Hemisphere::South {
                *flag = !*flag;
            }
        }
        self
    }

    /// Keeps weeks `range` (0-based, half open).
    pub fn slice_weeks(&self, range: std::ops::Range<usize>) -> Self {
        let nt = range.len();
        let mut rates = Vec::with_capacity(self.n_countries() * self.n_ages() * nt);
        for j in 0..self.n_countries() {
            for x in 0..self.n_ages() {
                for t in range.clone() {
                    rates.push(self.raw_rate(j, x, t));
                }
            }
        }
        Self {
            rates,
            countries: self.countries.clone(),
            age_groups: self.age_groups.clone(),
            weeks: self.weeks[range.clone()].to_vec(),
            hemispheres: self.hemispheres.clone(),
            reciprocal: self.reciprocal.clone(),
            phase: (self.phase + range.start) % WEEKS_PER_YEAR,
        }
    }

    /// Sub-panel with the given countries, in the given order.
    pub fn select_countries(&self, idx: &[usize]) -> Self {
        let (nx, nt) = (self.n_ages(), self.n_weeks());
        let mut rates = Vec::with_capacity(idx.len() * nx * nt);
        for &j in idx {
            let start = self.offset(j, 0, 0);
            rates.extend_from_slice(&self.rates[start..start + nx * nt]);
        }
        Self {
            rates,
            countries: idx.iter().map(|&j| self.countries[j].clone()).collect(),
            age_groups: self.age_groups.clone(),
            weeks: self.weeks.clone(),
            hemispheres: idx.iter().map(|&j| self.hemispheres[j]).collect(),
            reciprocal: idx.iter().map(|&j| self.reciprocal[j]).collect(),
            phase: self.phase,
        }
    }
}

fn check_week_layout(weeks: &[WeekLabel]) -> Result<()> {
    let mut per_year: BTreeMap<i32, usize> = BTreeMap::new();
    for w in weeks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let next_ok = (b.year == a.year && b.week == a.week + 1)
            || (b.year == a.year + 1 && b.week == 1);
        if !next_ok {
            return Err(Error::InvalidData(format!("weeks not contiguous: {a} then {b}")));
        }
    }
    for w in weeks {
        *per_year.entry(w.year).or_default() += 1;
    }
    for (&year, &count) in &per_year {
        if count != WEEKS_PER_YEAR {
            return Err(Error::RaggedYear { year, count });
        }
    }
    Ok(())
}

/// Treatment of ISO week 53 rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Week53Policy {
    /// Drop week 53 unless the year would otherwise have fewer than 52
    /// weeks inside the selected range.
    #[default]
    Auto,
    Drop,
    Keep,
}

/// One age group: its label and where its rates live in the file. For the
/// wide layout `key` is a column name; for the long layout it is the value
/// of the age column.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AgeColumn {
    pub label: String,
    pub key: String,
}

fn default_delimiter() -> char {
    ','
}
fn default_country() -> String {
    "CountryCode".into()
}
fn default_year() -> String {
    "Year".into()
}
fn default_week() -> String {
    "Week".into()
}
fn default_sex_value() -> String {
    "b".into()
}
fn default_ages() -> Vec<AgeColumn> {
    [("15-64", "R15_64"), ("65-74", "R65_74"), ("75-84", "R75_84"), ("85+", "R85p")]
        .iter()
        .map(|(l, k)| AgeColumn {
            label: (*l).into(),
            key: (*k).into(),
        })
        .collect()
}

/// Column mapping and selection for [`load_csv`]. Defaults follow the
/// STMF wide layout.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub delimiter: char,
    pub country_column: String,
    pub year_column: String,
    pub week_column: String,
    /// Column holding the sex code; rows are kept when it equals `sex_value`.
    /// An empty name disables the filter.
    pub sex_column: Option<String>,
    pub sex_value: String,
    /// Long layout: column with the age label. Wide layout when absent.
    pub age_column: Option<String>,
    /// Long layout: column with the rate.
    pub rate_column: Option<String>,
    pub age_groups: Vec<AgeColumn>,
    /// Countries to keep, in output order. Empty keeps every country found,
    /// sorted by code.
    pub countries: Vec<String>,
    /// Country codes located in the southern hemisphere.
    pub southern: Vec<String>,
    pub start: Option<String>,
    pub end: Option<String>,
    pub week53: Week53Policy,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            delimiter: default_delimiter(),
            country_column: default_country(),
            year_column: default_year(),
            week_column: default_week(),
            sex_column: Some("Sex".into()),
            sex_value: default_sex_value(),
            age_column: None,
            rate_column: None,
            age_groups: default_ages(),
            countries: Vec::new(),
            southern: Vec::new(),
            start: None,
            end: None,
            week53: Week53Policy::Auto,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.age_groups.is_empty() {
            return Err(Error::Config("no age groups configured".into()));
        }
        if self.age_column.is_some() != self.rate_column.is_some() {
            return Err(Error::Config(
                "long layout needs both age_column and rate_column".into(),
            ));
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Config("delimiter must be ASCII".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.countries {
            if !seen.insert(c) {
                return Err(Error::Config(format!("country {c} listed twice")));
            }
        }
        let (s, e) = (self.start_label()?, self.end_label()?);
        if let (Some(s), Some(e)) = (s, e) {
            if s > e {
                return Err(Error::Config(format!("start {s} after end {e}")));
            }
        }
        Ok(())
    }

    fn start_label(&self) -> Result<Option<WeekLabel>> {
        self.start.as_deref().map(str::parse).transpose()
    }

    fn end_label(&self) -> Result<Option<WeekLabel>> {
        self.end.as_deref().map(str::parse).transpose()
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Config(format!("column {name:?} not found in header")))
}

/// Reads a weekly mortality CSV into a validated tensor.
pub fn load_csv(path: impl AsRef<Path>, config: &IngestConfig) -> Result<MortalityTensor> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, config)
}

/// Same as [`load_csv`] for any reader.
pub fn read_csv<R: std::io::Read>(reader: R, config: &IngestConfig) -> Result<MortalityTensor> {
    config.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(config.delimiter as u8)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_country = column(&headers, &config.country_column)?;
    let c_year = column(&headers, &config.year_column)?;
    let c_week = column(&headers, &config.week_column)?;
    let c_sex = config
        .sex_column
        .as_deref()
        .filter(|s| !s.is_empty())
        .map(|s| column(&headers, s))
        .transpose()?;
    let n_ages = config.age_groups.len();
    // Wide: rate column per age. Long: (age column, rate column).
    let wide_cols: Vec<usize> = if config.age_column.is_none() {
        config
            .age_groups
            .iter()
            .map(|a| column(&headers, &a.key))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let long_cols = match (&config.age_column, &config.rate_column) {
        (Some(a), Some(r)) => Some((column(&headers, a)?, column(&headers, r)?)),
        _ => None,
    };
    let start = config.start_label()?;
    let end = config.end_label()?;
    let wanted: Option<BTreeSet<&str>> = if config.countries.is_empty() {
        None
    } else {
        Some(config.countries.iter().map(String::as_str).collect())
    };

    let mut cells: HashMap<(String, WeekLabel), Vec<Option<f64>>> = HashMap::new();
    let mut found: BTreeSet<String> = BTreeSet::new();
    let mut present_weeks: BTreeSet<WeekLabel> = BTreeSet::new();

    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        if let Some(cs) = c_sex {
            if field(cs) != config.sex_value {
                continue;
            }
        }
        let country = field(c_country).to_string();
        if let Some(w) = &wanted {
            if !w.contains(country.as_str()) {
                continue;
            }
        }
        let parse_int = |i: usize| -> Result<i64> {
            let raw = field(i);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0)
                .map(|v| v as i64)
                .ok_or_else(|| {
                    Error::InvalidData(format!("row {}: bad integer {raw:?}", line + 2))
                })
        };
        let label = WeekLabel::new(parse_int(c_year)? as i32, parse_int(c_week)? as u32);
        if start.is_some_and(|s| label < s) || end.is_some_and(|e| label > e) {
            continue;
        }
        found.insert(country.clone());
        present_weeks.insert(label);
        let slot = cells
            .entry((country, label))
            .or_insert_with(|| vec![None; n_ages]);
        let parse_rate = |raw: &str| -> Result<f64> {
            raw.parse::<f64>().map_err(|_| {
                Error::InvalidData(format!("row {}: bad rate {raw:?}", line + 2))
            })
        };
        if let Some((ca, cr)) = long_cols {
            let age = field(ca);
            if let Some(x) = config.age_groups.iter().position(|a| a.key == age) {
                slot[x] = Some(parse_rate(field(cr))?);
            }
        } else {
            for (x, &c) in wide_cols.iter().enumerate() {
                slot[x] = Some(parse_rate(field(c))?);
            }
        }
    }

    let countries: Vec<String> = if config.countries.is_empty() {
        found.iter().cloned().collect()
    } else {
        for c in &config.countries {
            if !found.contains(c) {
                return Err(Error::UnknownCountry(c.clone()));
            }
        }
        config.countries.clone()
    };
    if countries.is_empty() {
        return Err(Error::InvalidData("no rows matched the configuration".into()));
    }
    let first = start.or_else(|| present_weeks.iter().next().copied());
    let last = end.or_else(|| present_weeks.iter().next_back().copied());
    let (first, last) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidData("no weeks in range".into())),
    };
    let weeks = calendar_weeks(first, last, config.week53)?;

    let age_labels: Vec<String> = config.age_groups.iter().map(|a| a.label.clone()).collect();
    let mut rates = Vec::with_capacity(countries.len() * n_ages * weeks.len());
    for c in &countries {
        let rows: Vec<&Vec<Option<f64>>> = weeks
            .iter()
            .map(|w| {
                cells.get(&(c.clone(), *w)).ok_or_else(|| Error::MissingCell {
                    country: c.clone(),
                    week: w.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        for x in 0..n_ages {
            for (t, row) in rows.iter().enumerate() {
                let v = row[x].ok_or_else(|| Error::MissingCell {
                    country: c.clone(),
                    week: format!("{} (age {})", weeks[t], age_labels[x]),
                })?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositiveRate {
                        country: c.clone(),
                        age: age_labels[x].clone(),
                        week: weeks[t].to_string(),
                        value: v,
                    });
                }
                rates.push(v);
            }
        }
    }
    let hemispheres = countries
        .iter()
        .map(|c| {
            if config.southern.contains(c) {
                Hemisphere::South
            } else {
                Hemisphere::North
            }
        })
        .collect();
    MortalityTensor::from_rates(countries, age_labels, weeks, hemispheres, rates)
}

/// ISO weeks from `first` to `last` inclusive after applying the week 53
/// policy; every year must end up with exactly 52 weeks.
fn calendar_weeks(first: WeekLabel, last: WeekLabel, policy: Week53Policy) -> Result<Vec<WeekLabel>> {
    let mut by_year: BTreeMap<i32, Vec<WeekLabel>> = BTreeMap::new();
    for year in first.year..=last.year {
        for week in 1..=iso_weeks_in_year(year) {
            let w = WeekLabel::new(year, week);
            if w >= first && w <= last {
                by_year.entry(year).or_default().push(w);
            }
        }
    }
    let mut out = Vec::new();
    for (year, mut weeks) in by_year {
        let has53 = weeks.last().is_some_and(|w| w.week == 53);
        if has53 {
            let drop = match policy {
                Week53Policy::Drop => true,
                Week53Policy::Keep => false,
                Week53Policy::Auto => weeks.len() > WEEKS_PER_YEAR,
            };
            if drop {
                weeks.pop();
            }
        }
        if weeks.len() != WEEKS_PER_YEAR {
            return Err(Error::RaggedYear {
                year,
                count: weeks.len(),
            });
        }
        out.extend(weeks);
    }
    Ok(out)
}
