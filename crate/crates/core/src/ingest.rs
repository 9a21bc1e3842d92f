//! OxCGRT-format ingestion: per-region daily cases, deaths, population and
//! the twelve ordinal intervention (NPI) columns, plus the national
//! cultural-dimension table.
//!
//! Cleaning rules applied while parsing:
//! - empty NPI cells are read as level 0;
//! - regions that never report a case count are dropped;
//! - cumulative case/death gaps are forward-filled, and day-over-day
//!   decreases (reporting corrections) are clamped to the running maximum;
//! - missing calendar days inside a region are filled from the previous day.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NPI_COUNT: usize = 12;
pub const CULTURE_DIMS: usize = 6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("no region retained after cleaning ({rows} rows read, {row_errors} row errors)")]
    NoRegions { rows: usize, row_errors: usize },

    #[error("invalid NPI schema: {0}")]
    Schema(String),

    #[error("cultural table needs a country column and {CULTURE_DIMS} numeric columns, found {0} columns")]
    CultureColumns(usize),

    #[error("cultural table row {row}: {message}")]
    CultureValue { row: usize, message: String },

    #[error("cultural table has no usable rows")]
    EmptyCulture,

    #[error("date range start {start} is after end {end}")]
    BadRange { start: NaiveDate, end: NaiveDate },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("region `{geo_id}` violates invariant: {message}")]
    Invariant { geo_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionKey {
    pub country_name: String,
    pub region_name: Option<String>,
    pub geo_id: String,
}

impl RegionKey {
    /// Key with the `Country__Region` id convention used when the file has
    /// no explicit id column.
    pub fn new(country: &str, region: Option<&str>) -> Self {
        let region = region.map(str::trim).filter(|r| !r.is_empty());
        let geo_id = match region {
            Some(r) => format!("{}__{}", country.trim(), r),
            None => country.trim().to_string(),
        };
        Self {
            country_name: country.trim().to_string(),
            region_name: region.map(str::to_string),
            geo_id,
        }
    }

    pub fn is_country(&self) -> bool {
        self.region_name.is_none()
    }
}

/// Ordered NPI column names and their maximum ordinal levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpiSchema {
    names: Vec<String>,
    max_levels: Vec<u8>,
}

impl NpiSchema {
    pub fn new(names: Vec<String>, max_levels: Vec<u8>) -> Result<Self, IngestError> {
        if names.len() != NPI_COUNT || max_levels.len() != NPI_COUNT {
            return Err(IngestError::Schema(format!(
                "expected {NPI_COUNT} names and levels, got {} and {}",
                names.len(),
                max_levels.len()
            )));
        }
        if let Some(i) = max_levels.iter().position(|&m| m == 0) {
            return Err(IngestError::Schema(format!("max level of `{}` must be >= 1", names[i])));
        }
        Ok(Self { names, max_levels })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn max_levels(&self) -> &[u8] {
        &self.max_levels
    }
}

impl Default for NpiSchema {
    /// Column names and level ranges of the OxCGRT "latest" file.
    fn default() -> Self {
        let cols = [
            ("C1_School closing", 3),
            ("C2_Workplace closing", 3),
            ("C3_Cancel public events", 2),
            ("C4_Restrictions on gatherings", 4),
            ("C5_Close public transport", 2),
            ("C6_Stay at home requirements", 3),
            ("C7_Restrictions on internal movement", 2),
            ("C8_International travel controls", 4),
            ("H1_Public information campaigns", 2),
            ("H2_Testing policy", 3),
            ("H3_Contact tracing", 2),
            ("H6_Facial Coverings", 4),
        ];
        Self {
            names: cols.iter().map(|(n, _)| n.to_string()).collect(),
            max_levels: cols.iter().map(|(_, m)| *m).collect(),
        }
    }
}

/// Names of the non-NPI columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub country: String,
    pub region: String,
    /// When absent from the header, ids are derived from country and region.
    pub geo_id: String,
    pub date: String,
    pub cases: String,
    pub deaths: String,
    pub population: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            country: "CountryName".into(),
            region: "RegionName".into(),
            geo_id: "GeoID".into(),
            date: "Date".into(),
            cases: "ConfirmedCases".into(),
            deaths: "ConfirmedDeaths".into(),
            population: "Population".into(),
        }
    }
}

pub type NpiLevels = [u8; NPI_COUNT];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSeries {
    pub key: RegionKey,
    pub population: u64,
    pub dates: Vec<NaiveDate>,
    pub confirmed_cases: Vec<u64>,
    pub confirmed_deaths: Vec<u64>,
    pub npi: Vec<NpiLevels>,
}

impl RegionSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    /// Index of `date`, relying on the contiguous-day invariant.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = self.first_date()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    /// Daily new cases; day 0 has no predecessor and reports 0.
    pub fn daily_new_cases(&self) -> Vec<f64> {
        diff_series(&self.confirmed_cases)
    }

    pub fn daily_new_deaths(&self) -> Vec<f64> {
        diff_series(&self.confirmed_deaths)
    }

    pub fn validate(&self, schema: &NpiSchema) -> Result<(), IngestError> {
        let fail = |message: String| IngestError::Invariant {
            geo_id: self.key.geo_id.clone(),
            message,
        };
        if self.key.geo_id.is_empty() {
            return Err(fail("empty geo_id".into()));
        }
        if self.population == 0 {
            return Err(fail("population must be positive".into()));
        }
        let n = self.dates.len();
        if self.confirmed_cases.len() != n || self.confirmed_deaths.len() != n || self.npi.len() != n {
            return Err(fail("array lengths differ".into()));
        }
        for w in self.dates.windows(2) {
            if (w[1] - w[0]).num_days() != 1 {
                return Err(fail(format!("dates not contiguous at {}", w[1])));
            }
        }
        for series in [&self.confirmed_cases, &self.confirmed_deaths] {
            if series.windows(2).any(|w| w[1] < w[0]) {
                return Err(fail("cumulative series decreases".into()));
            }
        }
        for (t, levels) in self.npi.iter().enumerate() {
            for (i, (&v, &max)) in levels.iter().zip(schema.max_levels()).enumerate() {
                if v > max {
                    return Err(fail(format!("npi[{t}][{i}] = {v} exceeds {max}")));
                }
            }
        }
        Ok(())
    }

    /// Restriction to `[start, end]`, or `None` if nothing overlaps.
    pub fn slice(&self, start: NaiveDate, end: NaiveDate) -> Option<RegionSeries> {
        let first = self.first_date()?;
        let last = self.last_date()?;
        let lo = start.max(first);
        let hi = end.min(last);
        if lo > hi {
            return None;
        }
        let a = self.index_of(lo)?;
        let b = self.index_of(hi)? + 1;
        Some(RegionSeries {
            key: self.key.clone(),
            population: self.population,
            dates: self.dates[a..b].to_vec(),
            confirmed_cases: self.confirmed_cases[a..b].to_vec(),
            confirmed_deaths: self.confirmed_deaths[a..b].to_vec(),
            npi: self.npi[a..b].to_vec(),
        })
    }
}

fn diff_series(cum: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cum.len());
    for (t, &c) in cum.iter().enumerate() {
        out.push(if t == 0 { 0.0 } else { c.saturating_sub(cum[t - 1]) as f64 });
    }
    out
}

/// Six cultural-dimension scores, each in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CulturalProfile([f64; CULTURE_DIMS]);

impl CulturalProfile {
    pub fn new(scores: [f64; CULTURE_DIMS]) -> Option<Self> {
        scores
            .iter()
            .all(|s| (0.0..=100.0).contains(s))
            .then_some(Self(scores))
    }

    pub fn scores(&self) -> &[f64; CULTURE_DIMS] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedCulture {
    pub profile: CulturalProfile,
    /// True when the country is absent and the table mean was substituted.
    pub imputed: bool,
}

/// National profiles; subnational regions resolve to their country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureTable {
    profiles: BTreeMap<String, CulturalProfile>,
    mean: CulturalProfile,
}

impl Default for CultureTable {
    /// Empty table; every lookup is imputed with the scale midpoint.
    fn default() -> Self {
        Self {
            profiles: BTreeMap::new(),
            mean: CulturalProfile([50.0; CULTURE_DIMS]),
        }
    }
}

impl CultureTable {
    pub fn from_profiles(profiles: BTreeMap<String, CulturalProfile>) -> Result<Self, IngestError> {
        if profiles.is_empty() {
            return Err(IngestError::EmptyCulture);
        }
        let mut mean = [0.0; CULTURE_DIMS];
        for p in profiles.values() {
            for (m, s) in mean.iter_mut().zip(p.scores()) {
                *m += s;
            }
        }
        let n = profiles.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Self {
            profiles,
            mean: CulturalProfile(mean),
        })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn mean(&self) -> CulturalProfile {
        self.mean
    }

    pub fn get(&self, country: &str) -> Option<&CulturalProfile> {
        self.profiles.get(country.trim()).or_else(|| {
            let needle = country.trim().to_lowercase();
            self.profiles
                .iter()
                .find(|(k, _)| k.to_lowercase() == needle)
                .map(|(_, v)| v)
        })
    }

    pub fn resolve(&self, key: &RegionKey) -> ResolvedCulture {
        match self.get(&key.country_name) {
            Some(p) => ResolvedCulture {
                profile: *p,
                imputed: false,
            },
            None => ResolvedCulture {
                profile: self.mean,
                imputed: true,
            },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CulturalProfile)> {
        self.profiles.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: NpiSchema,
    /// Keyed by geo id.
    pub regions: BTreeMap<String, RegionSeries>,
    pub culture: CultureTable,
}

impl Dataset {
    pub fn region(&self, geo_id: &str) -> Option<&RegionSeries> {
        self.regions.get(geo_id)
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.regions.values().filter_map(RegionSeries::first_date).min()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.regions.values().filter_map(RegionSeries::last_date).max()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file (header is line 1).
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub row_errors: Vec<RowError>,
    pub dropped_regions: Vec<String>,
    pub filled_days: usize,
    pub repaired_decreases: usize,
    pub clamped_npi: usize,
    pub duplicate_dates: usize,
}

#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub dataset: Dataset,
    pub report: ParseReport,
}

#[derive(Debug, Clone)]
struct RawRow {
    cases: Option<u64>,
    deaths: Option<u64>,
    npi: NpiLevels,
}

#[derive(Debug)]
struct RawRegion {
    key: RegionKey,
    population: u64,
    rows: BTreeMap<NaiveDate, RawRow>,
}

pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y%m%d")
        .or_else(|_| NaiveDate::parse_from_str(raw, "%Y-%m-%d"))
        .ok()
}

fn parse_count(raw: &str) -> Result<Option<u64>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| format!("non-numeric count `{raw}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("invalid count `{raw}`"));
    }
    Ok(Some(v.round() as u64))
}

/// Parses an OxCGRT-style CSV. Row-level problems are collected in the
/// report and the row is skipped; only structural problems are fatal.
pub fn parse_oxcgrt<R: Read>(input: R, schema: &NpiSchema, columns: &ColumnMap) -> Result<ParseOutcome, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let require = |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_string()));

    let c_country = require(&columns.country)?;
    let c_region = find(&columns.region);
    let c_geo = find(&columns.geo_id);
    let c_date = require(&columns.date)?;
    let c_cases = require(&columns.cases)?;
    let c_deaths = require(&columns.deaths)?;
    let c_pop = require(&columns.population)?;
    let c_npi: Vec<usize> = schema.names().iter().map(|n| require(n)).collect::<Result<_, _>>()?;

    let mut report = ParseReport::default();
    let mut raw: BTreeMap<String, RawRegion> = BTreeMap::new();

    for record in rdr.records() {
        let record = record?;
        report.rows_read += 1;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");

        let parsed = (|| -> Result<(RegionKey, NaiveDate, u64, RawRow, usize), String> {
            let country = cell(c_country);
            if country.is_empty() {
                return Err("empty country name".into());
            }
            let region = c_region.map(cell).filter(|r| !r.is_empty());
            let mut key = RegionKey::new(country, region);
            if let Some(g) = c_geo.map(cell).filter(|g| !g.is_empty()) {
                key.geo_id = g.to_string();
            }
            let date = parse_date(cell(c_date)).ok_or_else(|| format!("unparseable date `{}`", cell(c_date)))?;
            let population = match parse_count(cell(c_pop)) {
                Ok(Some(p)) if p > 0 => p,
                _ => return Err(format!("invalid population `{}`", cell(c_pop))),
            };
            let cases = parse_count(cell(c_cases))?;
            let deaths = parse_count(cell(c_deaths))?;
            let mut npi = [0u8; NPI_COUNT];
            let mut clamped = 0;
            for (i, &col) in c_npi.iter().enumerate() {
                let v = cell(col);
                if v.is_empty() {
                    continue;
                }
                let level: f64 = v.parse().map_err(|_| format!("non-numeric NPI `{v}` in `{}`", schema.names()[i]))?;
                let max = schema.max_levels()[i] as f64;
                let level = level.round();
                if !(0.0..=max).contains(&level) {
                    clamped += 1;
                }
                npi[i] = level.clamp(0.0, max) as u8;
            }
            Ok((key, date, population, RawRow { cases, deaths, npi }, clamped))
        })();

        match parsed {
            Ok((key, date, population, row, clamped)) => {
                report.clamped_npi += clamped;
                let entry = raw.entry(key.geo_id.clone()).or_insert_with(|| RawRegion {
                    key,
                    population,
                    rows: BTreeMap::new(),
                });
                if entry.rows.insert(date, row).is_some() {
                    report.duplicate_dates += 1;
                }
            }
            Err(message) => {
                debug!("line {line}: {message}");
                report.row_errors.push(RowError { line, message });
            }
        }
    }

    let mut regions = BTreeMap::new();
    for (geo_id, region) in raw {
        if region.rows.values().all(|r| r.cases.is_none()) {
            report.dropped_regions.push(geo_id);
            continue;
        }
        let series = assemble_region(region, &mut report);
        regions.insert(geo_id, series);
    }

    if !report.row_errors.is_empty() {
        warn!("{} malformed rows skipped", report.row_errors.len());
    }
    if regions.is_empty() {
        return Err(IngestError::NoRegions {
            rows: report.rows_read,
            row_errors: report.row_errors.len(),
        });
    }
    Ok(ParseOutcome {
        dataset: Dataset {
            schema: schema.clone(),
            regions,
            culture: CultureTable::default(),
        },
        report,
    })
}

fn assemble_region(region: RawRegion, report: &mut ParseReport) -> RegionSeries {
    let first = *region.rows.keys().next().expect("region has rows");
    let last = *region.rows.keys().next_back().expect("region has rows");
    let mut dates = Vec::new();
    let mut cases = Vec::new();
    let mut deaths = Vec::new();
    let mut npi = Vec::new();
    let (mut prev_cases, mut prev_deaths, mut prev_npi) = (0u64, 0u64, [0u8; NPI_COUNT]);
    let mut day = first;
    while day <= last {
        match region.rows.get(&day) {
            Some(row) => {
                for (value, prev) in [(row.cases, &mut prev_cases), (row.deaths, &mut prev_deaths)] {
                    if let Some(v) = value {
                        if v < *prev {
                            report.repaired_decreases += 1;
                        } else {
                            *prev = v;
                        }
                    }
                }
                prev_npi = row.npi;
            }
            None => report.filled_days += 1,
        }
        dates.push(day);
        cases.push(prev_cases);
        deaths.push(prev_deaths);
        npi.push(prev_npi);
        day = day.succ_opt().expect("date in range");
    }
    RegionSeries {
        key: region.key,
        population: region.population,
        dates,
        confirmed_cases: cases,
        confirmed_deaths: deaths,
        npi,
    }
}

/// Parses a cultural-dimension table: a country column followed by six
/// numeric scores. Comma or semicolon separated. Rows with blank or
/// `#NULL!` scores are skipped; those countries get imputed profiles.
pub fn load_cultural<R: Read>(mut input: R) -> Result<CultureTable, IngestError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let first_line = text.lines().next().unwrap_or("");
    let delimiter = if first_line.contains(';') && !first_line.contains(',') {
        b';'
    } else {
        b','
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(delimiter)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let country_col = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case("country"))
        .unwrap_or(0);
    if header.len() < country_col + 1 + CULTURE_DIMS {
        return Err(IngestError::CultureColumns(header.len()));
    }

    let mut profiles = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let country = record.get(country_col).unwrap_or("").to_string();
        if country.is_empty() {
            return Err(IngestError::CultureValue {
                row,
                message: "empty country".into(),
            });
        }
        let cells: Vec<&str> = (0..CULTURE_DIMS)
            .map(|d| record.get(country_col + 1 + d).unwrap_or(""))
            .collect();
        if cells.iter().any(|c| c.is_empty() || *c == "#NULL!") {
            warn!("cultural table row {row} ({country}) has missing scores; skipped");
            continue;
        }
        let mut scores = [0.0; CULTURE_DIMS];
        for (d, c) in cells.iter().enumerate() {
            let v: f64 = c.parse().map_err(|_| IngestError::CultureValue {
                row,
                message: format!("non-numeric score `{c}`"),
            })?;
            if !(0.0..=100.0).contains(&v) {
                return Err(IngestError::CultureValue {
                    row,
                    message: format!("score {v} outside [0, 100]"),
                });
            }
            scores[d] = v;
        }
        profiles.insert(country, CulturalProfile(scores));
    }
    CultureTable::from_profiles(profiles)
}

/// Restricts every region to `[start, end]`; regions left empty are dropped.
pub fn date_slice(dataset: &Dataset, start: NaiveDate, end: NaiveDate) -> Result<Dataset, IngestError> {
    if start > end {
        return Err(IngestError::BadRange { start, end });
    }
    let regions = dataset
        .regions
        .iter()
        .filter_map(|(k, r)| r.slice(start, end).map(|s| (k.clone(), s)))
        .collect();
    Ok(Dataset {
        schema: dataset.schema.clone(),
        regions,
        culture: dataset.culture.clone(),
    })
}

pub const SNAPSHOT_FORMAT: &str = "epiforecast-dataset";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    dataset: Dataset,
}

pub fn write_snapshot<W: Write>(dataset: &Dataset, out: W) -> Result<(), IngestError> {
    let snap = Snapshot {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        dataset: dataset.clone(),
    };
    serde_json::to_writer_pretty(out, &snap).map_err(|e| IngestError::Snapshot(e.to_string()))
}

pub fn read_snapshot<R: Read>(input: R) -> Result<Dataset, IngestError> {
    let snap: Snapshot = serde_json::from_reader(input).map_err(|e| IngestError::Snapshot(e.to_string()))?;
    if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
        return Err(IngestError::Snapshot(format!(
            "unsupported snapshot {} v{}",
            snap.format, snap.version
        )));
    }
    for r in snap.dataset.regions.values() {
        r.validate(&snap.dataset.schema)?;
    }
    Ok(snap.dataset)
}

/// Writes regions in the layout [`parse_oxcgrt`] reads with default columns.
pub fn write_oxcgrt<'a, W: Write>(
    regions: impl IntoIterator<Item = &'a RegionSeries>,
    schema: &NpiSchema,
    out: W,
) -> Result<(), IngestError> {
    let cols = ColumnMap::default();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![cols.country.clone(), cols.region.clone(), cols.geo_id.clone(), cols.date.clone()];
    header.extend(schema.names().iter().cloned());
    header.extend([cols.cases, cols.deaths, cols.population]);
    w.write_record(&header)?;
    for r in regions {
        for t in 0..r.len() {
            let mut row = vec![
                r.key.country_name.clone(),
                r.key.region_name.clone().unwrap_or_default(),
                r.key.geo_id.clone(),
                r.dates[t].format("%Y%m%d").to_string(),
            ];
            row.extend(r.npi[t].iter().map(|v| v.to_string()));
            row.push(r.confirmed_cases[t].to_string());
            row.push(r.confirmed_deaths[t].to_string());
            row.push(r.population.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const CULTURE_HEADER: [&str; 7] = ["country", "pdi", "idv", "mas", "uai", "ltowvs", "ivr"];

pub fn write_cultural<W: Write>(table: &CultureTable, out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CULTURE_HEADER)?;
    for (country, p) in table.iter() {
        let mut row = vec![country.to_string()];
        row.extend(p.scores().iter().map(|s| s.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
