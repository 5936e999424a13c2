//! Readers and writers for the two input formats: Human Mortality Database
//! "1x1" period tables (deaths or exposures) and a long-format CSV of death
//! counts by cause.
//!
//! HMD layout: free-form title lines, then a column header
//! `Year Age Female Male Total`, then one whitespace-separated row per
//! (year, age). The open age group carries a trailing `+` and missing values
//! are written `.`.
//!
//! Cause-of-death CSV: header `gender,age_group,year,cause,deaths`, one row per
//! (gender, one-based age bucket, year, cause). The cause column holds either
//! the one-based cause number or its label; an empty `deaths` field marks the
//! count as missing, which is different from zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use crate::domain::{AgeBucketing, Feature, FeatureSpace, Gender, MortalityTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmdKind {
    Deaths,
    Exposures,
}

impl HmdKind {
    fn title(self) -> &'static str {
        match self {
            HmdKind::Deaths => "Deaths (period 1x1)",
            HmdKind::Exposures => "Exposure to risk (period 1x1)",
        }
    }
}

/// One data row of an HMD 1x1 file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawHmdRecord {
    pub year: i32,
    pub age: u32,
    /// The row is the open age interval (`110+`); `age` holds its floor.
    pub open_age: bool,
    pub female: Option<f64>,
    pub male: Option<f64>,
    pub total: Option<f64>,
}

/// Parsed HMD table keyed by `(age, year)` per gender. `None` values were
/// marked missing in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct HmdGrid {
    pub kind: HmdKind,
    female: BTreeMap<(u32, i32), Option<f64>>,
    male: BTreeMap<(u32, i32), Option<f64>>,
    open_age: Option<u32>,
}

impl HmdGrid {
    pub fn value(&self, gender: Gender, age: u32, year: i32) -> Option<Option<f64>> {
        self.gender_map(gender).get(&(age, year)).copied()
    }

    fn gender_map(&self, gender: Gender) -> &BTreeMap<(u32, i32), Option<f64>> {
        match gender {
            Gender::Female => &self.female,
            Gender::Male => &self.male,
        }
    }

    /// Number of cells counted over both genders.
    pub fn len(&self) -> usize {
        self.female.len() + self.male.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn open_age(&self) -> Option<u32> {
        self.open_age
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.female.keys().map(|&(_, t)| t).collect()
    }

    pub fn ages(&self) -> BTreeSet<u32> {
        self.female.keys().map(|&(a, _)| a).collect()
    }
}

fn parse_hmd_value(token: &str, line: usize) -> Result<Option<f64>> {
    if token == "." {
        return Ok(None);
    }
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(line, format!("bad number {token:?}")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::parse(line, format!("value {token} is not a nonnegative number")));
    }
    Ok(Some(v))
}

fn parse_hmd_record(line_no: usize, fields: &[&str]) -> Result<RawHmdRecord> {
    if fields.len() != 5 {
        return Err(Error::parse(
            line_no,
            format!("expected 5 columns (Year Age Female Male Total), found {}", fields.len()),
        ));
    }
    let year = fields[0]
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad year {:?}", fields[0])))?;
    let (age_token, open_age) = match fields[1].strip_suffix('+') {
        Some(a) => (a, true),
        None => (fields[1], false),
    };
    let age = age_token
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad age {:?}", fields[1])))?;
    Ok(RawHmdRecord {
        year,
        age,
        open_age,
        female: parse_hmd_value(fields[2], line_no)?,
        male: parse_hmd_value(fields[3], line_no)?,
        total: parse_hmd_value(fields[4], line_no)?,
    })
}

/// Parses a Human Mortality Database 1x1 deaths or exposures file.
pub fn parse_hmd_1x1(text: &str, kind: HmdKind) -> Result<HmdGrid> {
    let mut grid = HmdGrid {
        kind,
        female: BTreeMap::new(),
        male: BTreeMap::new(),
        open_age: None,
    };
    let mut in_body = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if !in_body {
            if fields.len() >= 2
                && fields[0].eq_ignore_ascii_case("year")
                && fields[1].eq_ignore_ascii_case("age")
            {
                in_body = true;
            }
            continue;
        }
        let rec = parse_hmd_record(line_no, &fields)?;
        if rec.open_age {
            grid.open_age = Some(rec.age);
        }
        let key = (rec.age, rec.year);
        if grid.female.insert(key, rec.female).is_some() {
            return Err(Error::parse(
                line_no,
                format!("duplicate row for year {} age {}", rec.year, rec.age),
            ));
        }
        grid.male.insert(key, rec.male);
    }
    if !in_body {
        return Err(Error::parse(1, "missing `Year Age Female Male Total` header"));
    }
    Ok(grid)
}

/// Serializes one table column set in HMD 1x1 layout. Both genders of the
/// table's space are written; a gender absent from the space is written as
/// missing.
pub fn write_hmd_1x1(table: &MortalityTable, kind: HmdKind, population: &str) -> String {
    let space = table.space();
    let mut out = String::new();
    let _ = writeln!(out, "{population}, {}", kind.title());
    let _ = writeln!(
        out,
        "{:>6}{:>8}{:>24}{:>24}{:>24}",
        "Year", "Age", "Female", "Male", "Total"
    );
    let fmt_value = |v: Option<f64>| match v {
        Some(v) => format!("{v}"),
        None => ".".to_string(),
    };
    for year in space.years() {
        for age in space.ages() {
            let value = |g: Gender| {
                let x = Feature::new(g, age, year);
                match kind {
                    HmdKind::Deaths => table.death_count(&x).map(|d| d as f64),
                    HmdKind::Exposures => table.exposure(&x),
                }
            };
            let (f, m) = (value(Gender::Female), value(Gender::Male));
            let total = match (f, m) {
                (Some(f), Some(m)) => Some(f + m),
                (Some(v), None) | (None, Some(v)) => Some(v),
                (None, None) => None,
            };
            let _ = writeln!(
                out,
                "{:>6}{:>8}{:>24}{:>24}{:>24}",
                year,
                age,
                fmt_value(f),
                fmt_value(m),
                fmt_value(total)
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipReport {
    /// Sum over cells of `rounded - raw` deaths.
    pub rounding_delta: f64,
    /// Largest per-cell `|rounded - raw|`.
    pub max_cell_rounding: f64,
    pub warnings: Vec<String>,
}

/// Builds a [`MortalityTable`] over `space` from parsed deaths and exposures.
///
/// With `pool_top_age`, every row with age `>= a_max` is summed into the
/// `a_max` row. Fractional HMD death counts are rounded to the nearest integer
/// after pooling; missing values inside the requested region are read as 0
/// and reported.
pub fn clip_to_space(
    deaths: &HmdGrid,
    exposures: &HmdGrid,
    space: &FeatureSpace,
    pool_top_age: bool,
) -> Result<(MortalityTable, ClipReport)> {
    for grid in [deaths, exposures] {
        let years = grid.years();
        let missing: Vec<i32> = space.years().filter(|t| !years.contains(t)).collect();
        if !missing.is_empty() {
            return Err(Error::data(format!(
                "{:?} file lacks years {}",
                grid.kind,
                summarize_years(&missing)
            )));
        }
        let ages = grid.ages();
        if let Some(a) = space.ages().find(|a| !ages.contains(a)) {
            return Err(Error::data(format!("{:?} file lacks age {a}", grid.kind)));
        }
    }

    let top = *space.ages().end();
    let mut warnings = Vec::new();
    let mut missing_cells = 0usize;
    let mut gather = |grid: &HmdGrid, x: &Feature| -> f64 {
        let ages: Vec<u32> = if pool_top_age && x.age == top {
            grid.gender_map(x.gender)
                .keys()
                .filter(|&&(a, t)| a >= top && t == x.year)
                .map(|&(a, _)| a)
                .collect()
        } else {
            vec![x.age]
        };
        ages.into_iter()
            .map(|a| match grid.value(x.gender, a, x.year) {
                Some(Some(v)) => v,
                _ => {
                    missing_cells += 1;
                    0.0
                }
            })
            .sum()
    };

    let mut exposure = Vec::with_capacity(space.len());
    let mut raw_deaths = Vec::with_capacity(space.len());
    for x in space.iter() {
        exposure.push(gather(exposures, &x));
        raw_deaths.push(gather(deaths, &x));
    }
    if missing_cells > 0 {
        warnings.push(format!("{missing_cells} missing values read as 0"));
    }

    let mut rounding_delta = 0.0;
    let mut max_cell_rounding: f64 = 0.0;
    let deaths: Vec<u64> = raw_deaths
        .iter()
        .map(|&d| {
            let r = d.round();
            rounding_delta += r - d;
            max_cell_rounding = max_cell_rounding.max((r - d).abs());
            r as u64
        })
        .collect();
    for (i, (&e, &d)) in exposure.iter().zip(&deaths).enumerate() {
        if e == 0.0 && d > 0 {
            let x = space.feature(i);
            return Err(Error::data(format!(
                "{d} deaths but zero exposure at ({}, {}, {})",
                x.gender, x.age, x.year
            )));
        }
    }
    let table = MortalityTable::new(space.clone(), exposure, deaths)?;
    Ok((
        table,
        ClipReport {
            rounding_delta,
            max_cell_rounding,
            warnings,
        },
    ))
}

/// Exposures over `space`, pooled like [`clip_to_space`] does.
pub fn clip_exposures(
    exposures: &HmdGrid,
    space: &FeatureSpace,
    pool_top_age: bool,
) -> Result<(Vec<f64>, Vec<String>)> {
    let (table, report) = clip_to_space(exposures, exposures, space, pool_top_age)?;
    Ok((table.exposures().to_vec(), report.warnings))
}

fn summarize_years(years: &[i32]) -> String {
    if years.len() > 6 {
        format!("{}..{} ({} years)", years[0], years[years.len() - 1], years.len())
    } else {
        years
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Ordered list of cause-of-death categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseRegistry {
    labels: Vec<String>,
}

pub const DEFAULT_CAUSES: [&str; 12] = [
    "infectious diseases",
    "malignant tumors",
    "diabetes mellitus",
    "dementia",
    "circulatory system",
    "respiratory organs",
    "alcoholic liver cirrhosis",
    "urinary organs",
    "congenital malformation",
    "perinatal causes",
    "accidents and violent impacts",
    "others/unknown",
];

impl Default for CauseRegistry {
    fn default() -> Self {
        CauseRegistry {
            labels: DEFAULT_CAUSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CauseRegistry {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("cause registry needs at least one cause"));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.trim().to_lowercase()) {
                return Err(Error::config(format!("cause {l:?} listed twice")));
            }
        }
        Ok(CauseRegistry { labels })
    }

    /// Registry with `k` anonymous causes labelled `cause 1`, `cause 2`, ...
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| format!("cause {i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Zero-based position of a cause given by one-based number or by label
    /// (case-insensitive).
    pub fn resolve(&self, token: &str) -> Option<usize> {
        let token = token.trim();
        if let Ok(n) = token.parse::<usize>() {
            return (1..=self.len()).contains(&n).then(|| n - 1);
        }
        self.labels
            .iter()
            .position(|l| l.trim().eq_ignore_ascii_case(token))
    }
}

/// Death counts `D_{x,k}` on the age-bucketed grid, with explicit missing
/// entries. Layout: gender, bucket, year, cause (cause fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct CauseDeathTable {
    genders: Vec<Gender>,
    buckets: AgeBucketing,
    year_min: i32,
    year_max: i32,
    causes: CauseRegistry,
    counts: Vec<Option<u64>>,
}

impl CauseDeathTable {
    pub fn new(
        genders: &[Gender],
        buckets: AgeBucketing,
        years: RangeInclusive<i32>,
        causes: CauseRegistry,
        counts: Vec<Option<u64>>,
    ) -> Result<Self> {
        let mut g = genders.to_vec();
        g.sort();
        g.dedup();
        if g.is_empty() || years.is_empty() {
            return Err(Error::data("cause-of-death table has no genders or years"));
        }
        let table = CauseDeathTable {
            genders: g,
            buckets,
            year_min: *years.start(),
            year_max: *years.end(),
            causes,
            counts: Vec::new(),
        };
        let expected = table.feature_space().len() * table.causes.len();
        if counts.len() != expected {
            return Err(Error::data(format!(
                "cause-of-death table expects {expected} counts, got {}",
                counts.len()
            )));
        }
        Ok(CauseDeathTable { counts, ..table })
    }

    /// The condensed feature grid (age axis = one-based bucket index).
    pub fn feature_space(&self) -> FeatureSpace {
        FeatureSpace::new(
            &self.genders,
            1..=self.buckets.len() as u32,
            self.year_min..=self.year_max,
        )
        .expect("validated at construction")
    }

    pub fn genders(&self) -> &[Gender] {
        &self.genders
    }

    pub fn buckets(&self) -> &AgeBucketing {
        &self.buckets
    }

    pub fn years(&self) -> RangeInclusive<i32> {
        self.year_min..=self.year_max
    }

    pub fn causes(&self) -> &CauseRegistry {
        &self.causes
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    pub fn counts(&self) -> &[Option<u64>] {
        &self.counts
    }

    /// Flat index of `(x, k)`; `x.age` is the one-based bucket index.
    pub fn index(&self, x: &Feature, cause: usize) -> Option<usize> {
        if cause >= self.n_causes() {
            return None;
        }
        self.feature_space()
            .index(x)
            .map(|i| i * self.n_causes() + cause)
    }

    pub fn count(&self, x: &Feature, cause: usize) -> Option<Option<u64>> {
        self.index(x, cause).map(|i| self.counts[i])
    }

    /// Sum over causes with available data per condensed feature, and whether
    /// any cause was missing for that feature.
    pub fn all_cause_sums(&self) -> (Vec<u64>, Vec<bool>) {
        self.counts
            .chunks(self.n_causes())
            .map(|row| {
                let partial = row.iter().any(Option::is_none);
                (row.iter().flatten().sum::<u64>(), partial)
            })
            .unzip()
    }

    pub fn missing_count(&self) -> usize {
        self.counts.iter().filter(|c| c.is_none()).count()
    }
}

const COD_HEADER: [&str; 5] = ["gender", "age_group", "year", "cause", "deaths"];

/// Parses the cause-of-death CSV. Rows absent from the file are treated as
/// missing; the year range spans the smallest to largest year present.
pub fn parse_cod_csv(
    text: &str,
    causes: &CauseRegistry,
    buckets: &AgeBucketing,
) -> Result<CauseDeathTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != COD_HEADER {
        return Err(Error::parse(
            1,
            format!("expected header {:?}, found {header:?}", COD_HEADER.join(",")),
        ));
    }

    let mut entries: HashMap<(Gender, usize, i32, usize), Option<u64>> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 5 {
            return Err(Error::parse(line, format!("expected 5 fields, found {}", record.len())));
        }
        let gender: Gender = record[0]
            .parse()
            .map_err(|e: Error| Error::parse(line, e))?;
        let bucket: usize = record[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad age group {:?}", &record[1])))?;
        if bucket == 0 || bucket > buckets.len() {
            return Err(Error::parse(
                line,
                format!("age group {bucket} outside 1..={}", buckets.len()),
            ));
        }
        let year: i32 = record[2]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad year {:?}", &record[2])))?;
        let cause = causes
            .resolve(&record[3])
            .ok_or_else(|| Error::parse(line, format!("unknown cause {:?}", &record[3])))?;
        let deaths = match &record[4] {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|_| {
                Error::parse(line, format!("death count {s:?} is not a nonnegative integer"))
            })?),
        };
        if entries
            .insert((gender, bucket - 1, year, cause), deaths)
            .is_some()
        {
            return Err(Error::Duplicate(format!(
                "line {line}: ({gender}, age group {bucket}, {year}, {})",
                causes.labels()[cause]
            )));
        }
    }
    if entries.is_empty() {
        return Err(Error::data("cause-of-death file has no data rows"));
    }

    let genders: BTreeSet<Gender> = entries.keys().map(|k| k.0).collect();
    let year_min = entries.keys().map(|k| k.2).min().unwrap();
    let year_max = entries.keys().map(|k| k.2).max().unwrap();
    let genders: Vec<Gender> = genders.into_iter().collect();
    let mut counts = Vec::new();
    for &g in &genders {
        for b in 0..buckets.len() {
            for t in year_min..=year_max {
                for k in 0..causes.len() {
                    counts.push(entries.get(&(g, b, t, k)).copied().flatten());
                }
            }
        }
    }
    CauseDeathTable::new(
        &genders,
        buckets.clone(),
        year_min..=year_max,
        causes.clone(),
        counts,
    )
}

/// Writes every cell of the table, missing counts as an empty field.
pub fn write_cod_csv(table: &CauseDeathTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COD_HEADER)?;
    let space = table.feature_space();
    for (i, x) in space.iter().enumerate() {
        for k in 0..table.n_causes() {
            let count = table.counts[i * table.n_causes() + k]
                .map(|d| d.to_string())
                .unwrap_or_default();
            w.write_record([
                x.gender.as_str(),
                &x.age.to_string(),
                &x.year.to_string(),
                &(k + 1).to_string(),
                &count,
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A condensed feature where the cause counts exceed the all-cause total.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub feature: Feature,
    pub cause_sum: u64,
    pub all_cause: u64,
}

/// Cross-checks cause counts against an all-cause table on the same
/// condensed grid (see [`crate::domain::aggregate_table`]).
pub fn validate_against_all_cause(
    cod: &CauseDeathTable,
    all_cause: &MortalityTable,
) -> Result<Vec<Discrepancy>> {
    let (sums, _) = cod.all_cause_sums();
    let space = cod.feature_space();
    let mut out = Vec::new();
    for (i, x) in space.iter().enumerate() {
        let total = all_cause.death_count(&x).ok_or_else(|| {
            Error::domain(format!(
                "all-cause table lacks ({}, group {}, {})",
                x.gender, x.age, x.year
            ))
        })?;
        if sums[i] > total {
            out.push(Discrepancy {
                feature: x,
                cause_sum: sums[i],
                all_cause: total,
            });
        }
    }
    Ok(out)
}
