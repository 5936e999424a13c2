//! Feature spaces, exposure/death tables and rate surfaces.
//!
//! Every grid in this crate is stored densely in gender-major, age-major,
//! year-minor order: the cell for `(g, a, t)` lives at
//! `(g_pos * n_ages + (a - a_min)) * n_years + (t - t_min)`.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }

    /// Category code used when the gender enters a regression tree.
    pub fn code(self) -> u16 {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            other => Err(Error::data(format!("unknown gender {other:?}"))),
        }
    }
}

/// A point `x = (g, a, t)` of the feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Feature {
    pub gender: Gender,
    pub age: u32,
    pub year: i32,
}

impl Feature {
    pub fn new(gender: Gender, age: u32, year: i32) -> Self {
        Feature { gender, age, year }
    }
}

/// A feature together with its birth cohort. The cohort is always derived
/// as `year - age`, so it cannot drift out of sync with the other fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtendedFeature {
    feature: Feature,
}

impl ExtendedFeature {
    pub fn gender(&self) -> Gender {
        self.feature.gender
    }

    pub fn age(&self) -> u32 {
        self.feature.age
    }

    pub fn year(&self) -> i32 {
        self.feature.year
    }

    pub fn cohort(&self) -> i32 {
        self.feature.year - self.feature.age as i32
    }

    pub fn feature(&self) -> Feature {
        self.feature
    }
}

/// The rectangular grid `G x A x T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpace {
    genders: Vec<Gender>,
    age_min: u32,
    age_max: u32,
    year_min: i32,
    year_max: i32,
}

impl FeatureSpace {
    pub fn new(
        genders: &[Gender],
        ages: RangeInclusive<u32>,
        years: RangeInclusive<i32>,
    ) -> Result<Self> {
        let mut genders = genders.to_vec();
        genders.sort();
        genders.dedup();
        if genders.is_empty() {
            return Err(Error::domain("feature space needs at least one gender"));
        }
        if ages.is_empty() {
            return Err(Error::domain(format!("empty age range {ages:?}")));
        }
        if years.is_empty() {
            return Err(Error::domain(format!("empty year range {years:?}")));
        }
        Ok(FeatureSpace {
            genders,
            age_min: *ages.start(),
            age_max: *ages.end(),
            year_min: *years.start(),
            year_max: *years.end(),
        })
    }

    /// Both genders over the given ranges.
    pub fn both(ages: RangeInclusive<u32>, years: RangeInclusive<i32>) -> Result<Self> {
        Self::new(&Gender::ALL, ages, years)
    }

    pub fn genders(&self) -> &[Gender] {
        &self.genders
    }

    pub fn ages(&self) -> RangeInclusive<u32> {
        self.age_min..=self.age_max
    }

    pub fn years(&self) -> RangeInclusive<i32> {
        self.year_min..=self.year_max
    }

    /// Range of birth cohorts `t - a` that occur on the grid.
    pub fn cohorts(&self) -> RangeInclusive<i32> {
        (self.year_min - self.age_max as i32)..=(self.year_max - self.age_min as i32)
    }

    pub fn n_genders(&self) -> usize {
        self.genders.len()
    }

    pub fn n_ages(&self) -> usize {
        (self.age_max - self.age_min) as usize + 1
    }

    pub fn n_years(&self) -> usize {
        (self.year_max - self.year_min) as usize + 1
    }

    pub fn len(&self) -> usize {
        self.n_genders() * self.n_ages() * self.n_years()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn gender_position(&self, gender: Gender) -> Option<usize> {
        self.genders.iter().position(|&g| g == gender)
    }

    pub fn contains(&self, x: &Feature) -> bool {
        self.index(x).is_some()
    }

    pub fn index(&self, x: &Feature) -> Option<usize> {
        let g = self.gender_position(x.gender)?;
        if x.age < self.age_min || x.age > self.age_max {
            return None;
        }
        if x.year < self.year_min || x.year > self.year_max {
            return None;
        }
        let a = (x.age - self.age_min) as usize;
        let t = (x.year - self.year_min) as usize;
        Some((g * self.n_ages() + a) * self.n_years() + t)
    }

    pub fn feature(&self, index: usize) -> Feature {
        let n_years = self.n_years();
        let n_ages = self.n_ages();
        let t = index % n_years;
        let a = (index / n_years) % n_ages;
        let g = index / (n_years * n_ages);
        Feature {
            gender: self.genders[g],
            age: self.age_min + a as u32,
            year: self.year_min + t as i32,
        }
    }

    /// All features in storage order.
    pub fn iter(&self) -> impl Iterator<Item = Feature> + '_ {
        (0..self.len()).map(move |i| self.feature(i))
    }

    /// Index range of one gender's cells.
    pub fn gender_block(&self, gender: Gender) -> Option<std::ops::Range<usize>> {
        let g = self.gender_position(gender)?;
        let block = self.n_ages() * self.n_years();
        Some(g * block..(g + 1) * block)
    }

    /// Same grid restricted to a sub-range of years.
    pub fn restrict_years(&self, years: RangeInclusive<i32>) -> Result<Self> {
        if *years.start() < self.year_min || *years.end() > self.year_max {
            return Err(Error::domain(format!(
                "years {years:?} not inside {:?}",
                self.years()
            )));
        }
        Self::new(&self.genders, self.ages(), years)
    }

    /// Same grid restricted to a subset of genders.
    pub fn restrict_genders(&self, genders: &[Gender]) -> Result<Self> {
        if let Some(g) = genders.iter().find(|g| !self.genders.contains(g)) {
            return Err(Error::domain(format!("gender {g} not in feature space")));
        }
        Self::new(genders, self.ages(), self.years())
    }
}

/// Attach the birth cohort to a feature of `space`.
pub fn extend_feature(x: Feature, space: &FeatureSpace) -> Result<ExtendedFeature> {
    if !space.contains(&x) {
        return Err(Error::domain(format!(
            "feature ({}, {}, {}) outside feature space",
            x.gender, x.age, x.year
        )));
    }
    Ok(ExtendedFeature { feature: x })
}

/// Exposures `E_x` (person-years) and death counts `D_x` on a feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityTable {
    space: FeatureSpace,
    exposure: Vec<f64>,
    deaths: Vec<u64>,
}

impl MortalityTable {
    pub fn new(space: FeatureSpace, exposure: Vec<f64>, deaths: Vec<u64>) -> Result<Self> {
        if exposure.len() != space.len() || deaths.len() != space.len() {
            return Err(Error::data(format!(
                "table shape mismatch: space has {} cells, got {} exposures and {} death counts",
                space.len(),
                exposure.len(),
                deaths.len()
            )));
        }
        for (i, (&e, &d)) in exposure.iter().zip(&deaths).enumerate() {
            if !e.is_finite() || e < 0.0 {
                let x = space.feature(i);
                return Err(Error::data(format!(
                    "exposure {e} at ({}, {}, {}) is not a nonnegative number",
                    x.gender, x.age, x.year
                )));
            }
            if e == 0.0 && d > 0 {
                let x = space.feature(i);
                return Err(Error::data(format!(
                    "{d} deaths with zero exposure at ({}, {}, {})",
                    x.gender, x.age, x.year
                )));
            }
        }
        Ok(MortalityTable {
            space,
            exposure,
            deaths,
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn exposures(&self) -> &[f64] {
        &self.exposure
    }

    pub fn deaths(&self) -> &[u64] {
        &self.deaths
    }

    pub fn exposure(&self, x: &Feature) -> Option<f64> {
        self.space.index(x).map(|i| self.exposure[i])
    }

    pub fn death_count(&self, x: &Feature) -> Option<u64> {
        self.space.index(x).map(|i| self.deaths[i])
    }

    pub fn total_deaths(&self) -> u64 {
        self.deaths.iter().sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }

    /// Sub-table over a smaller year range and/or gender set of the same grid.
    pub fn restrict(&self, space: &FeatureSpace) -> Result<Self> {
        let (exposure, deaths) = space
            .iter()
            .map(|x| match self.space.index(&x) {
                Some(i) => Ok((self.exposure[i], self.deaths[i])),
                None => Err(Error::domain(format!(
                    "({}, {}, {}) not covered by table",
                    x.gender, x.age, x.year
                ))),
            })
            .collect::<Result<(Vec<_>, Vec<_>)>>()?;
        MortalityTable::new(space.clone(), exposure, deaths)
    }
}

/// A mortality-rate function `q(x)` evaluated on every cell of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSurface {
    space: FeatureSpace,
    rate: Vec<f64>,
}

impl RateSurface {
    pub fn new(space: FeatureSpace, rate: Vec<f64>) -> Result<Self> {
        if rate.len() != space.len() {
            return Err(Error::data(format!(
                "rate surface has {} values for {} cells",
                rate.len(),
                space.len()
            )));
        }
        if let Some(i) = rate.iter().position(|q| !(0.0..=1.0).contains(q)) {
            let x = space.feature(i);
            return Err(Error::data(format!(
                "rate {} at ({}, {}, {}) outside [0, 1]",
                rate[i], x.gender, x.age, x.year
            )));
        }
        Ok(RateSurface { space, rate })
    }

    pub fn from_fn(space: FeatureSpace, mut f: impl FnMut(&Feature) -> f64) -> Result<Self> {
        let rate = space.iter().map(|x| f(&x)).collect();
        Self::new(space, rate)
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn rates(&self) -> &[f64] {
        &self.rate
    }

    pub fn rate(&self, x: &Feature) -> Option<f64> {
        self.space.index(x).map(|i| self.rate[i])
    }

    pub fn restrict(&self, space: &FeatureSpace) -> Result<Self> {
        let rate = space
            .iter()
            .map(|x| {
                self.rate(&x).ok_or_else(|| {
                    Error::domain(format!(
                        "({}, {}, {}) not covered by rate surface",
                        x.gender, x.age, x.year
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RateSurface::new(space.clone(), rate)
    }
}

const RATE_HEADER: [&str; 4] = ["gender", "age", "year", "q"];

/// Writes a surface as `gender,age,year,q`, one row per cell.
pub fn write_rates_csv(surface: &RateSurface) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RATE_HEADER)?;
    for (x, q) in surface.space.iter().zip(&surface.rate) {
        w.write_record([
            x.gender.as_str(),
            &x.age.to_string(),
            &x.year.to_string(),
            &q.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads a `gender,age,year,q` file. The rows must cover a full rectangular
/// grid exactly once; the grid is inferred from the rows.
pub fn read_rates_csv(text: &str) -> Result<RateSurface> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != RATE_HEADER {
        return Err(Error::parse(
            1,
            format!("expected header {:?}, found {header:?}", RATE_HEADER.join(",")),
        ));
    }
    let mut rows: Vec<(Feature, f64, usize)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 4 {
            return Err(Error::parse(line, format!("expected 4 fields, found {}", record.len())));
        }
        let gender: Gender = record[0].parse().map_err(|e: Error| Error::parse(line, e))?;
        let age: u32 = record[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad age {:?}", &record[1])))?;
        let year: i32 = record[2]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad year {:?}", &record[2])))?;
        let q: f64 = record[3]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad rate {:?}", &record[3])))?;
        rows.push((Feature::new(gender, age, year), q, line));
    }
    if rows.is_empty() {
        return Err(Error::data("rate file has no data rows"));
    }
    let mut genders: Vec<Gender> = rows.iter().map(|r| r.0.gender).collect();
    genders.sort();
    genders.dedup();
    let age_min = rows.iter().map(|r| r.0.age).min().unwrap();
    let age_max = rows.iter().map(|r| r.0.age).max().unwrap();
    let year_min = rows.iter().map(|r| r.0.year).min().unwrap();
    let year_max = rows.iter().map(|r| r.0.year).max().unwrap();
    let space = FeatureSpace::new(&genders, age_min..=age_max, year_min..=year_max)?;
    let mut rate = vec![f64::NAN; space.len()];
    for (x, q, line) in rows {
        let i = space.index(&x).expect("grid spans every row");
        if !rate[i].is_nan() {
            return Err(Error::Duplicate(format!(
                "line {line}: ({}, {}, {})",
                x.gender, x.age, x.year
            )));
        }
        rate[i] = q;
    }
    if let Some(i) = rate.iter().position(|q| q.is_nan()) {
        let x = space.feature(i);
        return Err(Error::data(format!(
            "rate file has no row for ({}, {}, {})",
            x.gender, x.age, x.year
        )));
    }
    RateSurface::new(space, rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateWarningKind {
    ZeroExposure,
    ClampedAboveOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateWarning {
    pub feature: Feature,
    pub kind: RateWarningKind,
}

impl fmt::Display for RateWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = self.feature;
        match self.kind {
            RateWarningKind::ZeroExposure => write!(
                f,
                "zero exposure at ({}, {}, {}); crude rate set to 0",
                x.gender, x.age, x.year
            ),
            RateWarningKind::ClampedAboveOne => write!(
                f,
                "deaths exceed exposure at ({}, {}, {}); crude rate clamped to 1",
                x.gender, x.age, x.year
            ),
        }
    }
}

/// Observed rates `D_x / E_x`.
pub fn crude_rates(table: &MortalityTable) -> (RateSurface, Vec<RateWarning>) {
    let mut warnings = Vec::new();
    let rate = table
        .exposure
        .iter()
        .zip(&table.deaths)
        .enumerate()
        .map(|(i, (&e, &d))| {
            if e == 0.0 {
                warnings.push(RateWarning {
                    feature: table.space.feature(i),
                    kind: RateWarningKind::ZeroExposure,
                });
                0.0
            } else {
                let q = d as f64 / e;
                if q > 1.0 {
                    warnings.push(RateWarning {
                        feature: table.space.feature(i),
                        kind: RateWarningKind::ClampedAboveOne,
                    });
                    1.0
                } else {
                    q
                }
            }
        })
        .collect();
    let surface = RateSurface {
        space: table.space.clone(),
        rate,
    };
    (surface, warnings)
}

/// A partition of an age range into contiguous, disjoint buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgeBucketing {
    buckets: Vec<(u32, u32)>,
}

impl AgeBucketing {
    /// Buckets given as inclusive `(first, last)` age pairs. They must be
    /// listed in order and tile `ages` exactly.
    pub fn new(buckets: Vec<(u32, u32)>, ages: RangeInclusive<u32>) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::config("age bucketing needs at least one bucket"));
        }
        let mut next = *ages.start();
        for (i, &(lo, hi)) in buckets.iter().enumerate() {
            if lo > hi {
                return Err(Error::config(format!("bucket {} is empty ({lo}-{hi})", i + 1)));
            }
            if lo != next {
                return Err(Error::config(format!(
                    "bucket {} starts at age {lo}, expected {next}: buckets must be disjoint and cover every age",
                    i + 1
                )));
            }
            next = hi + 1;
        }
        if next != ages.end() + 1 {
            return Err(Error::config(format!(
                "buckets end at age {}, but the age range ends at {}",
                next - 1,
                ages.end()
            )));
        }
        Ok(AgeBucketing { buckets })
    }

    /// Parses `"0;1-14;15-44;45-64;65-84;85+"`-style specs. An open bucket
    /// `a+` extends to the top of `ages`.
    pub fn parse(spec: &str, ages: RangeInclusive<u32>) -> Result<Self> {
        let parse_age = |s: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Error::config(format!("bad age {s:?} in bucket spec {spec:?}")))
        };
        let buckets = spec
            .split(';')
            .map(|part| {
                let part = part.trim();
                if let Some(lo) = part.strip_suffix('+') {
                    Ok((parse_age(lo)?, *ages.end()))
                } else if let Some((lo, hi)) = part.split_once('-') {
                    Ok((parse_age(lo)?, parse_age(hi)?))
                } else {
                    let a = parse_age(part)?;
                    Ok((a, a))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(buckets, ages)
    }

    /// The six cause-of-death age groups `{0}, 1-14, 15-44, 45-64, 65-84, 85+`
    /// over `0..=age_max`.
    pub fn cod_default(age_max: u32) -> Result<Self> {
        Self::parse(DEFAULT_COD_BUCKETS, 0..=age_max)
    }

    /// Identity partition: one bucket per age.
    pub fn single_ages(ages: RangeInclusive<u32>) -> Result<Self> {
        let buckets = ages.clone().map(|a| (a, a)).collect();
        Self::new(buckets, ages)
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn buckets(&self) -> &[(u32, u32)] {
        &self.buckets
    }

    pub fn ages(&self) -> RangeInclusive<u32> {
        self.buckets[0].0..=self.buckets[self.buckets.len() - 1].1
    }

    /// Zero-based bucket position of `age`.
    pub fn bucket_of(&self, age: u32) -> Option<usize> {
        self.buckets
            .iter()
            .position(|&(lo, hi)| (lo..=hi).contains(&age))
    }

    /// Bucket label in spec notation, e.g. `"15-44"`.
    pub fn label(&self, bucket: usize) -> String {
        let (lo, hi) = self.buckets[bucket];
        if lo == hi {
            lo.to_string()
        } else {
            format!("{lo}-{hi}")
        }
    }

    /// Spec string that [`AgeBucketing::parse`] maps back to `self`.
    pub fn spec(&self) -> String {
        (0..self.len())
            .map(|i| self.label(i))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Feature space whose "age" axis is the one-based bucket index `1..=I`.
    pub fn condensed_space(&self, space: &FeatureSpace) -> Result<FeatureSpace> {
        FeatureSpace::new(space.genders(), 1..=self.len() as u32, space.years())
    }
}

pub const DEFAULT_COD_BUCKETS: &str = "0;1-14;15-44;45-64;65-84;85+";

/// Rates and exposures on the age-bucketed grid `G x I x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedRates {
    /// Rates over the condensed space; its age axis holds bucket indices `1..=I`.
    pub rates: RateSurface,
    /// Total exposure `E_x~` per condensed cell, same layout as `rates`.
    pub exposure: Vec<f64>,
    pub buckets: AgeBucketing,
}

fn check_bucket_cover(space: &FeatureSpace, buckets: &AgeBucketing) -> Result<()> {
    if buckets.ages() != space.ages() {
        return Err(Error::domain(format!(
            "buckets cover ages {:?} but the feature space has ages {:?}",
            buckets.ages(),
            space.ages()
        )));
    }
    Ok(())
}

/// Exposure-weighted condensation of `q` onto age buckets:
/// `q~(x~) = sum_{x~x~} E_x q(x) / E_x~`.
pub fn aggregate_rates(
    q: &RateSurface,
    table: &MortalityTable,
    buckets: &AgeBucketing,
) -> Result<CondensedRates> {
    if q.space() != table.space() {
        return Err(Error::domain("rate surface and table use different feature spaces"));
    }
    let space = table.space();
    check_bucket_cover(space, buckets)?;
    let condensed = buckets.condensed_space(space)?;
    let mut rate = Vec::with_capacity(condensed.len());
    let mut exposure = Vec::with_capacity(condensed.len());
    for x in condensed.iter() {
        let (lo, hi) = buckets.buckets()[x.age as usize - 1];
        let mut expected = 0.0;
        let mut total = 0.0;
        for age in lo..=hi {
            let i = space
                .index(&Feature::new(x.gender, age, x.year))
                .expect("bucket ages lie in the space");
            expected += table.exposure[i] * q.rate[i];
            total += table.exposure[i];
        }
        if total <= 0.0 {
            return Err(Error::data(format!(
                "age bucket {} ({}) has zero total exposure for {} in {}",
                x.age,
                buckets.label(x.age as usize - 1),
                x.gender,
                x.year
            )));
        }
        if lo == hi {
            // single-age bucket: the rate itself, so the identity partition is exact
            let i = space.index(&Feature::new(x.gender, lo, x.year)).unwrap();
            rate.push(q.rate[i]);
        } else {
            rate.push(conserving_quotient(expected, total).clamp(0.0, 1.0));
        }
        exposure.push(total);
    }
    Ok(CondensedRates {
        rates: RateSurface::new(condensed, rate)?,
        exposure,
        buckets: buckets.clone(),
    })
}

/// Sums exposures and deaths over age buckets.
pub fn aggregate_table(table: &MortalityTable, buckets: &AgeBucketing) -> Result<MortalityTable> {
    let space = table.space();
    check_bucket_cover(space, buckets)?;
    let condensed = buckets.condensed_space(space)?;
    let mut exposure = Vec::with_capacity(condensed.len());
    let mut deaths = Vec::with_capacity(condensed.len());
    for x in condensed.iter() {
        let (lo, hi) = buckets.buckets()[x.age as usize - 1];
        let mut e = 0.0;
        let mut d = 0;
        for age in lo..=hi {
            let i = space
                .index(&Feature::new(x.gender, age, x.year))
                .expect("bucket ages lie in the space");
            e += table.exposure[i];
            d += table.deaths[i];
        }
        exposure.push(e);
        deaths.push(d);
    }
    MortalityTable::new(condensed, exposure, deaths)
}

/// `num / den`, nudged by at most one ulp so that the product with `den`
/// lands as close to `num` as floating point allows.
fn conserving_quotient(num: f64, den: f64) -> f64 {
    let q = num / den;
    [q.next_down(), q, q.next_up()]
        .into_iter()
        .filter(|c| *c >= 0.0)
        .min_by(|a, b| {
            let ea = (a * den - num).abs();
            let eb = (b * den - num).abs();
            // prefer the plain quotient on ties
            ea.total_cmp(&eb).then_with(|| (a - q).abs().total_cmp(&(b - q).abs()))
        })
        .unwrap_or(q)
}
