//! Seeded Poisson sampling of death counts.
//!
//! Every cell draws from its own ChaCha stream keyed by the seed and the cell
//! (and cause) index, so results do not depend on iteration order or on the
//! number of threads.

use std::collections::HashSet;
use std::ops::RangeInclusive;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::cod::ThetaSurface;
use crate::domain::{
    aggregate_rates, AgeBucketing, FeatureSpace, Gender, MortalityTable, RateSurface,
};
use crate::error::{Error, Result};
use crate::ingest::{CauseDeathTable, CauseRegistry};

/// Generating model: true rates, exposures and optionally cause
/// probabilities on the same grid.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub q: RateSurface,
    pub exposure: Vec<f64>,
    pub theta: Option<ThetaSurface>,
    pub seed: u64,
}

impl SimSpec {
    fn validate(&self) -> Result<()> {
        if self.exposure.len() != self.q.space().len() {
            return Err(Error::data(format!(
                "{} exposures for {} cells",
                self.exposure.len(),
                self.q.space().len()
            )));
        }
        if self.exposure.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::data("exposures must be finite and nonnegative"));
        }
        if let Some(theta) = &self.theta {
            if theta.space() != self.q.space() {
                return Err(Error::domain("theta and rates use different grids"));
            }
            for row in theta.values().chunks(theta.n_causes()) {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::data(format!("cause probabilities sum to {s}, not 1")));
                }
            }
        }
        Ok(())
    }
}

const CAUSE_STREAMS: u64 = 1 << 62;

fn cell_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One Poisson draw: inversion below mean 10, transformed rejection (PTRS)
/// above.
pub fn sample_poisson(rng: &mut impl RngCore, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < 10.0 {
        let u = unit(rng);
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf && k < 1000 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = unit(rng) - 0.5;
        let v = unit(rng);
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// `D_x ~ Pois(q(x) E_x)` independently per cell.
pub fn sample_deaths(spec: &SimSpec) -> Result<MortalityTable> {
    spec.validate()?;
    let deaths: Vec<u64> = spec
        .q
        .rates()
        .par_iter()
        .zip(spec.exposure.par_iter())
        .enumerate()
        .map(|(i, (q, e))| sample_poisson(&mut cell_rng(spec.seed, i as u64), q * e))
        .collect();
    MortalityTable::new(spec.q.space().clone(), spec.exposure.clone(), deaths)
}

/// `D_{x,k} ~ Pois(theta(k|x) q(x) E_x)` on a condensed grid (age axis =
/// bucket index), with the implied all-cause table.
pub fn sample_cause_deaths(
    spec: &SimSpec,
    buckets: &AgeBucketing,
    causes: &CauseRegistry,
) -> Result<(CauseDeathTable, MortalityTable)> {
    spec.validate()?;
    let theta = spec
        .theta
        .as_ref()
        .ok_or_else(|| Error::config("cause sampling needs cause probabilities"))?;
    let space = spec.q.space();
    if space.ages() != (1..=buckets.len() as u32) {
        return Err(Error::domain("cause sampling runs on the bucket-indexed grid"));
    }
    let k_count = theta.n_causes();
    if k_count != causes.len() {
        return Err(Error::domain(format!(
            "{} cause probabilities for {} causes",
            k_count,
            causes.len()
        )));
    }
    let counts: Vec<Option<u64>> = theta
        .values()
        .par_iter()
        .enumerate()
        .map(|(flat, t)| {
            let cell = flat / k_count;
            let mean = t * spec.q.rates()[cell] * spec.exposure[cell];
            let mut rng = cell_rng(spec.seed, CAUSE_STREAMS | flat as u64);
            Some(sample_poisson(&mut rng, mean))
        })
        .collect();
    let totals: Vec<u64> = counts
        .chunks(k_count)
        .map(|row| row.iter().flatten().sum())
        .collect();
    let cod = CauseDeathTable::new(
        space.genders(),
        buckets.clone(),
        space.years(),
        causes.clone(),
        counts,
    )?;
    let all = MortalityTable::new(space.clone(), spec.exposure.clone(), totals)?;
    Ok((cod, all))
}

/// Parametric scenario read from `key = value` lines.
///
/// `log q = level + age_slope * age + period_drift * (year - first year)
/// + male_offset [male] + log shock_factor [shock year]
/// + log cohort_factor [cohort year]`, capped at `q = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub genders: Vec<Gender>,
    pub ages: RangeInclusive<u32>,
    pub years: RangeInclusive<i32>,
    pub exposure: f64,
    pub level: f64,
    pub age_slope: f64,
    pub period_drift: f64,
    pub male_offset: f64,
    pub shock_years: Option<RangeInclusive<i32>>,
    pub shock_factor: f64,
    pub cohort_years: Option<RangeInclusive<i32>>,
    pub cohort_factor: f64,
    /// Number of causes; 0 disables cause-of-death output.
    pub causes: usize,
    pub cod_buckets: String,
    /// Log-linear drift of cause weights over years.
    pub cause_trend: f64,
    /// One-based cause reported as missing over `missing_years`.
    pub missing_cause: Option<usize>,
    pub missing_years: Option<RangeInclusive<i32>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            genders: Gender::ALL.to_vec(),
            ages: 0..=99,
            years: 1950..=2014,
            exposure: 1e5,
            level: -9.0,
            age_slope: 0.085,
            period_drift: -0.012,
            male_offset: 0.4,
            shock_years: None,
            shock_factor: 1.0,
            cohort_years: None,
            cohort_factor: 1.0,
            causes: 0,
            cod_buckets: crate::domain::DEFAULT_COD_BUCKETS.to_string(),
            cause_trend: 0.0,
            missing_cause: None,
            missing_years: None,
        }
    }
}

fn parse_range<T: std::str::FromStr + PartialOrd + Copy>(
    s: &str,
) -> std::result::Result<RangeInclusive<T>, String> {
    let (a, b) = s.split_once(':').unwrap_or((s, s));
    let a: T = a.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    let b: T = b.trim().parse().map_err(|_| format!("bad range {s:?}"))?;
    if a > b {
        return Err(format!("empty range {s:?}"));
    }
    Ok(a..=b)
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line_no, format!("key {key:?} given twice")));
            }
            let bad = |what: &str| Error::parse(line_no, format!("bad {what} {value:?} for {key}"));
            let num = || value.parse::<f64>().map_err(|_| bad("number"));
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "genders" => {
                    cfg.genders = value
                        .split(',')
                        .map(|g| g.trim().parse::<Gender>())
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::parse(line_no, e))?
                }
                "ages" => cfg.ages = parse_range(value).map_err(|e| Error::parse(line_no, e))?,
                "years" => cfg.years = parse_range(value).map_err(|e| Error::parse(line_no, e))?,
                "exposure" => cfg.exposure = num()?,
                "level" => cfg.level = num()?,
                "age_slope" => cfg.age_slope = num()?,
                "period_drift" => cfg.period_drift = num()?,
                "male_offset" => cfg.male_offset = num()?,
                "shock_years" => {
                    cfg.shock_years = Some(parse_range(value).map_err(|e| Error::parse(line_no, e))?)
                }
                "shock_factor" => cfg.shock_factor = num()?,
                "cohort_years" => {
                    cfg.cohort_years = Some(parse_range(value).map_err(|e| Error::parse(line_no, e))?)
                }
                "cohort_factor" => cfg.cohort_factor = num()?,
                "causes" => cfg.causes = value.parse().map_err(|_| bad("integer"))?,
                "cod_buckets" => cfg.cod_buckets = value.to_string(),
                "cause_trend" => cfg.cause_trend = num()?,
                "missing_cause" => cfg.missing_cause = Some(value.parse().map_err(|_| bad("integer"))?),
                "missing_years" => {
                    cfg.missing_years = Some(parse_range(value).map_err(|e| Error::parse(line_no, e))?)
                }
                _ => return Err(Error::parse(line_no, format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exposure >= 0.0) || !self.exposure.is_finite() {
            return Err(Error::config("exposure must be finite and nonnegative"));
        }
        for (name, f) in [("shock_factor", self.shock_factor), ("cohort_factor", self.cohort_factor)] {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if let Some(k) = self.missing_cause {
            if k == 0 || k > self.causes {
                return Err(Error::config(format!("missing_cause {k} outside 1..={}", self.causes)));
            }
        }
        if self.genders.is_empty() {
            return Err(Error::config("at least one gender is required"));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FeatureSpace> {
        FeatureSpace::new(&self.genders, self.ages.clone(), self.years.clone())
    }

    /// The true rate surface.
    pub fn rates(&self) -> Result<RateSurface> {
        let t0 = *self.years.start();
        RateSurface::from_fn(self.space()?, |x| {
            let mut log_q = self.level
                + self.age_slope * x.age as f64
                + self.period_drift * (x.year - t0) as f64;
            if x.gender == Gender::Male {
                log_q += self.male_offset;
            }
            if self.shock_years.as_ref().is_some_and(|r| r.contains(&x.year)) {
                log_q += self.shock_factor.ln();
            }
            let cohort = x.year - x.age as i32;
            if self.cohort_years.as_ref().is_some_and(|r| r.contains(&cohort)) {
                log_q += self.cohort_factor.ln();
            }
            log_q.exp().min(1.0)
        })
    }

    pub fn buckets(&self) -> Result<AgeBucketing> {
        AgeBucketing::parse(&self.cod_buckets, self.ages.clone())
    }

    /// True cause probabilities on the condensed grid: weights
    /// `(k+1) exp(cause_trend (k - (K-1)/2) (year - first year))`, normalized.
    pub fn theta(&self, condensed: &FeatureSpace) -> Result<ThetaSurface> {
        let k_count = self.causes;
        let t0 = *self.years.start();
        let centre = (k_count as f64 - 1.0) / 2.0;
        let mut theta = Vec::with_capacity(condensed.len() * k_count);
        for x in condensed.iter() {
            let w: Vec<f64> = (0..k_count)
                .map(|k| {
                    (k as f64 + 1.0) * (self.cause_trend * (k as f64 - centre) * (x.year - t0) as f64).exp()
                })
                .collect();
            let s: f64 = w.iter().sum();
            theta.extend(w.iter().map(|v| v / s));
        }
        ThetaSurface::new(condensed.clone(), k_count, theta)
    }
}

/// Everything a scenario produces.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub q_true: RateSurface,
    pub table: MortalityTable,
    /// Cause counts, the true cause probabilities and the condensed all-cause
    /// table, when causes are configured.
    pub cod: Option<(CauseDeathTable, ThetaSurface, MortalityTable)>,
}

pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let q = cfg.rates()?;
    let space = q.space().clone();
    let exposure = vec![cfg.exposure; space.len()];
    let spec = SimSpec {
        q: q.clone(),
        exposure,
        theta: None,
        seed: cfg.seed,
    };
    let table = sample_deaths(&spec)?;
    let cod = if cfg.causes == 0 {
        None
    } else {
        let buckets = cfg.buckets()?;
        // the rate-only table of expected counts carries the exposure weights
        let weights = MortalityTable::new(space.clone(), spec.exposure.clone(), vec![0; space.len()])?;
        let condensed = aggregate_rates(&q, &weights, &buckets)?;
        let theta = cfg.theta(condensed.rates.space())?;
        let cause_spec = SimSpec {
            q: condensed.rates.clone(),
            exposure: condensed.exposure.clone(),
            theta: Some(theta.clone()),
            seed: cfg.seed,
        };
        let registry = CauseRegistry::numbered(cfg.causes)?;
        let (cod, all) = sample_cause_deaths(&cause_spec, &buckets, &registry)?;
        let cod = match (cfg.missing_cause, &cfg.missing_years) {
            (Some(k), Some(years)) => {
                let mut counts = cod.counts().to_vec();
                for (i, x) in cod.feature_space().iter().enumerate() {
                    if years.contains(&x.year) {
                        counts[i * cfg.causes + k - 1] = None;
                    }
                }
                CauseDeathTable::new(
                    cod.genders(),
                    buckets.clone(),
                    cod.years(),
                    registry,
                    counts,
                )?
            }
            _ => cod,
        };
        Some((cod, theta, all))
    };
    Ok(Simulation {
        q_true: q,
        table,
        cod,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(lambda: f64, reps: u64, seed: u64) -> (f64, f64) {
        let draws: Vec<f64> = (0..reps)
            .map(|r| sample_poisson(&mut cell_rng(seed, r), lambda) as f64)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn poisson_moments_across_regimes() {
        let reps = 10_000u64;
        let tol = 5.0 / (reps as f64).sqrt();
        for lambda in [0.5, 3.0, 9.9, 10.0, 57.0, 1e4, 1e6] {
            let (mean, var) = moments(lambda, reps, 7);
            assert!((mean / lambda - 1.0).abs() < tol, "mean {mean} for {lambda}");
            assert!((var / lambda - 1.0).abs() < tol, "variance {var} for {lambda}");
        }
    }

    #[test]
    fn poisson_small_mean_probabilities() {
        // P(0) = e^-lambda
        let lambda = 1e-3;
        let zeros = (0..100_000u64)
            .filter(|&r| sample_poisson(&mut cell_rng(3, r), lambda) == 0)
            .count();
        let expected = 100_000.0 * (-lambda).exp();
        assert!((zeros as f64 - expected).abs() < 5.0 * (100_000.0 * lambda).sqrt() + 1.0);
        assert_eq!(sample_poisson(&mut cell_rng(3, 0), 0.0), 0);
    }

    fn flat_spec(q: f64, e: f64, seed: u64) -> SimSpec {
        let space = FeatureSpace::new(&[Gender::Female], 0..=9, 2000..=2009).unwrap();
        let n = space.len();
        SimSpec {
            q: RateSurface::new(space, vec![q; n]).unwrap(),
            exposure: vec![e; n],
            theta: None,
            seed,
        }
    }

    #[test]
    fn deaths_large_exposure() {
        let t = sample_deaths(&flat_spec(0.0, 1e8, 1)).unwrap();
        assert!(t.deaths().iter().all(|&d| d == 0));
        let t = sample_deaths(&flat_spec(0.01, 1e8, 1)).unwrap();
        let mean = 1e6;
        assert!(t.deaths().iter().all(|&d| (d as f64 - mean).abs() < 5.0 * 1e3));
        let avg = t.total_deaths() as f64 / 100.0;
        assert!((avg / mean - 1.0).abs() < 1e-3);
        assert_eq!(t, sample_deaths(&flat_spec(0.01, 1e8, 1)).unwrap());
        assert_ne!(t, sample_deaths(&flat_spec(0.01, 1e8, 2)).unwrap());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let spec = flat_spec(0.02, 1e4, 11);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        assert_eq!(one.install(|| sample_deaths(&spec).unwrap()), four.install(|| sample_deaths(&spec).unwrap()));
    }

    #[test]
    fn cause_deaths() {
        let buckets = AgeBucketing::parse("0-4;5-9", 0..=9).unwrap();
        let space = FeatureSpace::new(&[Gender::Male], 1..=2, 1..=5000).unwrap();
        let n = space.len();
        let theta = ThetaSurface::new(space.clone(), 3, (0..n).flat_map(|_| [0.5, 0.5, 0.0]).collect()).unwrap();
        let spec = SimSpec {
            q: RateSurface::new(space, vec![0.01; n]).unwrap(),
            exposure: vec![20_000.0; n],
            theta: Some(theta),
            seed: 5,
        };
        let (cod, all) = sample_cause_deaths(&spec, &buckets, &CauseRegistry::numbered(3).unwrap()).unwrap();
        let mut sums = [0u64; 3];
        for (i, c) in cod.counts().iter().enumerate() {
            sums[i % 3] += c.unwrap();
        }
        assert_eq!(sums[2], 0);
        for s in &sums[..2] {
            assert!((*s as f64 / n as f64 / 100.0 - 1.0).abs() < 0.01);
        }
        assert_eq!(all.total_deaths(), sums.iter().sum::<u64>());
        let bad = SimSpec { theta: None, ..spec };
        assert!(sample_cause_deaths(&bad, &buckets, &CauseRegistry::numbered(3).unwrap()).is_err());
    }

    #[test]
    fn cause_sum_variance_matches_all_cause() {
        // 10k replicates of one cell: Var(sum_k D_k) = q E
        let lambda = 40.0;
        let theta = [0.2, 0.3, 0.5];
        let totals: Vec<f64> = (0..10_000u64)
            .map(|r| {
                theta
                    .iter()
                    .enumerate()
                    .map(|(k, t)| sample_poisson(&mut cell_rng(r, CAUSE_STREAMS | k as u64), t * lambda))
                    .sum::<u64>() as f64
            })
            .collect();
        let mean = totals.iter().sum::<f64>() / 1e4;
        let var = totals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (1e4 - 1.0);
        assert!((mean / lambda - 1.0).abs() < 0.05);
        assert!((var / lambda - 1.0).abs() < 0.05);
    }

    #[test]
    fn config_parsing() {
        let text = "# scenario\nseed = 9\ngenders = male\nages = 0:9\nyears = 2000:2004\nexposure = 1e6\n\
                    shock_years = 2002:2002\nshock_factor = 2\ncauses = 4\ncod_buckets = 0-4;5+\n\
                    missing_cause = 4\nmissing_years = 2000:2001\n";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.genders, vec![Gender::Male]);
        assert_eq!(cfg.years, 2000..=2004);
        let q = cfg.rates().unwrap();
        let x = |t| crate::domain::Feature::new(Gender::Male, 5, t);
        let ratio = q.rate(&x(2002)).unwrap() / q.rate(&x(2001)).unwrap();
        assert!((ratio - 2.0 * cfg.period_drift.exp()).abs() < 1e-12);
        let sim = simulate(&cfg).unwrap();
        let (cod, theta, _) = sim.cod.unwrap();
        assert_eq!(cod.missing_count(), 2 * 2);
        for row in theta.values().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(SimConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(SimConfig::parse("colour = blue\n").is_err());
        assert!(SimConfig::parse("causes = 2\nmissing_cause = 3\n").is_err());
        assert!(SimConfig::parse("ages = 9:1\n").is_err());
    }
}
