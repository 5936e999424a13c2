//! Cause-of-death probabilities by one-step tree boosting.
//!
//! With `D_{x,k} ~ Pois(theta(k|x) q(x) E_x)` on the age-bucketed grid, an
//! initial guess `theta0` gives volumes `d_{x,k} = theta0 q~ E~`. A Poisson
//! tree over gender, age bucket, year and cause then rescales the guess:
//! `theta_tree = mu theta0`.

use crate::domain::{CondensedRates, Feature, FeatureSpace};
use crate::error::{Error, Result};
use crate::ingest::CauseDeathTable;
use crate::tree::{grow_tree, PoissonTree, TreeConfig, WorkingPoint, CAUSE_FEATURES};

/// Probabilities `theta(k|x)` per condensed feature and cause, cause fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSurface {
    space: FeatureSpace,
    n_causes: usize,
    theta: Vec<f64>,
}

impl ThetaSurface {
    pub fn new(space: FeatureSpace, n_causes: usize, theta: Vec<f64>) -> Result<Self> {
        if n_causes == 0 {
            return Err(Error::config("at least one cause is required"));
        }
        if theta.len() != space.len() * n_causes {
            return Err(Error::data(format!(
                "theta surface has {} values for {} cells",
                theta.len(),
                space.len() * n_causes
            )));
        }
        if let Some(v) = theta.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::data(format!("cause probability {v} outside [0, 1]")));
        }
        Ok(ThetaSurface {
            space,
            n_causes,
            theta,
        })
    }

    /// `theta = 1/K` everywhere.
    pub fn uniform(space: FeatureSpace, n_causes: usize) -> Result<Self> {
        if n_causes == 0 {
            return Err(Error::config("at least one cause is required"));
        }
        let v = 1.0 / n_causes as f64;
        let theta = vec![v; space.len() * n_causes];
        Self::new(space, n_causes, theta)
    }

    /// Feature-independent observed cause frequencies over available cells.
    pub fn empirical(cod: &CauseDeathTable) -> Result<Self> {
        let k = cod.n_causes();
        let mut totals = vec![0u64; k];
        for (i, c) in cod.counts().iter().enumerate() {
            totals[i % k] += c.unwrap_or(0);
        }
        let sum: u64 = totals.iter().sum();
        if sum == 0 {
            return Err(Error::data("no cause-of-death counts to take frequencies from"));
        }
        let freq: Vec<f64> = totals.iter().map(|&t| t as f64 / sum as f64).collect();
        let space = cod.feature_space();
        let theta = (0..space.len()).flat_map(|_| freq.iter().copied()).collect();
        Self::new(space, k, theta)
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn n_causes(&self) -> usize {
        self.n_causes
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta(&self, x: &Feature, cause: usize) -> Option<f64> {
        if cause >= self.n_causes {
            return None;
        }
        self.space
            .index(x)
            .map(|i| self.theta[i * self.n_causes + cause])
    }
}

#[derive(Debug, Clone)]
pub struct CodWorkingData {
    pub points: Vec<WorkingPoint>,
    /// Flat `(cell, cause)` index of every point.
    pub cells: Vec<usize>,
    /// `(cell, cause)` entries left out because their volume is zero.
    pub dropped: Vec<usize>,
}

fn check_grids(cod: &CauseDeathTable, rates: &CondensedRates, theta: &ThetaSurface) -> Result<()> {
    let space = cod.feature_space();
    if rates.rates.space() != &space {
        return Err(Error::domain(
            "condensed rates and cause-of-death table use different grids",
        ));
    }
    if rates.buckets != *cod.buckets() {
        return Err(Error::domain(
            "condensed rates and cause-of-death table use different age buckets",
        ));
    }
    if theta.space() != &space || theta.n_causes() != cod.n_causes() {
        return Err(Error::domain(
            "theta surface does not match the cause-of-death table",
        ));
    }
    Ok(())
}

/// Working data `(D_{x,k}, (x,k), theta0 q~ E~)`. Missing counts are kept
/// with a missing response.
pub fn make_cod_working_data(
    cod: &CauseDeathTable,
    rates: &CondensedRates,
    theta0: &ThetaSurface,
) -> Result<CodWorkingData> {
    check_grids(cod, rates, theta0)?;
    let k_count = cod.n_causes();
    let mut data = CodWorkingData {
        points: Vec::with_capacity(cod.counts().len()),
        cells: Vec::with_capacity(cod.counts().len()),
        dropped: Vec::new(),
    };
    for (i, x) in cod.feature_space().iter().enumerate() {
        let expected = rates.rates.rates()[i] * rates.exposure[i];
        for k in 0..k_count {
            let flat = i * k_count + k;
            let response = cod.counts()[flat];
            let volume = theta0.values()[flat] * expected;
            if volume == 0.0 {
                if response.unwrap_or(0) > 0 {
                    return Err(Error::domain(format!(
                        "({}, age group {}, {}) cause {} has deaths but zero expected deaths",
                        x.gender,
                        x.age,
                        x.year,
                        cod.causes().labels()[k]
                    )));
                }
                data.dropped.push(flat);
                continue;
            }
            data.points.push(WorkingPoint {
                gender: x.gender,
                age: x.age,
                year: x.year,
                cause: Some(k as u16),
                volume,
                response,
            });
            data.cells.push(flat);
        }
    }
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    /// `min(1, mu theta0)`.
    pub raw: ThetaSurface,
    /// `raw` divided by its sum over causes with available data; missing
    /// causes get 0.
    pub normalized: ThetaSurface,
    /// Tree factor per `(cell, cause)`.
    pub mu_hat: Vec<f64>,
    pub tree: PoissonTree,
    /// `(cell, cause)` entries routed through a split on an unseen cause.
    pub unseen: Vec<usize>,
    pub dropped: Vec<usize>,
}

pub fn estimate_theta_tree(
    cod: &CauseDeathTable,
    rates: &CondensedRates,
    theta0: &ThetaSurface,
    cfg: &TreeConfig,
) -> Result<ThetaEstimate> {
    let data = make_cod_working_data(cod, rates, theta0)?;
    let tree = grow_tree(&data.points, &CAUSE_FEATURES, cfg)?;
    let k_count = cod.n_causes();
    let space = cod.feature_space();
    let mut mu_hat = Vec::with_capacity(theta0.values().len());
    let mut unseen = Vec::new();
    for x in space.iter() {
        for k in 0..k_count {
            let (leaf, flagged) = tree.route(&WorkingPoint {
                gender: x.gender,
                age: x.age,
                year: x.year,
                cause: Some(k as u16),
                volume: 1.0,
                response: None,
            });
            if flagged {
                unseen.push(mu_hat.len());
            }
            mu_hat.push(tree.nodes()[leaf].mu);
        }
    }
    let raw: Vec<f64> = mu_hat
        .iter()
        .zip(theta0.values())
        .map(|(mu, t)| (mu * t).min(1.0))
        .collect();
    let mut normalized = vec![0.0; raw.len()];
    for (cell, row) in raw.chunks(k_count).enumerate() {
        let counts = &cod.counts()[cell * k_count..(cell + 1) * k_count];
        let total: f64 = row
            .iter()
            .zip(counts)
            .filter(|(_, c)| c.is_some())
            .map(|(t, _)| t)
            .sum();
        if total > 0.0 {
            for k in 0..k_count {
                if counts[k].is_some() {
                    normalized[cell * k_count + k] = row[k] / total;
                }
            }
        }
    }
    Ok(ThetaEstimate {
        raw: ThetaSurface::new(space.clone(), k_count, raw)?,
        normalized: ThetaSurface::new(space, k_count, normalized)?,
        mu_hat,
        tree,
        unseen,
        dropped: data.dropped,
    })
}

/// Pearson residuals per condensed feature and cause.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGrid {
    pub space: FeatureSpace,
    pub n_causes: usize,
    pub residual: Vec<f64>,
    /// Features whose all-cause total was a partial sum over available causes.
    pub partial: Vec<bool>,
}

/// `(D_{x,k} - theta D_x) / sqrt(theta D_x)`, or 0 when the denominator is
/// 0 or the count is missing. `D_x` defaults to the sum over available
/// causes.
pub fn pearson_residuals(
    cod: &CauseDeathTable,
    all_cause: Option<&[u64]>,
    theta: &ThetaSurface,
) -> Result<ResidualGrid> {
    let space = cod.feature_space();
    if theta.space() != &space || theta.n_causes() != cod.n_causes() {
        return Err(Error::domain(
            "theta surface does not match the cause-of-death table",
        ));
    }
    let (sums, partial) = cod.all_cause_sums();
    let totals: Vec<u64> = match all_cause {
        Some(d) if d.len() != space.len() => {
            return Err(Error::domain(format!(
                "all-cause grid has {} cells, expected {}",
                d.len(),
                space.len()
            )))
        }
        Some(d) => d.to_vec(),
        None => sums,
    };
    let partial = if all_cause.is_some() {
        vec![false; space.len()]
    } else {
        partial
    };
    let k_count = cod.n_causes();
    let residual = cod
        .counts()
        .iter()
        .zip(theta.values())
        .enumerate()
        .map(|(flat, (count, t))| {
            let expected = t * totals[flat / k_count] as f64;
            match count {
                Some(d) if expected > 0.0 => (*d as f64 - expected) / expected.sqrt(),
                _ => 0.0,
            }
        })
        .collect();
    Ok(ResidualGrid {
        space,
        n_causes: k_count,
        residual,
        partial,
    })
}

/// Centered moving average over an odd `window`. Edges and gaps average the
/// values that are present; an output is `None` only when the whole window
/// is empty.
pub fn moving_average(series: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::config(format!(
            "smoothing window must be a positive odd number, got {window}"
        )));
    }
    let half = window / 2;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(series.len() - 1);
            let present: Vec<f64> = series[lo..=hi].iter().flatten().copied().collect();
            if present.is_empty() {
                None
            } else {
                Some(present.iter().sum::<f64>() / present.len() as f64)
            }
        })
        .collect())
}

/// `gender,age_group,year,cause,theta_raw,theta_norm`, plus
/// `theta_raw_smoothed` when a smoothing window is given. Smoothing runs over
/// years for each gender, age group and cause.
pub fn write_theta_csv(est: &ThetaEstimate, smooth_window: Option<usize>) -> Result<String> {
    let space = est.raw.space();
    let k_count = est.raw.n_causes();
    let n_years = space.n_years();
    let smoothed = match smooth_window {
        None => None,
        Some(w) => {
            let mut out = vec![None; est.raw.values().len()];
            for row in 0..space.len() / n_years {
                for k in 0..k_count {
                    let at = |t: usize| (row * n_years + t) * k_count + k;
                    let series: Vec<Option<f64>> =
                        (0..n_years).map(|t| Some(est.raw.values()[at(t)])).collect();
                    for (t, v) in moving_average(&series, w)?.into_iter().enumerate() {
                        out[at(t)] = v;
                    }
                }
            }
            Some(out)
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["gender", "age_group", "year", "cause", "theta_raw", "theta_norm"];
    if smoothed.is_some() {
        header.push("theta_raw_smoothed");
    }
    w.write_record(&header)?;
    for (i, x) in space.iter().enumerate() {
        for k in 0..k_count {
            let flat = i * k_count + k;
            let mut rec = vec![
                x.gender.as_str().to_string(),
                x.age.to_string(),
                x.year.to_string(),
                (k + 1).to_string(),
                est.raw.values()[flat].to_string(),
                est.normalized.values()[flat].to_string(),
            ];
            if let Some(s) = &smoothed {
                rec.push(s[flat].map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `gender,age_group,year,cause,delta`.
pub fn write_residual_csv(grid: &ResidualGrid) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gender", "age_group", "year", "cause", "delta"])?;
    for (i, x) in grid.space.iter().enumerate() {
        for k in 0..grid.n_causes {
            w.write_record([
                x.gender.as_str(),
                &x.age.to_string(),
                &x.year.to_string(),
                &(k + 1).to_string(),
                &grid.residual[i * grid.n_causes + k].to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AgeBucketing, Gender, RateSurface};
    use crate::ingest::CauseRegistry;

    fn setup(
        counts: Vec<Option<u64>>,
        k: usize,
        years: std::ops::RangeInclusive<i32>,
        q: f64,
        e: f64,
    ) -> (CauseDeathTable, CondensedRates) {
        let buckets = AgeBucketing::parse("0-49;50-99", 0..=99).unwrap();
        let cod = CauseDeathTable::new(
            &[Gender::Female],
            buckets.clone(),
            years,
            CauseRegistry::numbered(k).unwrap(),
            counts,
        )
        .unwrap();
        let space = cod.feature_space();
        let n = space.len();
        let rates = CondensedRates {
            rates: RateSurface::new(space, vec![q; n]).unwrap(),
            exposure: vec![e; n],
            buckets,
        };
        (cod, rates)
    }

    #[test]
    fn initializers() {
        let space = FeatureSpace::new(&[Gender::Male], 1..=6, 1995..=2014).unwrap();
        let t = ThetaSurface::uniform(space.clone(), 12).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0 / 12.0));
        assert!((t.values()[0] - 0.08333).abs() < 1e-5);
        assert!(ThetaSurface::uniform(space.clone(), 1).unwrap().values().iter().all(|&v| v == 1.0));
        assert!(ThetaSurface::uniform(space, 0).is_err());

        let counts = vec![Some(30), Some(10), Some(60), None, Some(0), Some(0)];
        let (cod, _) = setup(counts, 3, 2000..=2000, 0.01, 1.0);
        let e = ThetaSurface::empirical(&cod).unwrap();
        assert_eq!(&e.values()[..3], &[0.3, 0.1, 0.6]);
        assert_eq!(&e.values()[3..], &[0.3, 0.1, 0.6]);
    }

    #[test]
    fn working_data_volumes() {
        // 2 buckets x 1 year x 12 causes
        let mut counts = vec![Some(100); 24];
        counts[23] = None;
        let (cod, rates) = setup(counts, 12, 2000..=2000, 0.02, 60000.0);
        let theta0 = ThetaSurface::uniform(cod.feature_space(), 12).unwrap();
        let data = make_cod_working_data(&cod, &rates, &theta0).unwrap();
        assert_eq!(data.points.len(), 24);
        assert!(data.points.iter().all(|p| (p.volume - 100.0).abs() < 1e-9));
        assert_eq!(data.points[23].response, None);

        let mut theta = theta0.values().to_vec();
        theta[0] = 0.0;
        let t = ThetaSurface::new(cod.feature_space(), 12, theta).unwrap();
        assert!(make_cod_working_data(&cod, &rates, &t).is_err());
    }

    #[test]
    fn identity_boost() {
        let counts: Vec<Option<u64>> = (0..2 * 3 * 4).map(|_| Some(50)).collect();
        let (cod, rates) = setup(counts, 4, 2000..=2002, 0.01, 20000.0);
        let theta0 = ThetaSurface::uniform(cod.feature_space(), 4).unwrap();
        let est = estimate_theta_tree(&cod, &rates, &theta0, &TreeConfig::default()).unwrap();
        assert_eq!(est.tree.nodes().len(), 1);
        assert!(est.raw.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(est.normalized.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn tree_recovers_cause_shares_and_normalizes() {
        // causes with shares 0.1, 0.2, 0.3, 0.4 of 1000 expected deaths
        let shares = [0.1, 0.2, 0.3, 0.4];
        let mut counts = Vec::new();
        for _cell in 0..2 * 5 {
            for s in shares {
                counts.push(Some((1000.0 * s) as u64));
            }
        }
        counts[7] = None;
        let (cod, rates) = setup(counts, 4, 2000..=2004, 0.01, 100000.0);
        let theta0 = ThetaSurface::uniform(cod.feature_space(), 4).unwrap();
        let cfg = TreeConfig { cp: 1e-4, min_bucket: 1, max_depth: 10 };
        let est = estimate_theta_tree(&cod, &rates, &theta0, &cfg).unwrap();
        for (flat, v) in est.raw.values().iter().enumerate() {
            assert!((v - shares[flat % 4]).abs() < 1e-12, "{flat}: {v}");
        }
        for row in est.normalized.values().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // the missing cell is routed like the others but excluded from the norm
        assert_eq!(est.normalized.values()[7], 0.0);
        assert!((est.normalized.values()[4] - 0.1 / 0.6).abs() < 1e-12);
        // leaf calibration over non-missing points
        let data = make_cod_working_data(&cod, &rates, &theta0).unwrap();
        let fitted: f64 = data
            .points
            .iter()
            .zip(&data.cells)
            .filter(|(p, _)| p.response.is_some())
            .map(|(p, &c)| est.mu_hat[c] * p.volume)
            .sum();
        let observed: u64 = cod.counts().iter().flatten().sum();
        assert!((fitted - observed as f64).abs() < 1e-9 * observed as f64);
    }

    #[test]
    fn residual_examples() {
        let counts = vec![Some(25), Some(30), None, Some(45)];
        let (cod, _) = setup(counts, 2, 2000..=2000, 0.01, 1.0);
        let theta = ThetaSurface::new(cod.feature_space(), 2, vec![0.25, 0.75, 0.25, 0.75]).unwrap();
        let all = [100, 100];
        let r = pearson_residuals(&cod, Some(&all), &theta).unwrap();
        assert_eq!(r.residual[0], 0.0);
        assert_eq!(r.residual[2], 0.0);
        assert!((r.residual[3] - (45.0 - 75.0) / 75f64.sqrt()).abs() < 1e-12);
        // second cell: D=30 against 0.25 * 100 is (30-25)/5
        let t2 = ThetaSurface::new(cod.feature_space(), 2, vec![0.25, 0.25, 0.25, 0.75]).unwrap();
        let r2 = pearson_residuals(&cod, Some(&all), &t2).unwrap();
        assert!((r2.residual[1] - 1.0).abs() < 1e-12);

        let own = pearson_residuals(&cod, None, &theta).unwrap();
        assert_eq!(own.partial, vec![false, true]);
        assert!((own.residual[3] - (45.0 - 33.75) / 33.75f64.sqrt()).abs() < 1e-12);
        let zero = ThetaSurface::new(cod.feature_space(), 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(pearson_residuals(&cod, None, &zero).unwrap().residual[0], 0.0);
        assert!(pearson_residuals(&cod, Some(&[1]), &theta).is_err());
    }

    #[test]
    fn smoothing() {
        let s = [Some(1.0), Some(2.0), Some(3.0), None, Some(5.0)];
        let out = moving_average(&s, 3).unwrap();
        assert_eq!(out, vec![Some(1.5), Some(2.0), Some(2.5), Some(4.0), Some(5.0)]);
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
        assert!(moving_average(&s, 4).is_err());
        assert_eq!(moving_average(&[None, None], 1).unwrap(), vec![None, None]);
    }

    #[test]
    fn csv_schemas() {
        let counts = vec![Some(10), Some(30), Some(10), None];
        let (cod, rates) = setup(counts, 2, 2000..=2000, 0.01, 2000.0);
        let theta0 = ThetaSurface::uniform(cod.feature_space(), 2).unwrap();
        let est = estimate_theta_tree(&cod, &rates, &theta0, &TreeConfig::default()).unwrap();
        let text = write_theta_csv(&est, Some(5)).unwrap();
        assert!(text.starts_with("gender,age_group,year,cause,theta_raw,theta_norm,theta_raw_smoothed\n"));
        assert_eq!(text.lines().count(), 5);
        let r = pearson_residuals(&cod, None, &est.raw).unwrap();
        let text = write_residual_csv(&r).unwrap();
        assert_eq!(text.lines().next(), Some("gender,age_group,year,cause,delta"));
        assert!(text.ends_with("female,2,2000,2,0\n"));
    }
}
