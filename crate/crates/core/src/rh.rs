//! Renshaw-Haberman model: Lee-Carter plus an age-modulated cohort effect,
//! `q = exp(beta0_a + beta1_a kappa_t + beta2_a gamma_{t-a})`, with
//! `sum beta1 = sum beta2 = 1`, `sum_t kappa_t = 0` and
//! `sum_{a,t} gamma_{t-a} = 0` (each cohort weighted by its number of grid
//! cells).

use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::domain::{Feature, Gender, MortalityTable};
use crate::error::{Error, Result};
use crate::lc::{age_vector, fit_lc, LcParams};
use crate::model::{
    clamp_rate, cohort_multiplicity, exact_sum, fit_slice, Coefs, FitConfig, FitReport, ParamKind, ParamSet,
    RateModel, SliceData,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RhParams {
    pub gender: Gender,
    pub ages: RangeInclusive<u32>,
    pub years: RangeInclusive<i32>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Age sensitivity to the cohort index.
    pub beta2: Vec<f64>,
    /// Cohort index, starting at cohort `years.start - ages.end`.
    pub gamma: Vec<f64>,
    pub rate_floor: f64,
}

#[derive(Debug, Clone)]
pub struct RhFit {
    pub params: RhParams,
    pub report: FitReport,
    /// Deviance of the starting point (the Lee-Carter fit when warm-started).
    pub initial_deviance: f64,
}

impl RhParams {
    pub fn cohorts(&self) -> RangeInclusive<i32> {
        (self.years.start() - *self.ages.end() as i32)..=(self.years.end() - *self.ages.start() as i32)
    }

    fn slice_shape(&self) -> SliceData {
        SliceData {
            ages: self.ages.clone(),
            years: self.years.clone(),
            n_ages: self.beta0.len(),
            n_years: self.kappa.len(),
            exposure: Vec::new(),
            deaths: Vec::new(),
        }
    }

    pub(crate) fn coefs(&self) -> Coefs {
        Coefs {
            beta0: self.beta0.clone(),
            beta1: self.beta1.clone(),
            kappa: self.kappa.clone(),
            beta2: self.beta2.clone(),
            gamma: self.gamma.clone(),
        }
    }

    pub(crate) fn from_coefs(data: &SliceData, gender: Gender, c: Coefs, rate_floor: f64) -> Self {
        RhParams {
            gender,
            ages: data.ages.clone(),
            years: data.years.clone(),
            beta0: c.beta0,
            beta1: c.beta1,
            kappa: c.kappa,
            beta2: c.beta2,
            gamma: c.gamma,
            rate_floor,
        }
    }

    pub fn log_rate(&self, age: u32, year: i32) -> Result<f64> {
        if !self.ages.contains(&age) || !self.years.contains(&year) {
            return Err(Error::domain(format!(
                "({age}, {year}) outside the fitted ranges ages {:?}, years {:?}",
                self.ages, self.years
            )));
        }
        let a = (age - self.ages.start()) as usize;
        let t = (year - self.years.start()) as usize;
        let c = (year - age as i32 - self.cohorts().start()) as usize;
        Ok(self.beta0[a] + self.beta1[a] * self.kappa[t] + self.beta2[a] * self.gamma[c])
    }

    /// `(sum beta1 - 1, sum beta2 - 1, sum kappa, sum_{a,t} gamma_{t-a})`.
    pub fn constraint_residuals(&self) -> (f64, f64, f64, f64) {
        let shape = self.slice_shape();
        let gamma_grid = exact_sum(
            self.gamma
                .iter()
                .enumerate()
                .map(|(c, g)| cohort_multiplicity(&shape, c) as f64 * g),
        );
        (
            exact_sum(self.beta1.iter().copied()) - 1.0,
            exact_sum(self.beta2.iter().copied()) - 1.0,
            exact_sum(self.kappa.iter().copied()),
            gamma_grid,
        )
    }

    /// Number of grid cells in each cohort, aligned with `gamma`.
    pub fn cohort_cells(&self) -> Vec<usize> {
        let shape = self.slice_shape();
        (0..self.gamma.len())
            .map(|c| cohort_multiplicity(&shape, c))
            .collect()
    }

    pub fn to_rows(&self) -> Vec<(Gender, ParamKind, i64, f64)> {
        let g = self.gender;
        let ages = self.ages.clone().map(i64::from);
        let mut rows = Vec::new();
        rows.extend(ages.clone().zip(&self.beta0).map(|(a, &v)| (g, ParamKind::Beta0, a, v)));
        rows.extend(ages.clone().zip(&self.beta1).map(|(a, &v)| (g, ParamKind::Beta1, a, v)));
        rows.extend(self.years.clone().map(i64::from).zip(&self.kappa).map(|(t, &v)| (g, ParamKind::Kappa, t, v)));
        rows.extend(ages.zip(&self.beta2).map(|(a, &v)| (g, ParamKind::Beta2, a, v)));
        rows.extend(self.cohorts().map(i64::from).zip(&self.gamma).map(|(c, &v)| (g, ParamKind::Gamma, c, v)));
        rows
    }

    pub fn from_param_set(gender: Gender, set: &ParamSet, rate_floor: f64) -> Result<Self> {
        let lc = LcParams::from_param_set(gender, set, rate_floor)?;
        let (ages2, beta2) = age_vector(&set.beta2, "beta2")?;
        if ages2 != lc.ages {
            return Err(Error::data("beta2 covers different ages than beta0"));
        }
        let p = RhParams {
            gender,
            ages: lc.ages,
            years: lc.years,
            beta0: lc.beta0,
            beta1: lc.beta1,
            kappa: lc.kappa,
            beta2,
            gamma: set.gamma.iter().map(|p| p.1).collect(),
            rate_floor,
        };
        let first = set.gamma.first().map(|g| g.0);
        if first != Some(i64::from(*p.cohorts().start())) || p.gamma.len() != p.cohorts().count() {
            return Err(Error::data(format!(
                "gamma must cover cohorts {:?}",
                p.cohorts()
            )));
        }
        Ok(p)
    }

    /// Embeds Lee-Carter parameters with `beta2 = 1/|A|` and `gamma = 0`.
    pub fn from_lc(lc: &LcParams) -> Self {
        let n_ages = lc.beta0.len();
        let n_cohorts = n_ages + lc.kappa.len() - 1;
        RhParams {
            gender: lc.gender,
            ages: lc.ages.clone(),
            years: lc.years.clone(),
            beta0: lc.beta0.clone(),
            beta1: lc.beta1.clone(),
            kappa: lc.kappa.clone(),
            beta2: vec![1.0 / n_ages as f64; n_ages],
            gamma: vec![0.0; n_cohorts],
            rate_floor: lc.rate_floor,
        }
    }
}

impl RateModel for RhParams {
    fn gender(&self) -> Gender {
        self.gender
    }

    fn rate(&self, age: u32, year: i32) -> Result<f64> {
        Ok(clamp_rate(self.log_rate(age, year)?, self.rate_floor))
    }
}

pub fn predict_rh(params: &RhParams, x: &Feature) -> Result<f64> {
    if x.gender != params.gender {
        return Err(Error::domain(format!(
            "parameters are for {}, not {}",
            params.gender, x.gender
        )));
    }
    params.rate(x.age, x.year)
}

/// Fits one gender slice. Without `warm_start` a Lee-Carter fit with the same
/// configuration is computed first and used as the starting point.
pub fn fit_rh(
    table: &MortalityTable,
    gender: Gender,
    cfg: &FitConfig,
    warm_start: Option<&LcParams>,
) -> Result<RhFit> {
    cfg.validate()?;
    let data = SliceData::from_table(table, gender)?;
    data.check_shape()?;
    for c in 0..data.n_cohorts() {
        let any_exposure = (0..data.n_ages).any(|a| {
            let t = c as isize + a as isize - (data.n_ages as isize - 1);
            (0..data.n_years as isize).contains(&t)
                && data.exposure[a * data.n_years + t as usize] > 0.0
        });
        if !any_exposure {
            return Err(Error::domain(format!(
                "cohort {} has no cell with positive exposure",
                data.cohort_min() + c as i32
            )));
        }
    }

    let lc = match warm_start {
        Some(p) => {
            if p.gender != gender || p.ages != data.ages || p.years != data.years {
                return Err(Error::domain(
                    "warm-start parameters do not match the table's gender and ranges",
                ));
            }
            p.clone()
        }
        None => fit_lc(table, gender, cfg)?.params,
    };
    let start = RhParams::from_lc(&lc).coefs();
    let fit = fit_slice(&data, start, cfg);
    Ok(RhFit {
        params: RhParams::from_coefs(&data, gender, fit.coefs, cfg.rate_floor),
        initial_deviance: fit.report.deviance_trace[0],
        report: fit.report,
    })
}

/// Fits every gender of the table; `warm_starts` may hold one LC fit per gender.
pub fn fit_rh_all(
    table: &MortalityTable,
    cfg: &FitConfig,
    warm_starts: &[LcParams],
) -> Result<Vec<RhFit>> {
    table
        .space()
        .genders()
        .par_iter()
        .map(|&g| fit_rh(table, g, cfg, warm_starts.iter().find(|p| p.gender == g)))
        .collect()
}
