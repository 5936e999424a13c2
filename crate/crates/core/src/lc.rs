//! Lee-Carter model `q(g, a, t) = exp(beta0_a + beta1_a kappa_t)` fitted per
//! gender by Poisson maximum likelihood, with `sum_a beta1_a = 1` and
//! `sum_t kappa_t = 0`.

use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::domain::{Feature, Gender, MortalityTable};
use crate::error::{Error, Result};
use crate::model::{
    clamp_rate, exact_sum, fit_slice, initial_coefs, Coefs, FitConfig, FitReport, ParamKind, ParamSet,
    RateModel, SliceData,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LcParams {
    pub gender: Gender,
    pub ages: RangeInclusive<u32>,
    pub years: RangeInclusive<i32>,
    /// Log-rate level per age.
    pub beta0: Vec<f64>,
    /// Age sensitivity to the period index.
    pub beta1: Vec<f64>,
    /// Period index per year.
    pub kappa: Vec<f64>,
    pub rate_floor: f64,
}

#[derive(Debug, Clone)]
pub struct LcFit {
    pub params: LcParams,
    pub report: FitReport,
}

impl LcParams {
    pub(crate) fn from_coefs(data: &SliceData, gender: Gender, coefs: Coefs, rate_floor: f64) -> Self {
        LcParams {
            gender,
            ages: data.ages.clone(),
            years: data.years.clone(),
            beta0: coefs.beta0,
            beta1: coefs.beta1,
            kappa: coefs.kappa,
            rate_floor,
        }
    }

    #[cfg(test)]
    pub(crate) fn coefs(&self) -> Coefs {
        Coefs {
            beta0: self.beta0.clone(),
            beta1: self.beta1.clone(),
            kappa: self.kappa.clone(),
            beta2: Vec::new(),
            gamma: Vec::new(),
        }
    }

    fn position(&self, age: u32, year: i32) -> Result<(usize, usize)> {
        if !self.ages.contains(&age) || !self.years.contains(&year) {
            return Err(Error::domain(format!(
                "({age}, {year}) outside the fitted ranges ages {:?}, years {:?}",
                self.ages, self.years
            )));
        }
        Ok((
            (age - self.ages.start()) as usize,
            (year - self.years.start()) as usize,
        ))
    }

    /// Unclamped `beta0_a + beta1_a kappa_t`.
    pub fn log_rate(&self, age: u32, year: i32) -> Result<f64> {
        let (a, t) = self.position(age, year)?;
        Ok(self.beta0[a] + self.beta1[a] * self.kappa[t])
    }

    /// `(sum beta1 - 1, sum kappa)`.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        (
            exact_sum(self.beta1.iter().copied()) - 1.0,
            exact_sum(self.kappa.iter().copied()),
        )
    }

    pub fn to_rows(&self) -> Vec<(Gender, ParamKind, i64, f64)> {
        let ages = self.ages.clone().map(i64::from);
        let years = self.years.clone().map(i64::from);
        let mut rows = Vec::new();
        rows.extend(ages.clone().zip(&self.beta0).map(|(a, &v)| (self.gender, ParamKind::Beta0, a, v)));
        rows.extend(ages.zip(&self.beta1).map(|(a, &v)| (self.gender, ParamKind::Beta1, a, v)));
        rows.extend(years.zip(&self.kappa).map(|(t, &v)| (self.gender, ParamKind::Kappa, t, v)));
        rows
    }

    pub fn from_param_set(gender: Gender, set: &ParamSet, rate_floor: f64) -> Result<Self> {
        let (ages, beta0) = age_vector(&set.beta0, "beta0")?;
        let (ages1, beta1) = age_vector(&set.beta1, "beta1")?;
        if ages != ages1 {
            return Err(Error::data("beta0 and beta1 cover different ages"));
        }
        if set.kappa.is_empty() {
            return Err(Error::data("no kappa values"));
        }
        let years = set.kappa[0].0 as i32..=set.kappa[set.kappa.len() - 1].0 as i32;
        Ok(LcParams {
            gender,
            ages,
            years,
            beta0,
            beta1,
            kappa: set.kappa.iter().map(|p| p.1).collect(),
            rate_floor,
        })
    }
}

pub(crate) fn age_vector(v: &[(i64, f64)], name: &str) -> Result<(RangeInclusive<u32>, Vec<f64>)> {
    if v.is_empty() {
        return Err(Error::data(format!("no {name} values")));
    }
    let lo = u32::try_from(v[0].0).map_err(|_| Error::data(format!("negative age in {name}")))?;
    let hi = lo + v.len() as u32 - 1;
    Ok((lo..=hi, v.iter().map(|p| p.1).collect()))
}

impl RateModel for LcParams {
    fn gender(&self) -> Gender {
        self.gender
    }

    fn rate(&self, age: u32, year: i32) -> Result<f64> {
        Ok(clamp_rate(self.log_rate(age, year)?, self.rate_floor))
    }
}

/// Fitted rate `exp(beta0_a + beta1_a kappa_t)` clamped to `[rate_floor, 1]`.
pub fn predict_lc(params: &LcParams, x: &Feature) -> Result<f64> {
    if x.gender != params.gender {
        return Err(Error::domain(format!(
            "parameters are for {}, not {}",
            params.gender, x.gender
        )));
    }
    params.rate(x.age, x.year)
}

/// Fits one gender slice of `table`.
pub fn fit_lc(table: &MortalityTable, gender: Gender, cfg: &FitConfig) -> Result<LcFit> {
    cfg.validate()?;
    let data = SliceData::from_table(table, gender)?;
    data.check_shape()?;
    let start = initial_coefs(&data, cfg.rate_floor);
    let fit = fit_slice(&data, start, cfg);
    Ok(LcFit {
        params: LcParams::from_coefs(&data, gender, fit.coefs, cfg.rate_floor),
        report: fit.report,
    })
}

/// Fits every gender of the table, in the table's gender order.
pub fn fit_lc_all(table: &MortalityTable, cfg: &FitConfig) -> Result<Vec<LcFit>> {
    table
        .space()
        .genders()
        .par_iter()
        .map(|&g| fit_lc(table, g, cfg))
        .collect()
}
