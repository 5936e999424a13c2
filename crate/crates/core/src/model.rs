//! Shared machinery for the log-bilinear Poisson mortality models.
//!
//! Both models are fitted one gender at a time on the Poisson log-likelihood
//! with exposure offset. Each iteration solves the age intercepts exactly,
//! then takes one damped Fisher-scoring (Levenberg-Marquardt) step on all
//! remaining parameters, accepted only if the deviance does not rise.
//! Identifiability constraints are re-imposed after every step.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};

use crate::domain::{FeatureSpace, Gender, MortalityTable, RateSurface};
use crate::error::{Error, Result};

/// Stopping and safety parameters for the model fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once an iteration improves the deviance by less than
    /// `deviance_tol * (|deviance| + 0.1)`.
    pub deviance_tol: f64,
    /// Fitted rates never go below this value.
    pub rate_floor: f64,
}

impl FitConfig {
    pub fn lee_carter() -> Self {
        FitConfig {
            max_iterations: 10_000,
            deviance_tol: 1e-10,
            rate_floor: 1e-12,
        }
    }

    pub fn renshaw_haberman() -> Self {
        FitConfig {
            max_iterations: 50_000,
            ..Self::lee_carter()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        if !(self.deviance_tol > 0.0) {
            return Err(Error::config("deviance_tol must be positive"));
        }
        if !(self.rate_floor > 0.0 && self.rate_floor < 1.0) {
            return Err(Error::config("rate_floor must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::lee_carter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub converged: bool,
    /// Number of accepted iterations.
    pub iterations: usize,
    pub deviance: f64,
    /// Deviance after initialization, one entry per accepted iteration, and a
    /// last entry when the closing intercept pass lowers it further.
    pub deviance_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Anything that yields a mortality rate for one gender on an age x year grid.
pub trait RateModel {
    fn gender(&self) -> Gender;
    fn rate(&self, age: u32, year: i32) -> Result<f64>;
}

/// Evaluates per-gender models on every cell of `space`.
pub fn fitted_surface(space: &FeatureSpace, models: &[&dyn RateModel]) -> Result<RateSurface> {
    let rate = space
        .iter()
        .map(|x| {
            let model = models
                .iter()
                .find(|m| m.gender() == x.gender)
                .ok_or_else(|| Error::domain(format!("no fitted model for {}", x.gender)))?;
            model.rate(x.age, x.year)
        })
        .collect::<Result<Vec<_>>>()?;
    RateSurface::new(space.clone(), rate)
}

/// Poisson deviance of fitted means against counts, `D log(D/m) - (D - m)`
/// summed and doubled. Cells with zero mean and zero count contribute 0.
pub fn poisson_deviance_counts(deaths: &[f64], fitted: &[f64]) -> f64 {
    2.0 * deaths
        .iter()
        .zip(fitted)
        .map(|(&d, &m)| unit_deviance(d, m))
        .sum::<f64>()
}

fn unit_deviance(d: f64, m: f64) -> f64 {
    if d > 0.0 {
        if m > 0.0 {
            d * (d / m).ln() - (d - m)
        } else {
            f64::INFINITY
        }
    } else {
        m
    }
}

/// Deviance of a rate function on one gender slice of a table.
pub fn slice_deviance(
    table: &MortalityTable,
    gender: Gender,
    rate: impl Fn(u32, i32) -> f64,
) -> Result<f64> {
    let block = table
        .space()
        .gender_block(gender)
        .ok_or_else(|| Error::domain(format!("table has no {gender} data")))?;
    let space = table.space();
    let (d, m): (Vec<f64>, Vec<f64>) = block
        .map(|i| {
            let x = space.feature(i);
            (
                table.deaths()[i] as f64,
                table.exposures()[i] * rate(x.age, x.year),
            )
        })
        .unzip();
    Ok(poisson_deviance_counts(&d, &m))
}

/// One gender's age x year data, row-major by age.
#[derive(Debug, Clone)]
pub(crate) struct SliceData {
    pub ages: RangeInclusive<u32>,
    pub years: RangeInclusive<i32>,
    pub n_ages: usize,
    pub n_years: usize,
    pub exposure: Vec<f64>,
    pub deaths: Vec<f64>,
}

impl SliceData {
    pub fn from_table(table: &MortalityTable, gender: Gender) -> Result<Self> {
        let space = table.space();
        let block = space
            .gender_block(gender)
            .ok_or_else(|| Error::domain(format!("table has no {gender} data")))?;
        Ok(SliceData {
            ages: space.ages(),
            years: space.years(),
            n_ages: space.n_ages(),
            n_years: space.n_years(),
            exposure: table.exposures()[block.clone()].to_vec(),
            deaths: table.deaths()[block].iter().map(|&d| d as f64).collect(),
        })
    }

    pub fn check_shape(&self) -> Result<()> {
        let ages_with_exposure = (0..self.n_ages)
            .filter(|&a| (0..self.n_years).any(|t| self.exposure[a * self.n_years + t] > 0.0))
            .count();
        let years_with_exposure = (0..self.n_years)
            .filter(|&t| (0..self.n_ages).any(|a| self.exposure[a * self.n_years + t] > 0.0))
            .count();
        if ages_with_exposure < 2 || years_with_exposure < 2 {
            return Err(Error::domain(format!(
                "need at least 2 ages and 2 years with positive exposure, found {ages_with_exposure} and {years_with_exposure}"
            )));
        }
        Ok(())
    }

    pub fn n_cohorts(&self) -> usize {
        self.n_ages + self.n_years - 1
    }

    /// Cohort position of cell `(a, t)`: 0 is the oldest cohort on the grid.
    pub fn cohort_pos(&self, a: usize, t: usize) -> usize {
        t + self.n_ages - 1 - a
    }

    pub fn cohort_min(&self) -> i32 {
        *self.years.start() - *self.ages.end() as i32
    }
}

/// Coefficients of `log q = b0_a + b1_a k_t + b2_a g_c`. `gamma` and `beta2`
/// are empty for the Lee-Carter model.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Coefs {
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub kappa: Vec<f64>,
    pub beta2: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Coefs {
    fn has_cohort(&self) -> bool {
        !self.gamma.is_empty()
    }

    pub fn log_rate(&self, data: &SliceData, a: usize, t: usize) -> f64 {
        let mut eta = self.beta0[a] + self.beta1[a] * self.kappa[t];
        if self.has_cohort() {
            eta += self.beta2[a] * self.gamma[data.cohort_pos(a, t)];
        }
        eta
    }

    /// Applies the identifiability constraints without changing any
    /// predicted rate: unit sums for `beta1`/`beta2`, zero sum for `kappa`
    /// and a zero grid-weighted sum for `gamma`.
    pub fn normalize(&mut self, data: &SliceData) {
        let s1 = exact_sum(self.beta1.iter().copied());
        if s1.abs() > f64::EPSILON {
            self.beta1.iter_mut().for_each(|b| *b /= s1);
            self.kappa.iter_mut().for_each(|k| *k *= s1);
        }
        // second pass removes what rounding left behind in the first
        for _ in 0..2 {
            let kbar = exact_sum(self.kappa.iter().copied()) / self.kappa.len() as f64;
            self.kappa.iter_mut().for_each(|k| *k -= kbar);
            for (b0, b1) in self.beta0.iter_mut().zip(&self.beta1) {
                *b0 += b1 * kbar;
            }
        }

        if self.has_cohort() {
            let s2 = exact_sum(self.beta2.iter().copied());
            if s2.abs() > f64::EPSILON {
                self.beta2.iter_mut().for_each(|b| *b /= s2);
                self.gamma.iter_mut().for_each(|g| *g *= s2);
            }
            for _ in 0..2 {
                let weighted = exact_sum(
                    self.gamma
                        .iter()
                        .enumerate()
                        .map(|(c, g)| cohort_multiplicity(data, c) as f64 * g),
                );
                let m = weighted / (data.n_ages * data.n_years) as f64;
                self.gamma.iter_mut().for_each(|g| *g -= m);
                for (b0, b2) in self.beta0.iter_mut().zip(&self.beta2) {
                    *b0 += b2 * m;
                }
            }
        }
    }
}

/// Compensated (Neumaier) summation.
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Number of grid cells on cohort diagonal `c`.
pub(crate) fn cohort_multiplicity(data: &SliceData, c: usize) -> usize {
    // a ranges over cells with t = c + a - (n_ages - 1) inside the grid
    let lo = (data.n_ages - 1).saturating_sub(c);
    let hi = (data.n_ages - 1 + data.n_years - 1 - c).min(data.n_ages - 1);
    hi + 1 - lo
}

/// Working state: linear predictor and fitted deaths per cell.
struct State {
    eta: Vec<f64>,
    fitted: Vec<f64>,
}

impl State {
    fn new(data: &SliceData, coefs: &Coefs) -> Self {
        let mut eta = Vec::with_capacity(data.exposure.len());
        for a in 0..data.n_ages {
            for t in 0..data.n_years {
                eta.push(coefs.log_rate(data, a, t));
            }
        }
        let fitted = eta
            .iter()
            .zip(&data.exposure)
            .map(|(&e, &x)| if x > 0.0 { x * e.exp() } else { 0.0 })
            .collect();
        State { eta, fitted }
    }

    fn deviance(&self, data: &SliceData) -> f64 {
        poisson_deviance_counts(&data.deaths, &self.fitted)
    }
}

/// Parameter layout of the joint step: `beta0, beta1, kappa[, beta2, gamma]`.
struct Layout {
    n_ages: usize,
    n_years: usize,
    n_cohorts: usize,
}

impl Layout {
    fn beta1(&self, a: usize) -> usize {
        self.n_ages + a
    }

    fn kappa(&self, t: usize) -> usize {
        2 * self.n_ages + t
    }

    fn beta2(&self, a: usize) -> usize {
        2 * self.n_ages + self.n_years + a
    }

    fn gamma(&self, c: usize) -> usize {
        3 * self.n_ages + self.n_years + c
    }

    fn len(&self) -> usize {
        if self.n_cohorts == 0 {
            2 * self.n_ages + self.n_years
        } else {
            3 * self.n_ages + self.n_years + self.n_cohorts
        }
    }

    fn apply(&self, coefs: &Coefs, h: &DVector<f64>) -> Coefs {
        let mut out = coefs.clone();
        for a in 0..self.n_ages {
            out.beta0[a] += h[a];
            out.beta1[a] += h[self.beta1(a)];
        }
        for t in 0..self.n_years {
            out.kappa[t] += h[self.kappa(t)];
        }
        if self.n_cohorts > 0 {
            for a in 0..self.n_ages {
                out.beta2[a] += h[self.beta2(a)];
            }
            for c in 0..self.n_cohorts {
                out.gamma[c] += h[self.gamma(c)];
            }
        }
        out
    }
}

/// Score vector and observed information (negative Hessian) of the Poisson
/// log-likelihood in all coefficients at once. Intercepts of rows without deaths are held fixed.
fn score_and_information(
    data: &SliceData,
    coefs: &Coefs,
    state: &State,
    layout: &Layout,
    fixed_rows: &[bool],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = layout.len();
    let mut score = DVector::zeros(n);
    let mut info = DMatrix::zeros(n, n);
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
    for a in 0..data.n_ages {
        for t in 0..data.n_years {
            let i = a * data.n_years + t;
            if data.exposure[i] <= 0.0 {
                continue;
            }
            entries.clear();
            if !fixed_rows[a] {
                entries.push((a, 1.0));
            }
            entries.push((layout.beta1(a), coefs.kappa[t]));
            entries.push((layout.kappa(t), coefs.beta1[a]));
            if layout.n_cohorts > 0 {
                let c = data.cohort_pos(a, t);
                entries.push((layout.beta2(a), coefs.gamma[c]));
                entries.push((layout.gamma(c), coefs.beta2[a]));
            }
            let m = state.fitted[i];
            let r = data.deaths[i] - m;
            for &(p, wp) in &entries {
                score[p] += wp * r;
                for &(q, wq) in &entries {
                    info[(p, q)] += m * wp * wq;
                }
            }
        }
    }
    (score, info)
}

/// Solves `(F + lambda (diag F + eps)) h = score`.
fn damped_step(score: &DVector<f64>, info: &DMatrix<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = score.len();
    let mean_diag = (0..n).map(|i| info[(i, i)]).sum::<f64>() / n as f64;
    let eps = 1e-12 * mean_diag.max(f64::MIN_POSITIVE);
    let mut m = info.clone();
    for i in 0..n {
        m[(i, i)] += lambda * (info[(i, i)] + eps) + eps;
    }
    m.cholesky().map(|c| c.solve(score))
}

/// Exact update of an intercept `beta0_a`: matches the row's fitted deaths to
/// the observed ones.
fn intercept_step(data: &SliceData, state: &mut State, a: usize, rate_floor: f64) -> f64 {
    let row = a * data.n_years..(a + 1) * data.n_years;
    let observed: f64 = data.deaths[row.clone()].iter().sum();
    let fitted: f64 = state.fitted[row.clone()].iter().sum();
    let exposure: f64 = data.exposure[row.clone()].iter().sum();
    if fitted <= 0.0 {
        return 0.0;
    }
    let h = if observed > 0.0 {
        (observed / fitted).ln()
    } else {
        // no deaths: push the row down to the rate floor, never up
        (rate_floor * exposure / fitted).ln().min(0.0)
    };
    if h != 0.0 && h.is_finite() {
        for i in row {
            state.eta[i] += h;
            state.fitted[i] = data.exposure[i] * state.eta[i].exp();
        }
        h
    } else {
        0.0
    }
}

pub(crate) struct SliceFit {
    pub coefs: Coefs,
    pub report: FitReport,
}

/// Damped Fisher-scoring fit starting from `coefs`.
pub(crate) fn fit_slice(data: &SliceData, mut coefs: Coefs, cfg: &FitConfig) -> SliceFit {
    let n_ages = data.n_ages;
    let n_years = data.n_years;
    let cohort = coefs.has_cohort();
    let mut warnings = Vec::new();

    for a in 0..n_ages {
        let row = a * n_years..(a + 1) * n_years;
        if data.deaths[row.clone()].iter().all(|&d| d == 0.0)
            && data.exposure[row].iter().any(|&e| e > 0.0)
        {
            warnings.push(format!(
                "age {} has no deaths; fitted at the rate floor",
                data.ages.start() + a as u32
            ));
        }
    }
    if cohort {
        for c in 0..data.n_cohorts() {
            if cohort_multiplicity(data, c) == 1 {
                warnings.push(format!(
                    "cohort {} is observed in a single cell and weakly identified",
                    data.cohort_min() + c as i32
                ));
            }
        }
    }

    let layout = Layout {
        n_ages,
        n_years,
        n_cohorts: if cohort { data.n_cohorts() } else { 0 },
    };
    let fixed_rows: Vec<bool> = (0..n_ages)
        .map(|a| data.deaths[a * n_years..(a + 1) * n_years].iter().all(|&d| d == 0.0))
        .collect();

    coefs.normalize(data);
    let mut state = State::new(data, &coefs);
    let mut deviance = state.deviance(data);
    let mut trace = vec![deviance];
    let mut converged = false;
    let mut iterations = 0;
    let mut lambda = 1e-3;

    'outer: while iterations < cfg.max_iterations {
        // exact intercepts first: cheap, monotone, and keeps zero-death rows
        // at the rate floor
        let mut trial = coefs.clone();
        let mut trial_state = State::new(data, &trial);
        for a in 0..n_ages {
            trial.beta0[a] += intercept_step(data, &mut trial_state, a, cfg.rate_floor);
        }
        let (score, info) = score_and_information(data, &trial, &trial_state, &layout, &fixed_rows);
        let base = trial_state.deviance(data);
        let mut next = None;
        while lambda < 1e16 {
            if let Some(h) = damped_step(&score, &info, lambda) {
                let mut candidate = layout.apply(&trial, &h);
                candidate.normalize(data);
                let candidate_state = State::new(data, &candidate);
                let dev = candidate_state.deviance(data);
                if dev <= base {
                    lambda = (lambda * 0.1).max(1e-12);
                    next = Some((candidate, candidate_state, dev));
                    break;
                }
            }
            lambda *= 10.0;
        }
        let (candidate, candidate_state, current) = match next {
            Some(n) => n,
            None if base < deviance => {
                let mut t = trial;
                t.normalize(data);
                let st = State::new(data, &t);
                let dev = st.deviance(data);
                (t, st, dev)
            }
            None => {
                // no descent direction left above rounding noise
                converged = true;
                break 'outer;
            }
        };
        if !(current <= deviance) {
            converged = true;
            break;
        }
        coefs = candidate;
        state = candidate_state;
        iterations += 1;
        trace.push(current);
        let improvement = deviance - current;
        deviance = current;
        if improvement <= cfg.deviance_tol * (deviance.abs() + 0.1) {
            converged = true;
            break;
        }
    }

    // closing intercept pass: the joint step leaves a small age-margin score
    // behind, and this removes it without raising the deviance
    {
        let mut polished = coefs.clone();
        let mut st = State::new(data, &polished);
        for a in 0..n_ages {
            polished.beta0[a] += intercept_step(data, &mut st, a, cfg.rate_floor);
        }
        polished.normalize(data);
        let st = State::new(data, &polished);
        let dev = st.deviance(data);
        // exact coordinate minimisation cannot raise the deviance; a rise
        // here is summation rounding
        if dev <= deviance + 1e-12 * (deviance.abs() + 1.0) {
            if dev < deviance {
                trace.push(dev);
            }
            coefs = polished;
            state = st;
            deviance = dev;
        }
    }

    // a sensitivity has no curvature when its index is numerically zero
    let weak = |index: &[f64], a: usize, cell_index: &dyn Fn(usize) -> usize| {
        let (mut curvature, mut scale) = (0.0, 0.0);
        for t in 0..n_years {
            let m = state.fitted[a * n_years + t];
            let w = index[cell_index(t)];
            curvature += w * w * m;
            scale += m;
        }
        scale > 0.0 && !(curvature > 1e-14 * scale)
    };
    let unidentified_beta1 = (0..n_ages).any(|a| weak(&coefs.kappa, a, &|t| t));
    let unidentified_beta2 = cohort
        && (0..n_ages).any(|a| weak(&coefs.gamma, a, &|t| data.cohort_pos(a, t)));

    if unidentified_beta1 {
        warnings.push(
            "period index is numerically zero; age sensitivities beta1 are not identified and were left at their current values"
                .to_string(),
        );
    }
    if unidentified_beta2 {
        warnings.push(
            "cohort index is numerically zero; cohort sensitivities beta2 are not identified".to_string(),
        );
    }
    if !converged {
        warnings.push(format!(
            "did not converge within {} iterations",
            cfg.max_iterations
        ));
    }

    SliceFit {
        coefs,
        report: FitReport {
            converged,
            iterations,
            deviance,
            deviance_trace: trace,
            warnings,
        },
    }
}

/// Lee-Carter starting values: `beta0_a = log((sum_t D + 0.5) / sum_t E)`,
/// `beta1 = 1/|A|`, `kappa = 0`.
pub(crate) fn initial_coefs(data: &SliceData, rate_floor: f64) -> Coefs {
    let beta0 = (0..data.n_ages)
        .map(|a| {
            let row = a * data.n_years..(a + 1) * data.n_years;
            let d: f64 = data.deaths[row.clone()].iter().sum();
            let e: f64 = data.exposure[row].iter().sum();
            if e > 0.0 {
                ((d + 0.5) / e).ln()
            } else {
                rate_floor.ln()
            }
        })
        .collect();
    Coefs {
        beta0,
        beta1: vec![1.0 / data.n_ages as f64; data.n_ages],
        kappa: vec![0.0; data.n_years],
        beta2: Vec::new(),
        gamma: Vec::new(),
    }
}

pub(crate) fn clamp_rate(log_rate: f64, rate_floor: f64) -> f64 {
    log_rate.exp().clamp(rate_floor, 1.0)
}

/// One row of a parameter CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamKind {
    Beta0,
    Beta1,
    Kappa,
    Beta2,
    Gamma,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Beta0 => "beta0",
            ParamKind::Beta1 => "beta1",
            ParamKind::Kappa => "kappa",
            ParamKind::Beta2 => "beta2",
            ParamKind::Gamma => "gamma",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "beta0" => ParamKind::Beta0,
            "beta1" => ParamKind::Beta1,
            "kappa" => ParamKind::Kappa,
            "beta2" => ParamKind::Beta2,
            "gamma" => ParamKind::Gamma,
            _ => return None,
        })
    }
}

/// Parameter vectors of one gender, each keyed by age, year or cohort.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub beta0: Vec<(i64, f64)>,
    pub beta1: Vec<(i64, f64)>,
    pub kappa: Vec<(i64, f64)>,
    pub beta2: Vec<(i64, f64)>,
    pub gamma: Vec<(i64, f64)>,
}

impl ParamSet {
    fn slot(&mut self, kind: ParamKind) -> &mut Vec<(i64, f64)> {
        match kind {
            ParamKind::Beta0 => &mut self.beta0,
            ParamKind::Beta1 => &mut self.beta1,
            ParamKind::Kappa => &mut self.kappa,
            ParamKind::Beta2 => &mut self.beta2,
            ParamKind::Gamma => &mut self.gamma,
        }
    }
}

/// Writes `gender,kind,index,value` rows.
pub fn write_params_csv(rows: &[(Gender, ParamKind, i64, f64)]) -> Result<String> {
    let mut out = String::from("gender,kind,index,value\n");
    for (g, kind, index, value) in rows {
        let _ = writeln!(out, "{g},{},{index},{value}", kind.as_str());
    }
    Ok(out)
}

/// Reads a parameter CSV back into per-gender parameter sets (sorted by index).
pub fn read_params_csv(text: &str) -> Result<Vec<(Gender, ParamSet)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["gender", "kind", "index", "value"] {
        return Err(Error::parse(1, format!("unexpected parameter header {header:?}")));
    }
    let mut sets: Vec<(Gender, ParamSet)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let gender: Gender = rec[0].parse().map_err(|e: Error| Error::parse(line, e))?;
        let kind = ParamKind::parse(&rec[1])
            .ok_or_else(|| Error::parse(line, format!("unknown parameter kind {:?}", &rec[1])))?;
        let index: i64 = rec[2]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad index {:?}", &rec[2])))?;
        let value: f64 = rec[3]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad value {:?}", &rec[3])))?;
        let pos = match sets.iter().position(|(g, _)| *g == gender) {
            Some(p) => p,
            None => {
                sets.push((gender, ParamSet::default()));
                sets.len() - 1
            }
        };
        sets[pos].1.slot(kind).push((index, value));
    }
    for (_, set) in &mut sets {
        for kind in [
            ParamKind::Beta0,
            ParamKind::Beta1,
            ParamKind::Kappa,
            ParamKind::Beta2,
            ParamKind::Gamma,
        ] {
            let v = set.slot(kind);
            v.sort_by_key(|p| p.0);
            if v.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
                return Err(Error::data(format!(
                    "{} indices are not contiguous",
                    kind.as_str()
                )));
            }
        }
    }
    sets.sort_by_key(|(g, _)| *g);
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviance_conventions() {
        assert_eq!(poisson_deviance_counts(&[0.0], &[0.0]), 0.0);
        assert_eq!(poisson_deviance_counts(&[0.0], &[1.5]), 3.0);
        assert_eq!(poisson_deviance_counts(&[3.0], &[3.0]), 0.0);
        assert!(poisson_deviance_counts(&[1.0], &[0.0]).is_infinite());
    }

    #[test]
    fn cohort_multiplicities_cover_grid() {
        let data = SliceData {
            ages: 0..=2,
            years: 0..=3,
            n_ages: 3,
            n_years: 4,
            exposure: vec![1.0; 12],
            deaths: vec![0.0; 12],
        };
        let counts: Vec<usize> = (0..data.n_cohorts()).map(|c| cohort_multiplicity(&data, c)).collect();
        assert_eq!(counts, vec![1, 2, 3, 3, 2, 1]);
        // brute force
        let mut brute = vec![0; data.n_cohorts()];
        for a in 0..3 {
            for t in 0..4 {
                brute[data.cohort_pos(a, t)] += 1;
            }
        }
        assert_eq!(counts, brute);
    }

    #[test]
    fn fit_config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { max_iterations: 0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { deviance_tol: 0.0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { rate_floor: 1.0, ..FitConfig::default() }.validate().is_err());
    }

    #[test]
    fn params_csv_round_trip() {
        let rows = vec![
            (Gender::Male, ParamKind::Beta0, 0, -4.25),
            (Gender::Male, ParamKind::Beta0, 1, 0.1 + 0.2),
            (Gender::Male, ParamKind::Kappa, 2001, 1e-300),
            (Gender::Female, ParamKind::Gamma, -5, -0.75),
        ];
        let text = write_params_csv(&rows).unwrap();
        let sets = read_params_csv(&text).unwrap();
        assert_eq!(sets[0].0, Gender::Female);
        assert_eq!(sets[0].1.gamma, vec![(-5, -0.75)]);
        assert_eq!(sets[1].1.beta0, vec![(0, -4.25), (1, 0.1 + 0.2)]);
        assert_eq!(sets[1].1.kappa, vec![(2001, 1e-300)]);
    }

    #[test]
    fn params_csv_rejects_gaps() {
        let text = "gender,kind,index,value\nmale,beta0,0,1\nmale,beta0,2,1\n";
        assert!(read_params_csv(text).is_err());
        assert!(read_params_csv("gender,kind,index,value\nmale,alpha,0,1\n").is_err());
    }
}
