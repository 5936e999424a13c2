//! One-step tree boosting of a fitted rate surface.
//!
//! The initial surface supplies volumes `d_x = q(x) E_x`; a Poisson tree on
//! `(D_x, x, d_x)` then yields factors `mu(x)` and improved rates
//! `q_tree(x) = min(1, mu(x) q(x))`.

use std::fmt;

use crate::domain::{Feature, MortalityTable, RateSurface};
use crate::error::{Error, Result};
use crate::tree::{grow_tree, PoissonTree, TreeConfig, WorkingPoint, MORTALITY_FEATURES};

/// Which model produced the initial surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTag {
    Lc,
    Rh,
    External,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::Lc => "lc",
            ModelTag::Rh => "rh",
            ModelTag::External => "external",
        })
    }
}

#[derive(Debug, Clone)]
pub struct WorkingData {
    pub points: Vec<WorkingPoint>,
    /// Grid index of every point.
    pub cells: Vec<usize>,
    /// Cells with `d = 0` and `D = 0`.
    pub dropped: Vec<Feature>,
}

/// Builds the working data `(D_x, x, d_x)` with `d_x = q(x) E_x`.
pub fn make_working_data(q_init: &RateSurface, table: &MortalityTable) -> Result<WorkingData> {
    if q_init.space() != table.space() {
        return Err(Error::domain(
            "initial rates and mortality table live on different grids",
        ));
    }
    let mut data = WorkingData {
        points: Vec::with_capacity(table.space().len()),
        cells: Vec::with_capacity(table.space().len()),
        dropped: Vec::new(),
    };
    let space = table.space();
    for (i, x) in space.iter().enumerate() {
        let volume = q_init.rates()[i] * table.exposures()[i];
        let deaths = table.deaths()[i];
        if volume == 0.0 {
            if deaths > 0 {
                return Err(Error::domain(format!(
                    "({}, {}, {}) has {deaths} deaths but zero expected deaths",
                    x.gender, x.age, x.year
                )));
            }
            data.dropped.push(x);
            continue;
        }
        data.points.push(WorkingPoint {
            gender: x.gender,
            age: x.age,
            year: x.year,
            cause: None,
            volume,
            response: Some(deaths),
        });
        data.cells.push(i);
    }
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub q_tree: RateSurface,
    /// Tree factor per grid cell.
    pub mu_hat: Vec<f64>,
    /// `mu_hat - 1` per grid cell.
    pub delta: Vec<f64>,
    pub tree: PoissonTree,
    pub tag: ModelTag,
    pub dropped: Vec<Feature>,
    pub n_points: usize,
}

/// Grows one tree over gender, age, year and cohort and applies it to every
/// cell of the grid, dropped cells included.
pub fn backtest(
    q_init: &RateSurface,
    table: &MortalityTable,
    cfg: &TreeConfig,
    tag: ModelTag,
) -> Result<BacktestResult> {
    let data = make_working_data(q_init, table)?;
    let tree = grow_tree(&data.points, &MORTALITY_FEATURES, cfg)?;
    let space = q_init.space();
    let mu_hat: Vec<f64> = space
        .iter()
        .map(|x| {
            tree.predict_mu(&WorkingPoint {
                gender: x.gender,
                age: x.age,
                year: x.year,
                cause: None,
                volume: 1.0,
                response: None,
            })
        })
        .collect();
    let q = q_init
        .rates()
        .iter()
        .zip(&mu_hat)
        .map(|(q, mu)| (mu * q).min(1.0))
        .collect();
    let delta = mu_hat.iter().map(|mu| mu - 1.0).collect();
    Ok(BacktestResult {
        q_tree: RateSurface::new(space.clone(), q)?,
        mu_hat,
        delta,
        tree,
        tag,
        dropped: data.dropped,
        n_points: data.points.len(),
    })
}

/// `gender,age,year,cohort,delta` for every cell.
pub fn write_delta_csv(result: &BacktestResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gender", "age", "year", "cohort", "delta"])?;
    for (x, delta) in result.q_tree.space().iter().zip(&result.delta) {
        w.write_record([
            x.gender.as_str(),
            &x.age.to_string(),
            &x.year.to_string(),
            &(x.year - x.age as i32).to_string(),
            &delta.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
