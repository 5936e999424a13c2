use crate::domain::{Feature, FeatureSpace, MortalityTable};

/// Integer deaths on a grid whose exposures are chosen so that `D = E q`
/// holds exactly for the given rate function.
pub(crate) fn exact_table(
    space: &FeatureSpace,
    rate: impl Fn(&Feature) -> f64,
    deaths: impl Fn(&Feature) -> u64,
) -> MortalityTable {
    let (e, d): (Vec<f64>, Vec<u64>) = space
        .iter()
        .map(|x| {
            let d = deaths(&x);
            (d as f64 / rate(&x), d)
        })
        .unzip();
    MortalityTable::new(space.clone(), e, d).unwrap()
}
