use mortboost::cod::{estimate_theta_tree, ThetaSurface};
use mortboost::ingest::{clip_to_space, parse_hmd_1x1, write_hmd_1x1, CauseDeathTable, CauseRegistry, HmdKind};
use mortboost::lc::fit_lc;
use mortboost::tree::{grow_tree, poisson_deviance, FeatureId, PoissonTree, TreeConfig, WorkingPoint};
use mortboost::{
    aggregate_rates, AgeBucketing, CondensedRates, FeatureSpace, FitConfig, Gender, MortalityTable,
    RateSurface,
};
use proptest::prelude::*;

const FEATURES: [FeatureId; 3] = [FeatureId::Age, FeatureId::Year, FeatureId::Cause];

fn point() -> impl Strategy<Value = WorkingPoint> {
    (0u32..6, 0i32..6, 0u16..4, 0.1f64..10.0, 0u64..20, 0u32..10).prop_map(
        |(age, year, cause, volume, d, missing)| WorkingPoint {
            gender: Gender::Female,
            age,
            year: 2000 + year,
            cause: Some(cause),
            volume,
            response: if missing == 0 { None } else { Some(d) },
        },
    )
}

fn points() -> impl Strategy<Value = Vec<WorkingPoint>> {
    prop::collection::vec(point(), 2..40)
        .prop_filter("needs an observed response", |p| p.iter().any(|x| x.response.is_some()))
}

fn cfg(cp: f64, min_bucket: usize) -> TreeConfig {
    TreeConfig {
        cp,
        min_bucket,
        max_depth: 30,
    }
}

/// Leaf id of every point, found by walking the rules from the root.
fn leaf_of(tree: &PoissonTree, p: &WorkingPoint) -> usize {
    let mut id = 0;
    while let Some(s) = &tree.nodes()[id].split {
        id = if s.rule.goes_left(p) == Some(true) { s.left } else { s.right };
    }
    id
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn leaf_estimate_minimises_deviance(pts in points()) {
        let (d, v) = pts.iter().filter(|p| p.response.is_some())
            .fold((0u64, 0.0), |(d, v), p| (d + p.response.unwrap(), v + p.volume));
        let mu = d as f64 / v;
        let best = poisson_deviance(&pts, mu);
        for i in 1..=1000 {
            let grid = i as f64 * 0.01;
            prop_assert!(best <= poisson_deviance(&pts, grid) + 1e-9);
        }
    }

    #[test]
    fn leaves_are_calibrated(pts in points(), cp in prop::sample::select(vec![0.0, 0.01, 0.1])) {
        let tree = grow_tree(&pts, &FEATURES, &cfg(cp, 1)).unwrap();
        let mut sums = vec![(0u64, 0.0f64); tree.nodes().len()];
        for p in pts.iter().filter(|p| p.response.is_some()) {
            let leaf = leaf_of(&tree, p);
            sums[leaf].0 += p.response.unwrap();
            sums[leaf].1 += p.volume;
        }
        let mut global = 0.0;
        for leaf in tree.leaves() {
            let id = tree.nodes().iter().position(|n| std::ptr::eq(n, leaf)).unwrap();
            let (d, v) = sums[id];
            prop_assert!(v > 0.0);
            prop_assert!(close(leaf.mu * v, d as f64, 1e-9));
        }
        for p in pts.iter().filter(|p| p.response.is_some()) {
            let (d, v) = sums[leaf_of(&tree, p)];
            let mu = tree.predict_mu(p);
            prop_assert!(close(mu, d as f64 / v, 1e-12));
            global += mu * p.volume;
        }
        let total: u64 = pts.iter().filter_map(|p| p.response).sum();
        prop_assert!(close(global, total as f64, 1e-9));
    }

    #[test]
    fn smaller_cp_never_raises_leaf_deviance(pts in points()) {
        let dev: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&cp| grow_tree(&pts, &FEATURES, &cfg(cp, 2)).unwrap().total_leaf_deviance())
            .collect();
        prop_assert!(dev[1] <= dev[0] + 1e-9);
        prop_assert!(dev[2] <= dev[1] + 1e-9);
    }

    #[test]
    fn scaling_volumes_rescales_mu(pts in points(), c in prop::sample::select(vec![0.5, 2.0, 3.0, 1e3])) {
        let scaled: Vec<WorkingPoint> = pts.iter().map(|p| WorkingPoint { volume: p.volume * c, ..*p }).collect();
        let a = grow_tree(&pts, &FEATURES, &cfg(0.01, 1)).unwrap();
        let b = grow_tree(&scaled, &FEATURES, &cfg(0.01, 1)).unwrap();
        prop_assert_eq!(a.nodes().len(), b.nodes().len());
        for (x, y) in a.nodes().iter().zip(b.nodes()) {
            prop_assert_eq!(x.n, y.n);
            prop_assert!(close(x.mu, y.mu * c, 1e-12));
            match (&x.split, &y.split) {
                (Some(s), Some(t)) => {
                    prop_assert_eq!(&s.rule, &t.rule);
                    prop_assert!(close(s.gain, t.gain, 1e-9));
                }
                (None, None) => {}
                _ => prop_assert!(false, "split structure differs"),
            }
        }
    }

    #[test]
    fn aggregation_conserves_expected_deaths(
        q in prop::collection::vec(1e-4f64..0.5, 20),
        e in prop::collection::vec(1.0f64..1e5, 20),
        cuts in prop::collection::btree_set(1u32..10, 0..9),
    ) {
        let space = FeatureSpace::new(&[Gender::Male], 0..=9, 2000..=2001).unwrap();
        let table = MortalityTable::new(space.clone(), e.clone(), vec![0; 20]).unwrap();
        let surface = RateSurface::new(space.clone(), q.clone()).unwrap();
        let mut bounds = Vec::new();
        let mut lo = 0;
        for &c in cuts.iter().chain(std::iter::once(&10)) {
            bounds.push((lo, c - 1));
            lo = c;
        }
        let buckets = AgeBucketing::new(bounds.clone(), 0..=9).unwrap();
        let cr = aggregate_rates(&surface, &table, &buckets).unwrap();
        for (b, &(lo, hi)) in bounds.iter().enumerate() {
            for y in 0..2usize {
                let mut expected = 0.0f64;
                let mut exposure = 0.0f64;
                for a in lo..=hi {
                    let i = a as usize * 2 + y;
                    expected += e[i] * q[i];
                    exposure += e[i];
                }
                let j = b * 2 + y;
                prop_assert_eq!(cr.exposure[j], exposure);
                let ulp = expected.next_up() - expected;
                prop_assert!((cr.rates.rates()[j] * cr.exposure[j] - expected).abs() <= ulp);
            }
        }
    }

    #[test]
    fn pooling_conserves_totals(
        d in prop::collection::vec(0u64..5000, 2 * 12 * 3),
        e in prop::collection::vec(1.0f64..1e5, 2 * 12 * 3),
        top in 2u32..11,
    ) {
        let full = FeatureSpace::both(0..=11, 1990..=1992).unwrap();
        let table = MortalityTable::new(full, e.clone(), d.clone()).unwrap();
        let deaths = parse_hmd_1x1(&write_hmd_1x1(&table, HmdKind::Deaths, "Test"), HmdKind::Deaths).unwrap();
        let exps = parse_hmd_1x1(&write_hmd_1x1(&table, HmdKind::Exposures, "Test"), HmdKind::Exposures).unwrap();
        let space = FeatureSpace::both(0..=top, 1990..=1992).unwrap();
        let (clipped, report) = clip_to_space(&deaths, &exps, &space, true).unwrap();
        prop_assert_eq!(clipped.total_deaths(), d.iter().sum::<u64>());
        prop_assert_eq!(report.rounding_delta, 0.0);
        let total: f64 = e.iter().sum();
        prop_assert!(close(clipped.total_exposure(), total, 1e-12));
    }

    #[test]
    fn hmd_text_round_trips(
        d in prop::collection::vec(0u64..100_000, 2 * 4 * 3),
        e in prop::collection::vec(0.0f64..1e6, 2 * 4 * 3),
    ) {
        let space = FeatureSpace::both(0..=3, 1900..=1902).unwrap();
        let table = MortalityTable::new(space.clone(), e, d).unwrap();
        let text_d = write_hmd_1x1(&table, HmdKind::Deaths, "Test");
        let text_e = write_hmd_1x1(&table, HmdKind::Exposures, "Test");
        let (back, _) = clip_to_space(
            &parse_hmd_1x1(&text_d, HmdKind::Deaths).unwrap(),
            &parse_hmd_1x1(&text_e, HmdKind::Exposures).unwrap(),
            &space,
            false,
        ).unwrap();
        prop_assert_eq!(back, table);
    }

    #[test]
    fn theta_is_equivariant_under_cause_relabelling(
        counts in prop::collection::vec(50u64..5000, 2 * 3 * 4),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let totals: Vec<u64> = (0..4).map(|k| counts.iter().skip(k).step_by(4).sum()).collect();
        let mut distinct = totals.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assume!(distinct.len() == 4);

        let buckets = AgeBucketing::parse("0-39;40-79", 0..=79).unwrap();
        let years = 2000..=2002;
        let space = FeatureSpace::new(&[Gender::Female], 1..=2, years.clone()).unwrap();
        let rates = CondensedRates {
            rates: RateSurface::new(space.clone(), vec![0.01, 0.012, 0.015, 0.05, 0.055, 0.06]).unwrap(),
            exposure: vec![1e5; 6],
            buckets: buckets.clone(),
        };
        let estimate = |c: Vec<Option<u64>>| {
            let cod = CauseDeathTable::new(&[Gender::Female], buckets.clone(), years.clone(),
                CauseRegistry::numbered(4).unwrap(), c).unwrap();
            let theta0 = ThetaSurface::uniform(space.clone(), 4).unwrap();
            estimate_theta_tree(&cod, &rates, &theta0, &cfg(0.0, 1)).unwrap()
        };
        let original: Vec<Option<u64>> = counts.iter().map(|&c| Some(c)).collect();
        let mut relabelled = vec![None; original.len()];
        for (i, c) in original.iter().enumerate() {
            relabelled[i / 4 * 4 + perm[i % 4]] = *c;
        }
        let a = estimate(original);
        let b = estimate(relabelled);
        for i in 0..counts.len() {
            let j = i / 4 * 4 + perm[i % 4];
            prop_assert!((a.normalized.values()[i] - b.normalized.values()[j]).abs() < 1e-9);
        }
        for row in a.normalized.values().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lee_carter_fit_invariants(d in prop::collection::vec(20u64..2000, 5 * 6)) {
        let space = FeatureSpace::new(&[Gender::Female], 40..=44, 1990..=1995).unwrap();
        let exposure: Vec<f64> = (0..30).map(|i| 1e5 * (1.0 + (i % 7) as f64 * 0.1)).collect();
        let table = MortalityTable::new(space, exposure.clone(), d.clone()).unwrap();
        let fit = fit_lc(&table, Gender::Female, &FitConfig::lee_carter()).unwrap();
        let p = &fit.params;
        let (b1, k) = p.constraint_residuals();
        prop_assert!(b1.abs() < 1e-10 && k.abs() < 1e-10);
        prop_assert!(fit.report.deviance_trace.windows(2).all(|w| w[1] <= w[0]));
        for a in 0..5 {
            let (mut obs, mut fitted) = (0.0, 0.0);
            for t in 0..6 {
                let i = a * 6 + t;
                obs += d[i] as f64;
                fitted += exposure[i] * (p.beta0[a] + p.beta1[a] * p.kappa[t]).exp();
            }
            prop_assert!(close(fitted, obs, 1e-9));
        }
    }
}

// inputs on which the closing intercept pass was once skipped or rejected,
// leaving the age margins 1e-9..1e-6 off
#[test]
fn lee_carter_margins_hold_on_regression_inputs() {
    let cases: [[u64; 30]; 2] = [
        [
            757, 556, 1668, 50, 31, 1035, 1392, 20, 642, 1271, 75, 610, 792, 1187, 674, 1784, 871,
            710, 963, 1391, 791, 1745, 365, 762, 881, 501, 907, 1278, 1678, 867,
        ],
        [
            1643, 234, 1266, 71, 1547, 662, 381, 39, 437, 1266, 952, 1035, 1390, 1524, 242, 717,
            1665, 1604, 965, 1979, 1873, 402, 954, 1188, 1795, 1176, 1832, 1578, 278, 614,
        ],
    ];
    let exposure: Vec<f64> = (0..30).map(|i| 1e5 * (1.0 + (i % 7) as f64 * 0.1)).collect();
    for d in cases {
        let space = FeatureSpace::new(&[Gender::Female], 40..=44, 1990..=1995).unwrap();
        let table = MortalityTable::new(space, exposure.clone(), d.to_vec()).unwrap();
        let fit = fit_lc(&table, Gender::Female, &FitConfig::lee_carter()).unwrap();
        let p = &fit.params;
        assert!(fit.report.converged);
        for a in 0..5 {
            let obs: f64 = d[a * 6..(a + 1) * 6].iter().map(|&x| x as f64).sum();
            let fitted: f64 = (0..6)
                .map(|t| exposure[a * 6 + t] * (p.beta0[a] + p.beta1[a] * p.kappa[t]).exp())
                .sum();
            assert!(close(fitted, obs, 1e-12), "age {a}: {fitted} vs {obs}");
        }
    }
}
