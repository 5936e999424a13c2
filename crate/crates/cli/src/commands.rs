use mortboost::backtest::{backtest as run_backtest, write_delta_csv, ModelTag};
use mortboost::cod::{estimate_theta_tree, pearson_residuals, write_residual_csv, write_theta_csv, ThetaSurface};
use mortboost::domain::{read_rates_csv, write_rates_csv};
use mortboost::ingest::{
    clip_exposures, clip_to_space, parse_cod_csv, parse_hmd_1x1, write_cod_csv, write_hmd_1x1,
    CauseRegistry, HmdKind,
};
use mortboost::lc::{fit_lc_all, LcParams};
use mortboost::model::{fitted_surface, read_params_csv, write_params_csv, FitConfig, RateModel};
use mortboost::rh::{fit_rh_all, RhParams};
use mortboost::synth::{simulate as run_simulation, SimConfig};
use mortboost::tree::{PoissonTree, SplitKind, TreeConfig};
use mortboost::{aggregate_rates, AgeBucketing, FeatureSpace, FitReport, Gender, MortalityTable};
use serde_json::{json, Value};

use crate::manifest::Manifest;
use crate::{
    BacktestArgs, CheckArgs, CliError, CodArgs, FitArgs, ModelArg, SimulateArgs, TagArg, ThetaInit,
    ThetaVariant, TreeArgs, EXIT_DATA, EXIT_NOT_CONVERGED,
};

fn report_json(gender: Gender, r: &FitReport) -> Value {
    json!({
        "gender": gender.as_str(),
        "converged": r.converged,
        "iterations": r.iterations,
        "deviance": r.deviance,
        "warnings": r.warnings,
    })
}

fn load_table(
    m: &mut Manifest,
    deaths: &std::path::Path,
    exposures: &std::path::Path,
    space: &FeatureSpace,
    no_pool: bool,
) -> Result<MortalityTable, CliError> {
    let d = parse_hmd_1x1(&m.read_input(deaths)?, HmdKind::Deaths)?;
    let e = parse_hmd_1x1(&m.read_input(exposures)?, HmdKind::Exposures)?;
    let (table, report) = clip_to_space(&d, &e, space, !no_pool)?;
    m.result("death_rounding_delta", report.rounding_delta);
    for w in report.warnings {
        m.warn(w);
    }
    Ok(table)
}

pub fn fit(a: &FitArgs) -> Result<u8, CliError> {
    let mut m = Manifest::new(match a.model {
        ModelArg::Lc => "fit lc",
        ModelArg::Rh => "fit rh",
    });
    let mut cfg = match a.model {
        ModelArg::Lc => FitConfig::lee_carter(),
        ModelArg::Rh => FitConfig::renshaw_haberman(),
    };
    if let Some(n) = a.max_iter {
        cfg.max_iterations = n;
    }
    if let Some(t) = a.tol {
        cfg.deviance_tol = t;
    }
    if let Some(f) = a.rate_floor {
        cfg.rate_floor = f;
    }
    cfg.validate()?;
    if a.warm_start.is_some() && a.model == ModelArg::Lc {
        return Err(CliError::usage("--warm-start applies to rh fits only"));
    }
    let genders = a.genders.clone().unwrap_or_else(|| Gender::ALL.to_vec());
    let space = FeatureSpace::new(&genders, a.ages.clone(), a.years.clone())?;
    m.config("ages", format!("{}:{}", a.ages.start(), a.ages.end()));
    m.config("years", format!("{}:{}", a.years.start(), a.years.end()));
    m.config("genders", genders.iter().map(|g| g.as_str()).collect::<Vec<_>>());
    m.config("max_iterations", cfg.max_iterations);
    m.config("deviance_tol", cfg.deviance_tol);
    m.config("rate_floor", cfg.rate_floor);
    m.config("pool_top_age", !a.no_pool);

    let table = load_table(&mut m, &a.deaths, &a.exposures, &space, a.no_pool)?;
    m.result("cells", space.len());
    m.result("total_deaths", table.total_deaths());

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let models: Vec<Box<dyn RateModel>> = match a.model {
        ModelArg::Lc => fit_lc_all(&table, &cfg)?
            .into_iter()
            .map(|f| {
                rows.extend(f.params.to_rows());
                reports.push((f.params.gender, f.report));
                Box::new(f.params) as Box<dyn RateModel>
            })
            .collect(),
        ModelArg::Rh => {
            let warm: Vec<LcParams> = match &a.warm_start {
                None => Vec::new(),
                Some(p) => {
                    m.config("warm_start", p.display().to_string());
                    read_params_csv(&m.read_input(p)?)?
                        .iter()
                        .map(|(g, set)| LcParams::from_param_set(*g, set, cfg.rate_floor))
                        .collect::<Result<_, _>>()?
                }
            };
            fit_rh_all(&table, &cfg, &warm)?
                .into_iter()
                .map(|f| {
                    rows.extend(f.params.to_rows());
                    reports.push((f.params.gender, f.report));
                    Box::new(f.params) as Box<dyn RateModel>
                })
                .collect()
        }
    };
    let refs: Vec<&dyn RateModel> = models.iter().map(|b| b.as_ref()).collect();
    let q = fitted_surface(&space, &refs)?;
    m.output("params.csv", write_params_csv(&rows)?);
    m.output("qfit.csv", write_rates_csv(&q)?);
    let converged = reports.iter().all(|(_, r)| r.converged);
    m.result("converged", converged);
    m.result("fits", reports.iter().map(|(g, r)| report_json(*g, r)).collect::<Vec<_>>());
    for (g, r) in &reports {
        for w in &r.warnings {
            m.warn(format!("{g}: {w}"));
        }
        println!(
            "{g}: deviance {} after {} iterations{}",
            r.deviance,
            r.iterations,
            if r.converged { "" } else { " (not converged)" }
        );
    }
    m.write(&a.out)?;
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn tree_config(t: &TreeArgs, m: &mut Manifest) -> Result<TreeConfig, CliError> {
    let cfg = TreeConfig {
        cp: t.cp,
        min_bucket: t.min_bucket,
        max_depth: t.max_depth,
    };
    cfg.validate()?;
    m.config("cp", cfg.cp);
    m.config("min_bucket", cfg.min_bucket);
    m.config("max_depth", cfg.max_depth);
    Ok(cfg)
}

fn gains_csv(tree: &PoissonTree) -> String {
    let mut out = String::from("rank,feature,rule,gain\n");
    for (i, (gain, rule)) in tree.split_gains_sorted().into_iter().enumerate() {
        let desc = match &rule.kind {
            SplitKind::Threshold(th) => format!("<={th}"),
            SplitKind::Subset { left, .. } => {
                let l: Vec<String> = left.iter().map(|v| v.to_string()).collect();
                format!("in {}", l.join(" "))
            }
        };
        out.push_str(&format!("{},{},{},{}\n", i + 1, rule.feature, desc, gain));
    }
    out
}

pub fn backtest(a: &BacktestArgs) -> Result<u8, CliError> {
    let mut m = Manifest::new("backtest");
    let cfg = tree_config(&a.tree, &mut m)?;
    if !(a.white_band >= 0.0) {
        return Err(CliError::usage("--white-band must be nonnegative"));
    }
    let tag = match a.model {
        TagArg::Lc => ModelTag::Lc,
        TagArg::Rh => ModelTag::Rh,
        TagArg::External => ModelTag::External,
    };
    m.config("model", tag.to_string());
    m.config("white_band", a.white_band);
    m.config("pool_top_age", !a.no_pool);
    m.config("years_to_plot", a.years_to_plot.clone());
    let q = read_rates_csv(&m.read_input(&a.qfit)?)?;
    let space = q.space().clone();
    let table = load_table(&mut m, &a.deaths, &a.exposures, &space, a.no_pool)?;
    let res = run_backtest(&q, &table, &cfg, tag)?;

    m.output("delta.csv", write_delta_csv(&res)?);
    m.output("qtree.csv", write_rates_csv(&res.q_tree)?);
    m.output("tree.txt", res.tree.to_text());
    m.output("gains.csv", gains_csv(&res.tree));
    #[cfg(feature = "svg")]
    for &g in space.genders() {
        use mortboost::svg;
        m.output(
            &format!("delta_{g}.svg"),
            svg::delta_heatmap(&space, &res.delta, g, a.white_band)?,
        );
        if !a.years_to_plot.is_empty() {
            m.output(
                &format!("rates_{g}.svg"),
                svg::rate_lines(&q, &res.q_tree, g, &a.years_to_plot)?,
            );
        }
    }
    m.result("working_points", res.n_points);
    m.result(
        "dropped_cells",
        res.dropped
            .iter()
            .map(|x| format!("{},{},{}", x.gender, x.age, x.year))
            .collect::<Vec<_>>(),
    );
    m.result("splits", res.tree.n_splits());
    m.result("leaves", res.tree.n_leaves());
    m.result("root_deviance", res.tree.root().deviance);
    m.result("leaf_deviance", res.tree.total_leaf_deviance());
    println!(
        "{} working points, {} splits, deviance {} -> {}",
        res.n_points,
        res.tree.n_splits(),
        res.tree.root().deviance,
        res.tree.total_leaf_deviance()
    );
    m.write(&a.out)?;
    Ok(0)
}

pub fn cod(a: &CodArgs) -> Result<u8, CliError> {
    let mut m = Manifest::new("cod");
    let cfg = tree_config(&a.tree, &mut m)?;
    let registry = match (&a.causes, &a.cause_labels) {
        (Some(k), _) => CauseRegistry::numbered(*k)?,
        (None, Some(labels)) => CauseRegistry::new(labels.clone())?,
        (None, None) => CauseRegistry::default(),
    };
    m.config("causes", registry.labels().to_vec());
    let q = read_rates_csv(&m.read_input(&a.qfit)?)?;
    let buckets = AgeBucketing::parse(&a.buckets, q.space().ages())?;
    m.config("buckets", buckets.spec());
    let cod = parse_cod_csv(&m.read_input(&a.cod)?, &registry, &buckets)?;

    let years = cod.years();
    if !q.space().years().contains(years.start()) || !q.space().years().contains(years.end()) {
        return Err(CliError::data(format!(
            "cause-of-death years {}..={} are not covered by the fitted rates",
            years.start(),
            years.end()
        )));
    }
    let space = FeatureSpace::new(cod.genders(), q.space().ages(), years)?;
    let q = q.restrict(&space)?;
    let grid = parse_hmd_1x1(&m.read_input(&a.exposures)?, HmdKind::Exposures)?;
    let (exposure, warnings) = clip_exposures(&grid, &space, !a.no_pool)?;
    for w in warnings {
        m.warn(w);
    }
    let weights = MortalityTable::new(space.clone(), exposure, vec![0; space.len()])?;
    let condensed = aggregate_rates(&q, &weights, &buckets)?;

    let theta0 = match a.theta_init {
        ThetaInit::Uniform => ThetaSurface::uniform(cod.feature_space(), registry.len())?,
        ThetaInit::Empirical => ThetaSurface::empirical(&cod)?,
    };
    m.config(
        "theta_init",
        json!({
            "mode": match a.theta_init { ThetaInit::Uniform => "uniform", ThetaInit::Empirical => "empirical" },
            "values": theta0.values()[..registry.len()].to_vec(),
        }),
    );
    let est = estimate_theta_tree(&cod, &condensed, &theta0, &cfg)?;
    let theta = match a.residuals_from {
        ThetaVariant::Raw => &est.raw,
        ThetaVariant::Normalized => &est.normalized,
    };
    m.config(
        "residuals_from",
        match a.residuals_from {
            ThetaVariant::Raw => "raw",
            ThetaVariant::Normalized => "normalized",
        },
    );
    let residuals = pearson_residuals(&cod, None, theta)?;
    if let Some(w) = a.smooth_window {
        m.config("smooth_window", w);
    }
    m.output("theta.csv", write_theta_csv(&est, a.smooth_window)?);
    m.output("residuals.csv", write_residual_csv(&residuals)?);
    m.output("tree.txt", est.tree.to_text());
    m.output("gains.csv", gains_csv(&est.tree));
    #[cfg(feature = "svg")]
    for &g in cod.genders() {
        use mortboost::svg;
        let bucket_labels: Vec<String> = (0..buckets.len()).map(|b| buckets.label(b)).collect();
        m.output(
            &format!("theta_{g}.svg"),
            svg::theta_panels(&est.raw, g, registry.labels(), &bucket_labels)?,
        );
        m.output(&format!("residuals_{g}.svg"), svg::residual_scatter(&residuals, g)?);
    }
    m.result("working_points", cod.counts().len() - est.dropped.len());
    m.result("missing_counts", cod.missing_count());
    m.result(
        "partial_all_cause_features",
        residuals.partial.iter().filter(|&&p| p).count(),
    );
    m.result("unseen_level_routings", est.unseen.len());
    m.result("splits", est.tree.n_splits());
    m.result("root_deviance", est.tree.root().deviance);
    m.result("leaf_deviance", est.tree.total_leaf_deviance());
    println!(
        "{} cause cells ({} missing), {} splits",
        cod.counts().len(),
        cod.missing_count(),
        est.tree.n_splits()
    );
    m.write(&a.out)?;
    Ok(0)
}

pub fn simulate(a: &SimulateArgs) -> Result<u8, CliError> {
    let mut m = Manifest::new("simulate");
    let cfg = SimConfig::parse(&m.read_input(&a.spec)?)?;
    m.config("seed", cfg.seed);
    let sim = run_simulation(&cfg)?;
    m.output("deaths.txt", write_hmd_1x1(&sim.table, HmdKind::Deaths, "Synthetic"));
    m.output("exposures.txt", write_hmd_1x1(&sim.table, HmdKind::Exposures, "Synthetic"));
    m.output("qtrue.csv", write_rates_csv(&sim.q_true)?);
    m.result("total_deaths", sim.table.total_deaths());
    if let Some((cod, theta, _)) = &sim.cod {
        m.output("cod.csv", write_cod_csv(cod)?);
        let mut text = String::from("gender,age_group,year,cause,theta\n");
        let k = theta.n_causes();
        for (i, x) in theta.space().iter().enumerate() {
            for c in 0..k {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    x.gender,
                    x.age,
                    x.year,
                    c + 1,
                    theta.values()[i * k + c]
                ));
            }
        }
        m.output("theta_true.csv", text);
        m.result("cause_missing_counts", cod.missing_count());
        m.config("causes", cfg.causes);
        m.config("cod_buckets", cfg.cod_buckets.clone());
    }
    println!("{} deaths simulated", sim.table.total_deaths());
    m.write(&a.out)?;
    Ok(0)
}

pub fn check(a: &CheckArgs) -> Result<u8, CliError> {
    let mut m = Manifest::new("check");
    m.config("tol", a.tol);
    let sets = read_params_csv(&m.read_input(&a.params)?)?;
    let mut ok = true;
    let mut results = Vec::new();
    for (g, set) in &sets {
        let scale = |v: &[(i64, f64)]| v.iter().fold(1.0f64, |m, (_, x)| m.max(x.abs()));
        let residuals: Vec<(&str, f64, f64)> = if set.gamma.is_empty() {
            let p = LcParams::from_param_set(*g, set, 0.0)?;
            let (b1, k) = p.constraint_residuals();
            vec![
                ("beta1_sum_minus_1", b1, scale(&set.beta1)),
                ("kappa_sum", k, scale(&set.kappa)),
            ]
        } else {
            let p = RhParams::from_param_set(*g, set, 0.0)?;
            let (b1, b2, k, c) = p.constraint_residuals();
            vec![
                ("beta1_sum_minus_1", b1, scale(&set.beta1)),
                ("beta2_sum_minus_1", b2, scale(&set.beta2)),
                ("kappa_sum", k, scale(&set.kappa)),
                ("gamma_grid_sum", c, scale(&set.gamma)),
            ]
        };
        for (name, r, sc) in residuals {
            // parameters far from unit size cannot be summed to better than their own rounding
            let pass = r.abs() <= a.tol * sc;
            ok &= pass;
            println!("{g} {name} {r:.3e} {}", if pass { "ok" } else { "FAIL" });
            results.push(json!({
                "gender": g.as_str(),
                "constraint": name,
                "residual": r,
                "tolerance": a.tol * sc,
                "ok": pass,
            }));
        }
    }
    m.result("constraints", results);
    m.result("ok", ok);
    if let Some(out) = &a.out {
        m.write(out)?;
    }
    Ok(if ok { 0 } else { EXIT_DATA })
}
