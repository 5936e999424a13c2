use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mortboost::tree::{PoissonTree, WorkingPoint};
use mortboost::Gender;
use serde_json::Value;

const SCENARIO: &str = "\
seed = 11
ages = 0:30
years = 1990:2009
exposure = 1e6
shock_years = 1999:1999
shock_factor = 1.5
cohort_years = 1960:1965
cohort_factor = 1.3
causes = 4
cod_buckets = 0;1-14;15-30
missing_cause = 4
missing_years = 2000:2001
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mortboost"));
    c.env_remove("MORTBOOST_THREADS");
    c
}

fn run<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok<S: AsRef<std::ffi::OsStr> + std::fmt::Debug>(args: &[S]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn simulate(root: &Path, scenario: &str) -> PathBuf {
    let spec = root.join("scenario.cfg");
    std::fs::write(&spec, scenario).unwrap();
    let sim = root.join("sim");
    ok(&["simulate", "--spec", p(&spec), "--out", p(&sim)]);
    sim
}

fn fit_lc(root: &Path, sim: &Path, name: &str) -> PathBuf {
    let out = root.join(name);
    ok(&[
        "fit", "lc",
        "--deaths", p(&sim.join("deaths.txt")),
        "--exposures", p(&sim.join("exposures.txt")),
        "--ages", "0:30", "--years", "1990:2009",
        "--out", p(&out),
    ]);
    out
}

fn backtest(root: &Path, sim: &Path, fit: &Path, name: &str) -> PathBuf {
    let out = root.join(name);
    ok(&[
        "backtest",
        "--qfit", p(&fit.join("qfit.csv")),
        "--deaths", p(&sim.join("deaths.txt")),
        "--exposures", p(&sim.join("exposures.txt")),
        "--years-to-plot", "1995,2005",
        "--out", p(&out),
    ]);
    out
}

fn cod(root: &Path, sim: &Path, fit: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = root.join(name);
    let mut args: Vec<String> = vec![
        "cod".into(),
        "--cod".into(), p(&sim.join("cod.csv")).into(),
        "--qfit".into(), p(&fit.join("qfit.csv")).into(),
        "--exposures".into(), p(&sim.join("exposures.txt")).into(),
        "--buckets".into(), "0;1-14;15-30".into(),
        "--causes".into(), "4".into(),
        "--out".into(), p(&out).into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    ok(&args);
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn closed_loop_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = simulate(root, SCENARIO);
    for f in ["deaths.txt", "exposures.txt", "qtrue.csv", "cod.csv", "theta_true.csv", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let lc = fit_lc(root, &sim, "lc");
    let m = manifest(&lc);
    assert_eq!(m["results"]["converged"], true);
    // simulated files ingest cleanly
    assert!(m["warnings"].as_array().unwrap().iter().all(|w| !w.as_str().unwrap().contains("missing")));
    let (header, rows) = csv_rows(&lc.join("qfit.csv"));
    assert_eq!(header, ["gender", "age", "year", "q"]);
    assert_eq!(rows.len(), 2 * 31 * 20);

    let check = ok(&["check", "--params", p(&lc.join("params.csv"))]);
    assert!(String::from_utf8_lossy(&check.stdout).contains("kappa_sum"));

    let bt = backtest(root, &sim, &lc, "bt");
    let (header, rows) = csv_rows(&bt.join("delta.csv"));
    assert_eq!(header, ["gender", "age", "year", "cohort", "delta"]);
    assert_eq!(rows.len(), 2 * 31 * 20);
    for f in ["tree.txt", "qtree.csv", "gains.csv", "delta_female.svg", "delta_male.svg", "rates_male.svg"] {
        assert!(bt.join(f).exists(), "{f}");
    }
    let svg = std::fs::read_to_string(bt.join("delta_female.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    // the cohort effect is invisible to Lee-Carter but not to the tree
    let tree_text = std::fs::read_to_string(bt.join("tree.txt")).unwrap();
    assert!(tree_text.contains("cohort<=1959.5") || tree_text.contains("cohort<=1965.5"), "{tree_text}");

    // tree.txt re-parses to a tree with the same predictions
    let tree = PoissonTree::from_text(&tree_text).unwrap();
    for row in &rows {
        let gender = if row[0] == "female" { Gender::Female } else { Gender::Male };
        let point = WorkingPoint {
            gender,
            age: row[1].parse().unwrap(),
            year: row[2].parse().unwrap(),
            cause: None,
            volume: 1.0,
            response: None,
        };
        let delta: f64 = row[4].parse().unwrap();
        assert_eq!(tree.predict_mu(&point) - 1.0, delta);
    }

    // against the true rates the boost has nothing to correct
    let truth = root.join("truth");
    ok(&[
        "backtest",
        "--qfit", p(&sim.join("qtrue.csv")),
        "--deaths", p(&sim.join("deaths.txt")),
        "--exposures", p(&sim.join("exposures.txt")),
        "--out", p(&truth),
    ]);
    let (_, rows) = csv_rows(&truth.join("delta.csv"));
    for r in &rows {
        assert!(r[4].parse::<f64>().unwrap().abs() < 0.05, "{r:?}");
    }

    let c = cod(root, &sim, &lc, "cod", &[]);
    let (header, theta) = csv_rows(&c.join("theta.csv"));
    assert_eq!(header, ["gender", "age_group", "year", "cause", "theta_raw", "theta_norm"]);
    assert_eq!(theta.len(), 2 * 3 * 20 * 4);
    let (header, residuals) = csv_rows(&c.join("residuals.csv"));
    assert_eq!(header, ["gender", "age_group", "year", "cause", "delta"]);
    let (_, counts) = csv_rows(&sim.join("cod.csv"));
    let missing: std::collections::BTreeSet<(String, String, String, String)> = counts
        .iter()
        .filter(|r| r.len() < 5 || r[4].is_empty())
        .map(|r| (r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone()))
        .collect();
    assert_eq!(missing.len(), 2 * 3 * 2);
    for r in &residuals {
        let key = (r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone());
        let delta: f64 = r[4].parse().unwrap();
        assert_eq!(delta == 0.0, missing.contains(&key), "{r:?}");
    }
    let m = manifest(&c);
    assert_eq!(m["results"]["missing_counts"], 12);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = simulate(root, SCENARIO);
    let again = root.join("sim2");
    ok(&["simulate", "--spec", p(&root.join("scenario.cfg")), "--out", p(&again)]);
    assert_eq!(files(&sim), files(&again));

    let lc = fit_lc(root, &sim, "lc");
    let runs: Vec<BTreeMap<String, Vec<u8>>> = ["1", "4", "4"]
        .iter()
        .enumerate()
        .map(|(i, threads)| {
            let name = format!("run{i}");
            let out = root.join(&name);
            let status = bin()
                .env("MORTBOOST_THREADS", threads)
                .args([
                    "backtest",
                    "--qfit", p(&lc.join("qfit.csv")),
                    "--deaths", p(&sim.join("deaths.txt")),
                    "--exposures", p(&sim.join("exposures.txt")),
                    "--out", p(&out),
                ])
                .status()
                .unwrap();
            assert!(status.success());
            files(&out)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);

    let a = cod(root, &sim, &lc, "cod_a", &[]);
    let b = cod(root, &sim, &lc, "cod_b", &[]);
    assert_eq!(files(&a), files(&b));
}

#[test]
fn warm_started_rh_does_not_lose_to_lc() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = simulate(root, SCENARIO);
    let lc = fit_lc(root, &sim, "lc");
    let rh = root.join("rh");
    // noisy data leave RH on a long, nearly flat ridge; a capped run may stop
    // unconverged (exit 4) but must still improve on its LC starting point
    let status = run(&[
        "fit", "rh",
        "--deaths", p(&sim.join("deaths.txt")),
        "--exposures", p(&sim.join("exposures.txt")),
        "--ages", "0:30", "--years", "1990:2009",
        "--warm-start", p(&lc.join("params.csv")),
        "--max-iter", "500",
        "--out", p(&rh),
    ])
    .status
    .code();
    assert!(matches!(status, Some(0) | Some(4)), "{status:?}");
    let lc_fits = manifest(&lc)["results"]["fits"].clone();
    let rh_fits = manifest(&rh)["results"]["fits"].clone();
    for (a, b) in lc_fits.as_array().unwrap().iter().zip(rh_fits.as_array().unwrap()) {
        assert_eq!(a["gender"], b["gender"]);
        let (dl, dr) = (a["deviance"].as_f64().unwrap(), b["deviance"].as_f64().unwrap());
        assert!(dr <= dl + 1e-8, "rh {dr} vs lc {dl}");
    }
    let (_, rows) = csv_rows(&rh.join("params.csv"));
    // 31 ages and 20 years give 50 cohorts per gender
    assert_eq!(rows.iter().filter(|r| r[0] == "female" && r[1] == "gamma").count(), 50);
    ok(&["check", "--params", p(&rh.join("params.csv"))]);
}

#[test]
fn uniform_initial_theta_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let scenario = SCENARIO.replace("causes = 4", "causes = 12").replace("missing_cause = 4", "missing_cause = 9");
    let sim = simulate(root, &scenario);
    let lc = fit_lc(root, &sim, "lc");
    let out = root.join("cod");
    ok(&[
        "cod",
        "--cod", p(&sim.join("cod.csv")),
        "--qfit", p(&lc.join("qfit.csv")),
        "--exposures", p(&sim.join("exposures.txt")),
        "--buckets", "0;1-14;15-30",
        "--theta-init", "uniform",
        "--smooth-window", "5",
        "--out", p(&out),
    ]);
    let m = manifest(&out);
    let values = m["config"]["theta_init"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 12);
    assert!(values.iter().all(|v| v.as_f64() == Some(1.0 / 12.0)));
    let (header, _) = csv_rows(&out.join("theta.csv"));
    assert_eq!(header.last().unwrap(), "theta_raw_smoothed");
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = simulate(root, SCENARIO);
    let lc = fit_lc(root, &sim, "lc");
    let cfg = root.join("bt.cfg");
    std::fs::write(&cfg, format!(
        "qfit = {}\ndeaths = {}\nexposures = {}\ncp = 0.5\nmin-bucket = 20\n",
        p(&lc.join("qfit.csv")),
        p(&sim.join("deaths.txt")),
        p(&sim.join("exposures.txt")),
    )).unwrap();
    let out = root.join("bt");
    ok(&["backtest", "--config", p(&cfg), "--cp", "0.01", "--out", p(&out)]);
    let m = manifest(&out);
    assert_eq!(m["config"]["cp"], 0.01);
    assert_eq!(m["config"]["min_bucket"], 20);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = simulate(root, SCENARIO);
    let deaths = sim.join("deaths.txt");
    let exposures = sim.join("exposures.txt");
    let fit = |extra: &[&str], out: &str| {
        let mut args = vec![
            "fit", "lc",
            "--deaths", p(&deaths),
            "--exposures", p(&exposures),
            "--out", out,
        ];
        args.extend_from_slice(extra);
        run(&args).status.code()
    };
    let out = root.join("x");
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(fit(&["--ages", "30:0", "--years", "1990:2009"], p(&out)), Some(2));
    assert_eq!(fit(&["--ages", "0:30", "--years", "1990:2009", "--tol", "-1"], p(&out)), Some(2));
    assert_eq!(fit(&["--ages", "0:30", "--years", "1900:2009"], p(&out)), Some(3));

    let missing = run(&[
        "fit", "lc", "--deaths", p(&root.join("nope.txt")), "--exposures", p(&exposures),
        "--ages", "0:30", "--years", "1990:2009", "--out", p(&out),
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!missing.stderr.is_empty());

    // non-convergence still writes every output
    let capped = root.join("capped");
    assert_eq!(fit(&["--ages", "0:30", "--years", "1990:2009", "--max-iter", "1"], p(&capped)), Some(4));
    assert_eq!(manifest(&capped)["results"]["converged"], false);
    assert!(capped.join("params.csv").exists() && capped.join("qfit.csv").exists());

    // a parameter file that violates the constraints
    let lc = fit_lc(root, &sim, "lc");
    let text = std::fs::read_to_string(lc.join("params.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let i = lines.iter().position(|l| l.starts_with("female,kappa,")).unwrap();
    let mut fields: Vec<String> = lines[i].split(',').map(String::from).collect();
    fields[3] = format!("{}", fields[3].parse::<f64>().unwrap() + 0.1);
    lines[i] = fields.join(",");
    let bad = root.join("bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    assert_eq!(run(&["check", "--params", p(&bad)]).status.code(), Some(3));
}
