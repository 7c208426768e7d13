use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use approx::assert_abs_diff_eq;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn pairsurv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairsurv"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn estimate(fit: &Value, name: &str) -> f64 {
    fit["estimates"].as_array().unwrap().iter().find(|e| e["name"] == name).unwrap()["estimate"].as_f64().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

const SMALL_SIM: &str = "n_households = 30\nhousehold_size = 4\nmax_infections = 40\nseed = 11\n";

#[test]
fn simulate_writes_population_infections_and_pair_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.cfg", SMALL_SIM);
    let o = pairsurv(&dir.path().join("out"), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("seed: 11"));
    assert!(stdout.contains("infections: 40"));
    let out = dir.path().join("out");
    assert_eq!(csv_rows(&out.join("population.csv")).len(), 120);
    assert_eq!(csv_rows(&out.join("infections.csv")).len(), 40);
    for design in ["complete-cohort", "ct-delayed-entry", "ct-no-delayed-entry", "ignore-external"] {
        for wiw in ["observed", "unobserved"] {
            assert!(out.join(format!("pairs_{design}_{wiw}.csv")).exists());
        }
    }
    let ignore = csv_rows(&out.join("pairs_ignore-external_unobserved.csv"));
    assert!(!ignore.is_empty());
    assert!(ignore.iter().all(|r| r["zeta"] == "0"));
}

#[test]
fn simulate_is_reproducible_and_seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.cfg", SMALL_SIM);
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert_eq!(code(&pairsurv(&a, &["simulate", "--config", cfg])), 0);
    assert_eq!(code(&pairsurv(&b, &["--threads", "3", "simulate", "--config", cfg])), 0);
    assert_eq!(code(&pairsurv(&c, &["--seed", "12", "simulate", "--config", cfg])), 0);
    for name in ["population.csv", "infections.csv", "pairs_complete-cohort_unobserved.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(std::fs::read(a.join("infections.csv")).unwrap(), std::fs::read(c.join("infections.csv")).unwrap());
}

#[test]
fn full_scale_epidemic_has_two_hundred_non_index_infections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.cfg",
        "n_households = 300\nhousehold_size = 6\nmax_infections = 500\nseed = 3\ndesigns = complete-cohort\nwiw = observed\n",
    );
    let out = dir.path().join("out");
    assert_eq!(code(&pairsurv(&out, &["simulate", "--config", cfg.to_str().unwrap()])), 0);
    let household: BTreeMap<String, String> = csv_rows(&out.join("population.csv"))
        .into_iter()
        .map(|r| (r["person_id"].clone(), r["household_id"].clone()))
        .collect();
    let infections = csv_rows(&out.join("infections.csv"));
    let hit: std::collections::BTreeSet<&String> = infections.iter().map(|r| &household[&r["subject_id"]]).collect();
    assert_eq!(infections.len(), 500);
    assert!(infections.len() - hit.len() >= 200, "{} non-index", infections.len() - hit.len());
}

#[test]
fn config_errors_exit_2_with_line_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = write(dir.path(), "bad.cfg", "n_households = 10\nhousehold_size = six\n");
    let o = pairsurv(&out, &["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("bad.cfg:2"), "{err}");
    assert!(err.contains("household_size"), "{err}");

    let unknown = write(dir.path(), "unknown.cfg", "n_households = 10\n\nhouseholds = 3\n");
    let o = pairsurv(&out, &["simulate", "--config", unknown.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stderr).unwrap().contains("unknown.cfg:3"));
}

#[test]
fn fit_matches_closed_form_exponential_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairsurv(dir.path(), &["fit", "--pairs", fixture("closed_form_pairs.csv").to_str().unwrap(), "--wiw", "observed"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = read_json(&dir.path().join("fit.json"));
    assert_eq!(fit["converged"], true);
    // internal: one event in 1.5 + 4 time units; external: one event in 2 + 3.5 + 10
    assert_abs_diff_eq!(estimate(&fit, "ln_lambda0"), (1.0f64 / 5.5).ln(), epsilon = 1e-6);
    assert_abs_diff_eq!(estimate(&fit, "ln_mu0"), (1.0f64 / 15.5).ln(), epsilon = 1e-6);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("LR 95% CI") && table.contains("AIC"));
}

#[test]
fn household_fit_agrees_with_events_over_person_time() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairsurv(
        dir.path(),
        &["fit", "--households", fixture("households.csv").to_str().unwrap(), "--wiw", "observed", "--save-pairs"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("pairs.csv"));
    let (mut d, mut t) = ([0.0f64; 2], [0.0f64; 2]);
    let mut events = std::collections::BTreeSet::new();
    for r in &rows {
        let z: usize = r["zeta"].parse().unwrap();
        t[z] += r["seg_stop"].parse::<f64>().unwrap() - r["seg_start"].parse::<f64>().unwrap();
        if r["outcome"] == "event_known" && events.insert((r["source_id"].clone(), r["subject_id"].clone())) {
            d[z] += 1.0;
        }
    }
    assert!(d[0] > 0.0 && d[1] > 0.0);
    let fit = read_json(&dir.path().join("fit.json"));
    assert_abs_diff_eq!(estimate(&fit, "ln_lambda0"), (d[0] / t[0]).ln(), epsilon = 1e-6);
    assert_abs_diff_eq!(estimate(&fit, "ln_mu0"), (d[1] / t[1]).ln(), epsilon = 1e-6);
}

#[test]
fn household_fit_with_time_dependent_prophylaxis() {
    let dir = tempfile::tempdir().unwrap();
    let nh = write(dir.path(), "nh.cfg", "incubation_days = 1\ninfectious_days = 7\nfollowup_days = 14\n");
    let o = pairsurv(
        dir.path(),
        &[
            "fit",
            "--households",
            fixture("households.csv").to_str().unwrap(),
            "--natural-history",
            nh.to_str().unwrap(),
            "--wiw",
            "unobserved",
            "--formula",
            "adult_sus",
            "--no-lr",
        ],
    );
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = read_json(&dir.path().join("fit.json"));
    assert!(fit["estimates"].as_array().unwrap().iter().any(|e| e["name"] == "adult_sus"));

    let bad = write(dir.path(), "bad_nh.cfg", "infectious_days = 0\n");
    let o = pairsurv(
        dir.path(),
        &["fit", "--households", fixture("households.csv").to_str().unwrap(), "--natural-history", bad.to_str().unwrap(), "--wiw", "unobserved"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn families_flag_controls_shape_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairsurv(
        dir.path(),
        &[
            "fit",
            "--pairs",
            fixture("closed_form_pairs.csv").to_str().unwrap(),
            "--wiw",
            "observed",
            "--families",
            "internal=exponential",
            "external=loglogistic",
            "--no-lr",
        ],
    );
    assert!(matches!(code(&o), 0 | 3));
    let fit = read_json(&dir.path().join("fit.json"));
    let names: Vec<&str> = fit["estimates"].as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"ln_gamma_ext"));
    assert!(!names.contains(&"ln_gamma_int"));
}

#[test]
fn non_convergence_exits_3_and_still_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairsurv(
        dir.path(),
        &[
            "fit",
            "--pairs",
            fixture("closed_form_pairs.csv").to_str().unwrap(),
            "--wiw",
            "observed",
            "--families",
            "external=weibull",
            "--max-iter",
            "1",
            "--no-lr",
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&dir.path().join("fit.json"))["converged"], false);
}

#[test]
fn schema_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.csv", "source_id,subject_id,zeta\n0,1,1\n");
    let o = pairsurv(dir.path(), &["fit", "--pairs", bad.to_str().unwrap(), "--wiw", "observed"]);
    assert_eq!(code(&o), 2);
    let pairs = fixture("closed_form_pairs.csv");
    let o = pairsurv(dir.path(), &["fit", "--pairs", pairs.to_str().unwrap(), "--wiw", "unobserved"]);
    assert_eq!(code(&o), 2);
    let o = pairsurv(dir.path(), &["fit", "--pairs", pairs.to_str().unwrap(), "--wiw", "observed", "--formula", "age_sus"]);
    assert_eq!(code(&o), 2);
    let o = pairsurv(dir.path(), &["fit", "--pairs", pairs.to_str().unwrap(), "--wiw", "observed", "--families", "internal=gamma"]);
    assert_eq!(code(&o), 2);
    let o = pairsurv(dir.path(), &["fit", "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

fn sar_table(path: &Path) -> Vec<(String, String, f64)> {
    csv_rows(path)
        .into_iter()
        .map(|r| (r["source"].clone(), r["subject"].clone(), r["estimate"].parse().unwrap()))
        .collect()
}

#[test]
fn predict_sar_from_published_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairsurv(
        dir.path(),
        &[
            "predict-sar",
            "--fit",
            fixture("reference_fit.json").to_str().unwrap(),
            "--profiles",
            fixture("reference_profiles.csv").to_str().unwrap(),
            "--iota",
            "6",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = sar_table(&dir.path().join("sar.csv"));
    assert_eq!(rows.len(), 8);
    let expected = [4.4, 1.5, 2.7, 0.9, 15.9, 5.8, 10.2, 3.6];
    for ((_, _, est), want) in rows.iter().zip(expected) {
        assert!((100.0 * est - want).abs() < 0.1, "{est} vs {want}");
    }
    // prophylaxis never raises the attack rate
    for pair in rows.chunks(2) {
        assert!(pair[0].2 >= pair[1].2);
    }
}

#[test]
fn predict_sar_zero_rate_and_unknown_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let mut fit = read_json(&fixture("reference_fit.json"));
    fit["theta_hat"]["ln_lambda0"] = Value::from(-1000.0);
    let fit_path = write(dir.path(), "zero.json", &fit.to_string());
    let o = pairsurv(
        dir.path(),
        &["predict-sar", "--fit", fit_path.to_str().unwrap(), "--profiles", fixture("reference_profiles.csv").to_str().unwrap(), "--iota", "6"],
    );
    assert_eq!(code(&o), 0);
    assert!(sar_table(&dir.path().join("sar.csv")).iter().all(|r| r.2 == 0.0));

    let profiles = write(dir.path(), "p.csv", "role,label,adult,proph,male\nsource,a,1,0,1\nsubject,b,0,0,0\n");
    let o = pairsurv(
        dir.path(),
        &["predict-sar", "--fit", fixture("reference_fit.json").to_str().unwrap(), "--profiles", profiles.to_str().unwrap(), "--iota", "6"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8(o.stderr).unwrap().contains("male"));
}

#[test]
fn replicate_study_summary_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "study.cfg", "n_households = 30\nhousehold_size = 4\nmax_infections = 45\nn_replicates = 3\nseed = 2\n");
    let o = pairsurv(dir.path(), &["replicate-study", "--config", cfg.to_str().unwrap(), "--no-lr"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = csv_rows(&dir.path().join("summary.csv"));
    let cells: std::collections::BTreeSet<(String, String)> =
        summary.iter().map(|r| (r["design"].clone(), r["wiw"].clone())).collect();
    assert_eq!(cells.len(), 8);
    assert!(!summary.iter().any(|r| r["design"] == "ignore-external" && r["parameter"] == "ln_mu0"));
    assert!(summary.iter().any(|r| r["design"] == "complete-cohort" && r["parameter"] == "ln_mu0"));
    for metric in ["mean_bias", "mse", "wald_coverage", "lr_coverage", "n_nonconverged"] {
        assert!(summary.iter().any(|r| r["metric"] == metric), "{metric}");
    }
    assert_eq!(csv_rows(&dir.path().join("replicates.csv")).iter().filter(|r| r["parameter"] == "x_inf").count(), 24);
}

#[test]
fn select_drops_uninformative_terms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.cfg", "n_households = 60\nmax_infections = 90\nseed = 4\nbeta_sus = -1\n");
    let sim = dir.path().join("sim");
    assert_eq!(code(&pairsurv(&sim, &["simulate", "--config", cfg.to_str().unwrap()])), 0);
    let pairs = sim.join("pairs_complete-cohort_observed.csv");
    let o = pairsurv(
        dir.path(),
        &["select", "--pairs", pairs.to_str().unwrap(), "--wiw", "observed", "--formula", "x_inf,x_sus", "--protect", "x_sus"],
    );
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    let sel = read_json(&dir.path().join("selection.json"));
    let formula: Vec<&str> = sel["spec"]["formula"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(formula.contains(&"x_sus"));
    assert!(!sel["trace"].as_array().unwrap().is_empty());
}
