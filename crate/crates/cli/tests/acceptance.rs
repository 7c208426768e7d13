//! Acceptance checks, one pass/fail line per criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pairsurv_core::data::{Outcome, PairDataset, PairRow, Segment, EXTERNAL};
use pairsurv_core::estimation::CHI2_1_95;
use pairsurv_core::likelihood::{loglik_total, ModelSpec, NamedValue, ParamSet, LN_LAMBDA0, LN_MU0};
use pairsurv_core::simulate::analysis_dataset;
use pairsurv_core::{
    fit_mle, replicate_study, simulate, FitOptions, HazardFamily, RateShape, SimConfig, StudyConfig, StudyDesign,
    StudyResult, Truth, WiwMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

const FAMILIES: [HazardFamily; 3] = [HazardFamily::Exponential, HazardFamily::Weibull, HazardFamily::LogLogistic];

fn criterion_1() -> Check {
    let mut worst_identity = 0.0f64;
    let mut worst_derivative = 0.0f64;
    let mut n = 0;
    for family in FAMILIES {
        for rate in [0.25, 1.0, 4.0] {
            for shape in [0.5, 1.0, 2.0] {
                let p = RateShape::new(rate, shape).map_err(|e| e.to_string())?;
                for k in 1..100 {
                    let t = 10f64.powf(-6.0 + 9.0 * f64::from(k) / 100.0);
                    let s = family.survival(p, t).map_err(|e| e.to_string())?;
                    let cum = family.cumulative_hazard(p, t).map_err(|e| e.to_string())?;
                    worst_identity = worst_identity.max((s - (-cum).exp()).abs());
                    let step = 1e-5 * t;
                    let up = family.cumulative_hazard(p, t + step).map_err(|e| e.to_string())?;
                    let down = family.cumulative_hazard(p, t - step).map_err(|e| e.to_string())?;
                    let d = (up - down) / (2.0 * step);
                    let h = family.hazard(p, t).map_err(|e| e.to_string())?;
                    worst_derivative = worst_derivative.max((h - d).abs() / h);
                    n += 1;
                }
            }
        }
    }
    let detail = format!("{n} points, max |S - exp(-H)| = {worst_identity:.2e}, max rel hazard error = {worst_derivative:.2e}");
    if worst_identity < 1e-12 && worst_derivative < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn segments(rng: &mut ChaCha8Rng, start: f64, stop: f64) -> Vec<Segment> {
    let x = |rng: &mut ChaCha8Rng| vec![f64::from(u8::from(rng.random_bool(0.5))), rng.random_range(-1.0..1.0)];
    if rng.random_bool(0.4) {
        let mid = start + (stop - start) * rng.random_range(0.2..0.8);
        vec![Segment { start, stop: mid, x: x(rng) }, Segment { start: mid, stop, x: x(rng) }]
    } else {
        vec![Segment { start, stop, x: x(rng) }]
    }
}

fn micro_dataset(rng: &mut ChaCha8Rng) -> (PairDataset, Vec<Vec<usize>>) {
    let mut rows = Vec::new();
    let mut candidates = Vec::new();
    for subject in 1..=rng.random_range(1..=3u32) {
        let t = rng.random_range(0.3..2.0);
        let mut idx = Vec::new();
        for c in 0..rng.random_range(1..=3u32) {
            let source = if c == 0 && rng.random_bool(0.5) { EXTERNAL } else { 10 * subject + c + 1 };
            let start = if source == EXTERNAL { 0.0 } else { rng.random_range(0.0..t * 0.9) };
            idx.push(rows.len());
            let segs = segments(rng, start, t);
            rows.push(PairRow {
                source,
                subject,
                origin: 0.0,
                segments: segs,
                outcome: Outcome::EventCandidate,
                event_time: Some(t),
            });
        }
        candidates.push(idx);
    }
    let segs = segments(rng, 0.0, 2.0);
    rows.push(PairRow { source: EXTERNAL, subject: 99, origin: 0.0, segments: segs, outcome: Outcome::Censored, event_time: None });
    (PairDataset::new(vec!["a".into(), "b".into()], rows).unwrap(), candidates)
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let cases = 60;
    for case in 0..cases {
        let (ds, candidates) = micro_dataset(&mut rng);
        let (fi, fe) = (FAMILIES[case % 3], FAMILIES[(case / 3) % 3]);
        let spec = ModelSpec::new(fi, fe).with_formula(&["a", "b"]);
        let params = ParamSet {
            beta: vec![
                NamedValue { name: "a".into(), value: rng.random_range(-1.0..1.0) },
                NamedValue { name: "b".into(), value: rng.random_range(-1.0..1.0) },
            ],
            ln_lambda0: Some(rng.random_range(-1.0..1.0)),
            ln_gamma_int: fi.has_shape().then(|| rng.random_range(-0.5..0.5)),
            ln_mu0: Some(rng.random_range(-1.0..1.0)),
            ln_gamma_ext: fe.has_shape().then(|| rng.random_range(-0.5..0.5)),
        };
        let unobserved = loglik_total(&ds, &params, &spec).map_err(|e| e.to_string())?.exp();
        let trees = candidates.iter().fold(vec![vec![]], |acc: Vec<Vec<usize>>, c| {
            acc.iter().flat_map(|t| c.iter().map(move |&i| [t.clone(), vec![i]].concat())).collect()
        });
        let mut total = 0.0;
        for tree in trees {
            let mut obs = ds.clone();
            for row in obs.rows.iter_mut().filter(|r| r.outcome == Outcome::EventCandidate) {
                row.outcome = Outcome::Censored;
                row.event_time = None;
            }
            for &i in &tree {
                obs.rows[i].outcome = Outcome::EventKnown;
                obs.rows[i].event_time = ds.rows[i].event_time;
            }
            total += loglik_total(&obs, &params, &spec).map_err(|e| e.to_string())?.exp();
        }
        worst = worst.max((unobserved - total).abs() / total);
    }
    let detail = format!("{cases} micro-datasets, max relative error = {worst:.2e}");
    if worst < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Root of the exponential deviance on one side of the MLE, by bisection.
fn deviance_root(d: f64, t: f64, upper: bool) -> f64 {
    let rate_hat = d / t;
    let dev = |rate: f64| 2.0 * (d * (rate_hat / rate).ln() - (rate_hat - rate) * t) - CHI2_1_95;
    let (mut a, mut b) = if upper { (rate_hat, rate_hat * 100.0) } else { (rate_hat / 100.0, rate_hat) };
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (dev(m) > 0.0) == (dev(a) > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn criterion_3() -> Check {
    let times = [0.4, 1.3, 2.2, 0.9, 3.1, 0.7, 5.0, 5.0, 5.0, 2.6, 5.0, 1.8];
    let events = [true, true, true, true, true, true, false, false, false, true, false, true];
    let rows: Vec<PairRow> = times
        .iter()
        .zip(events)
        .enumerate()
        .map(|(k, (&t, e))| PairRow {
            source: EXTERNAL,
            subject: k as u32 + 1,
            origin: 0.0,
            segments: vec![Segment { start: 0.0, stop: t, x: vec![] }],
            outcome: if e { Outcome::EventKnown } else { Outcome::Censored },
            event_time: e.then_some(t),
        })
        .collect();
    let d = events.iter().filter(|&&e| e).count() as f64;
    let t: f64 = times.iter().sum();
    let ds = PairDataset::new(vec![], rows).map_err(|e| e.to_string())?;
    let fit = fit_mle(&ds, &ModelSpec::exponential(), &FitOptions::default()).map_err(|e| e.to_string())?;
    let est = fit.estimate(LN_MU0).ok_or("no ln_mu0")?;
    let lr = est.lr.ok_or("no LR interval")?;
    let (lo, hi) = (lr.lo.ok_or("unbounded")?, lr.hi.ok_or("unbounded")?);
    let err_mle = (est.estimate - (d / t).ln()).abs();
    let err_lo = (lo - deviance_root(d, t, false).ln()).abs();
    let err_hi = (hi - deviance_root(d, t, true).ln()).abs();
    let detail = format!("D = {d}, T = {t}: |MLE error| = {err_mle:.1e}, LR endpoint errors = {err_lo:.1e}, {err_hi:.1e}");
    if err_mle < 1e-6 && err_lo < 1e-4 && err_hi < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const PARAMS: [&str; 4] = ["x_inf", "x_sus", LN_LAMBDA0, LN_MU0];

fn criterion_4(study: &StudyResult) -> Check {
    let mut failures = Vec::new();
    let mut cells = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for design in [StudyDesign::CompleteCohort, StudyDesign::ContactTracingDelayedEntry] {
        for wiw in WiwMode::ALL {
            for param in PARAMS {
                for metric in ["wald_coverage", "lr_coverage"] {
                    let v = study.metric(design, wiw, param, metric).unwrap_or(f64::NAN);
                    cells += 1;
                    lo = lo.min(v);
                    hi = hi.max(v);
                    if !(0.915..=0.975).contains(&v) {
                        failures.push(format!("{design}/{wiw}/{param}/{metric}={v:.3}"));
                    }
                }
            }
        }
    }
    let detail = format!("{} of {cells} cells in [0.915, 0.975], range [{lo:.3}, {hi:.3}]", cells - failures.len());
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; outside: {}", failures.join(", ")))
    }
}

fn criterion_5(study: &StudyResult) -> Check {
    let u = WiwMode::Unobserved;
    let get = |d: StudyDesign, p: &str, m: &str| study.metric(d, u, p, m).unwrap_or(f64::NAN);
    let ie = StudyDesign::IgnoreExternal;
    let nde = StudyDesign::ContactTracingNoDelayedEntry;
    let checks = [
        ("ignore-external x_sus Wald coverage < 0.80", get(ie, "x_sus", "wald_coverage"), get(ie, "x_sus", "wald_coverage") < 0.80),
        ("ignore-external x_sus LR coverage < 0.80", get(ie, "x_sus", "lr_coverage"), get(ie, "x_sus", "lr_coverage") < 0.80),
        ("ignore-external ln_lambda0 bias > 0", get(ie, LN_LAMBDA0, "mean_bias"), get(ie, LN_LAMBDA0, "mean_bias") > 0.0),
        ("ct-no-delayed-entry ln_mu0 Wald coverage < 0.10", get(nde, LN_MU0, "wald_coverage"), get(nde, LN_MU0, "wald_coverage") < 0.10),
        ("ct-no-delayed-entry ln_mu0 LR coverage < 0.10", get(nde, LN_MU0, "lr_coverage"), get(nde, LN_MU0, "lr_coverage") < 0.10),
        ("ct-no-delayed-entry ln_mu0 bias > 0", get(nde, LN_MU0, "mean_bias"), get(nde, LN_MU0, "mean_bias") > 0.0),
    ];
    let detail: Vec<String> = checks.iter().map(|(name, v, ok)| format!("{name}: {v:.3} {}", if *ok { "ok" } else { "FAIL" })).collect();
    if checks.iter().all(|c| c.2) {
        Ok(detail.join("; "))
    } else {
        Err(detail.join("; "))
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pairsurv")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(bin())
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("pairsurv {args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn criterion_6() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fit = fixture("reference_fit.json");
    let profiles = fixture("reference_profiles.csv");
    run_cli(dir.path(), &["predict-sar", "--fit", fit.to_str().unwrap(), "--profiles", profiles.to_str().unwrap(), "--iota", "6"])?;
    let mut r = csv::Reader::from_path(dir.path().join("sar.csv")).map_err(|e| e.to_string())?;
    let got: Vec<f64> = r
        .records()
        .map(|rec| 100.0 * rec.unwrap()[2].parse::<f64>().unwrap())
        .collect();
    let expected = [4.4, 1.5, 2.7, 0.9, 15.9, 5.8, 10.2, 3.6];
    let worst = got.iter().zip(expected).map(|(g, e)| (g - e).abs()).fold(0.0f64, f64::max);
    let shown: Vec<String> = got.iter().map(|g| format!("{g:.2}")).collect();
    let detail = format!("predicted % = [{}], max deviation {worst:.3} pp", shown.join(", "));
    if got.len() == 8 && worst < 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Check {
    let c = 24.0f64;
    let cfg = SimConfig {
        internal: HazardFamily::Weibull,
        truth: Truth { beta_inf: 0.5, beta_sus: -0.5, shape_int: 1.5, ..Truth::default() },
        seed: 77,
        ..SimConfig::default()
    };
    let out = simulate(&cfg).map_err(|e| e.to_string())?;
    let ds = analysis_dataset(&out, "x", StudyDesign::CompleteCohort, WiwMode::Unobserved).map_err(|e| e.to_string())?;
    let scaled = ds.rescale_time(c);
    let spec = ModelSpec::new(HazardFamily::Weibull, HazardFamily::Exponential).with_formula(&["x_inf", "x_sus"]);
    let a = fit_mle(&ds, &spec, &FitOptions::quick()).map_err(|e| e.to_string())?;
    let b = fit_mle(&scaled, &spec, &FitOptions::quick()).map_err(|e| e.to_string())?;
    if !(a.converged && b.converged) {
        return Err("fit did not converge".into());
    }
    let mut worst = 0.0f64;
    for name in a.names() {
        let shift = if name == LN_LAMBDA0 || name == LN_MU0 { -c.ln() } else { 0.0 };
        let (ea, eb) = (a.estimate(&name).unwrap().estimate, b.estimate(&name).unwrap().estimate);
        worst = worst.max((eb - ea - shift).abs());
    }
    let detail = format!("parameters [{}], max deviation {worst:.1e}", a.names().join(", "));
    if worst < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn files_equal(a: &Path, b: &Path, name: &str) -> Result<(), String> {
    let (x, y) = (std::fs::read(a.join(name)).map_err(|e| e.to_string())?, std::fs::read(b.join(name)).map_err(|e| e.to_string())?);
    if x == y {
        Ok(())
    } else {
        Err(format!("{name} differs between {} and {}", a.display(), b.display()))
    }
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let sim_files = ["population.csv", "infections.csv", "pairs_complete-cohort_unobserved.csv", "pairs_ct-delayed-entry_observed.csv"];
    let runs = [("s1", "1"), ("s2", "1"), ("s3", "4")];
    for (name, threads) in runs {
        run_cli(&root.join(name), &["--seed", "31", "--threads", threads, "simulate"])?;
    }
    for (name, _) in &runs[1..] {
        for f in sim_files {
            files_equal(&root.join("s1"), &root.join(name), f)?;
        }
    }
    let cfg = root.join("study.cfg");
    std::fs::write(&cfg, "n_households = 40\nmax_infections = 60\nn_replicates = 12\n").map_err(|e| e.to_string())?;
    let runs = [("r1", "1"), ("r2", "1"), ("r3", "3")];
    for (name, threads) in runs {
        run_cli(&root.join(name), &["--seed", "5", "--threads", threads, "replicate-study", "--config", cfg.to_str().unwrap()])?;
    }
    for (name, _) in &runs[1..] {
        for f in ["summary.csv", "replicates.csv"] {
            files_equal(&root.join("r1"), &root.join(name), f)?;
        }
    }
    Ok("simulate (3 runs, 1 and 4 threads) and replicate-study (3 runs, 1 and 3 threads) outputs byte-identical".into())
}

fn main() {
    // Accept and ignore libtest flags such as --nocapture.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if filter.iter().any(|f| f == "--list") {
        return;
    }
    let mut failed = 0;
    let mut report = |k: usize, name: &str, started: Instant, result: Check| {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {k} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {k} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    };

    let t = Instant::now();
    report(1, "distribution identities", t, criterion_1());
    let t = Instant::now();
    report(2, "marginalization oracle", t, criterion_2());
    let t = Instant::now();
    report(3, "closed-form exponential MLE and LR interval", t, criterion_3());

    let t = Instant::now();
    let config = StudyConfig { n_replicates: 200, seed: 20160501, ..StudyConfig::default() };
    let options = FitOptions { lr_intervals: true, lr_pvalues: false, ..FitOptions::default() };
    match replicate_study(&config, &options) {
        Ok(study) => {
            let study_secs = t.elapsed().as_secs_f64();
            report(4, "valid-design coverage", t, criterion_4(&study));
            let t5 = Instant::now();
            report(5, "flawed-design bias", t5, criterion_5(&study));
            println!("  (replicate study: 200 replicates x 8 analyses in {study_secs:.1}s)");
        }
        Err(e) => {
            report(4, "valid-design coverage", t, Err(e.to_string()));
            report(5, "flawed-design bias", t, Err(e.to_string()));
        }
    }

    let t = Instant::now();
    report(6, "SAR from fitted coefficients", t, criterion_6());
    let t = Instant::now();
    report(7, "time-rescaling equivariance", t, criterion_7());
    let t = Instant::now();
    report(8, "determinism", t, criterion_8());

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        if std::env::var_os("PAIRSURV_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
        return;
    }
    println!("all 8 criteria passed");
}
