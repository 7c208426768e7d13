use pairsurv_core::estimation::{Interval, Selection};
use pairsurv_core::FitResult;

fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        _ => "-".into(),
    }
}

fn interval(iv: Option<Interval>) -> String {
    match iv {
        None => "-".into(),
        Some(iv) => {
            let lo = iv.lo.map_or("-inf".into(), |v| format!("{v:.4}"));
            let hi = iv.hi.map_or("inf".into(), |v| format!("{v:.4}"));
            format!("({lo}, {hi})")
        }
    }
}

pub(crate) fn print_fit(fit: &FitResult, wald_pvalues: bool) {
    println!(
        "internal: {}  external: {}  events: {}  rows: {}",
        fit.spec.internal.name(),
        fit.spec.external.name(),
        fit.n_events,
        fit.n_rows
    );
    let p_label = if wald_pvalues { "p (Wald)" } else { "p (LR)" };
    println!(
        "{:<24} {:>10} {:>10} {:>24} {:>24} {:>10}",
        "parameter", "estimate", "se", "Wald 95% CI", "LR 95% CI", p_label
    );
    for e in &fit.estimates {
        let p = if wald_pvalues { e.p_wald } else { e.p_lr };
        println!(
            "{:<24} {:>10} {:>10} {:>24} {:>24} {:>10}",
            e.name,
            num(Some(e.estimate)),
            num(e.se),
            interval(e.wald),
            interval(e.lr),
            num(p)
        );
    }
    println!("log-likelihood: {:.4}", fit.loglik);
    println!("AIC: {:.4}", fit.aic);
    println!("converged: {} ({} iterations)", fit.converged, fit.iterations);
}

pub(crate) fn print_selection(selection: &Selection) {
    for (k, step) in selection.trace.iter().enumerate() {
        println!("step {}: AIC {:.4} with [{}]", k + 1, step.aic, step.formula.join(", "));
        for c in &step.candidates {
            println!("  drop {:<24} AIC {}", c.term, num(c.aic));
        }
        match &step.dropped {
            Some(t) => println!("  dropped {t}"),
            None => println!("  no drop lowers AIC"),
        }
    }
    println!("selected: [{}]", selection.spec.formula.join(", "));
    print_fit(&selection.fit, true);
}
