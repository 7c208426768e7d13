use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::PathBuf;

use anyhow::Context as _;
use clap::Args;
use pairsurv_core::data::TermKind;
use pairsurv_core::estimation::{predict_sar, SarPrediction};
use pairsurv_core::{Error, FitResult, Term};

use crate::{create, Context, Status};

#[derive(Debug, Args)]
pub struct SarArgs {
    /// Fit JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,

    /// Profiles CSV: `role` (source or subject), `label`, then one column
    /// per raw covariate.
    #[arg(long)]
    pub profiles: PathBuf,

    /// Infectious period over which transmission can occur.
    #[arg(long)]
    pub iota: f64,

    /// Output file name within the output directory.
    #[arg(long, default_value = "sar.csv")]
    pub output: String,
}

/// Raw covariate values of one source or subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub label: String,
    pub values: BTreeMap<String, f64>,
}

/// Source and subject profiles, in file order.
pub fn read_profiles<R: Read>(reader: R) -> pairsurv_core::Result<(Vec<Profile>, Vec<Profile>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("role") || headers.get(1) != Some("label") {
        return Err(Error::Schema("profiles must start with columns `role,label`".into()));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let (mut sources, mut subjects) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut values = BTreeMap::new();
        for (k, name) in names.iter().enumerate() {
            let field = &rec[k + 2];
            let v: f64 = field.parse().map_err(|_| {
                Error::Schema(format!("line {line}: column `{name}` has non-numeric value `{field}`"))
            })?;
            values.insert(name.clone(), v);
        }
        let profile = Profile { label: rec[1].to_string(), values };
        match &rec[0] {
            "source" => sources.push(profile),
            "subject" => subjects.push(profile),
            other => {
                return Err(Error::Schema(format!("line {line}: role must be source or subject, got `{other}`")))
            }
        }
    }
    Ok((sources, subjects))
}

/// Formula term values for an internal pair.
fn term_values(terms: &[Term], source: &Profile, subject: &Profile) -> pairsurv_core::Result<BTreeMap<String, f64>> {
    let get = |p: &Profile, c: &str| p.values.get(c).copied().ok_or_else(|| Error::UnknownCovariate(c.to_string()));
    let mut out = BTreeMap::new();
    for term in terms {
        let value = if term.zeta_interaction {
            0.0
        } else {
            match term.kind {
                TermKind::Infectiousness => get(source, &term.covariate)?,
                TermKind::Susceptibility => get(subject, &term.covariate)?,
                TermKind::Shared => f64::from(u8::from(get(source, &term.covariate)? == get(subject, &term.covariate)?)),
            }
        };
        out.insert(term.name(), value);
    }
    Ok(out)
}

/// One prediction per source × subject profile.
pub fn predict_table(
    fit: &FitResult,
    sources: &[Profile],
    subjects: &[Profile],
    iota: f64,
) -> pairsurv_core::Result<Vec<(String, String, SarPrediction)>> {
    let terms: Vec<Term> = fit.layout.beta.iter().map(|t| t.parse()).collect::<pairsurv_core::Result<_>>()?;
    let used: BTreeSet<&str> = terms.iter().map(|t| t.covariate.as_str()).collect();
    for p in sources.iter().chain(subjects) {
        if let Some(name) = p.values.keys().find(|k| !used.contains(k.as_str())) {
            return Err(Error::UnknownCovariate(name.clone()));
        }
    }
    let mut rows = Vec::new();
    for source in sources {
        for subject in subjects {
            let profile = term_values(&terms, source, subject)?;
            rows.push((source.label.clone(), subject.label.clone(), predict_sar(fit, &profile, iota)?));
        }
    }
    Ok(rows)
}

fn field(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn pct(v: f64) -> String {
    if v.is_finite() {
        format!("{:.1}%", 100.0 * v)
    } else {
        "-".into()
    }
}

pub(crate) fn run(ctx: &Context, args: &SarArgs) -> anyhow::Result<Status> {
    let file = std::fs::File::open(&args.fit).with_context(|| format!("cannot read {}", args.fit.display()))?;
    let fit: FitResult = serde_json::from_reader(std::io::BufReader::new(file)).map_err(Error::from)?;
    if !fit.converged {
        return Err(Error::Domain("the fit did not converge".into()).into());
    }
    let file =
        std::fs::File::open(&args.profiles).with_context(|| format!("cannot read {}", args.profiles.display()))?;
    let (sources, subjects) = read_profiles(file)?;
    let rows = predict_table(&fit, &sources, &subjects, args.iota)?;

    let mut w = csv::Writer::from_writer(create(&ctx.output(&args.output))?);
    w.write_record(["source", "subject", "estimate", "lo", "hi"])?;
    println!("{:<20} {:<24} {:>8} {:>20}", "source", "subject", "SAR", "Wald 95% CI");
    for (source, subject, p) in &rows {
        w.write_record([source.clone(), subject.clone(), field(p.estimate), field(p.lo), field(p.hi)])?;
        println!("{:<20} {:<24} {:>8} {:>20}", source, subject, pct(p.estimate), format!("({}, {})", pct(p.lo), pct(p.hi)));
    }
    w.flush()?;
    Ok(Status::Success)
}
