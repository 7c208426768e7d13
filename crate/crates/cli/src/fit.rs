use std::path::PathBuf;

use clap::Args;
use pairsurv_core::data::Outcome;
use pairsurv_core::estimation::backward_select;
use pairsurv_core::io::{read_household_csv, read_pair_rows_file, write_pair_rows, NaturalHistoryConfig};
use pairsurv_core::{
    build_design_matrix, build_pair_rows, fit_mle, ContactStructure, Error, ExtractOptions, FitOptions, HazardFamily,
    ModelSpec, PairDataset, StudyDesign, Term, WiwMode,
};

use crate::report::{print_fit, print_selection};
use crate::{create, write_json, Context, Status};

/// Where the data come from and how they become pair rows.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Pair-row CSV.
    #[arg(long, conflicts_with_all = ["households", "natural_history", "design"], required_unless_present = "households")]
    pub pairs: Option<PathBuf>,

    /// Household CSV.
    #[arg(long)]
    pub households: Option<PathBuf>,

    /// Natural-history config for household input.
    #[arg(long, requires = "households")]
    pub natural_history: Option<PathBuf>,

    /// Study design used to build pair rows from household input.
    #[arg(long, default_value = "ct-delayed-entry", value_parser = parse_design)]
    pub design: StudyDesign,

    /// Whether who-infected-whom is observed.
    #[arg(long, value_parser = parse_wiw)]
    pub wiw: WiwMode,

    /// Formula terms, comma-separated (`adult_inf,proph_sus`).
    #[arg(long, value_delimiter = ',')]
    pub formula: Vec<String>,

    /// Families as `internal=<family>` and `external=<family>`.
    #[arg(long, num_args = 1..=2)]
    pub families: Vec<String>,

    /// Maximum optimizer iterations.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,

    /// Also write the analysis pair rows to `pairs.csv`.
    #[arg(long)]
    pub save_pairs: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Report Wald p-values instead of likelihood-ratio p-values.
    #[arg(long)]
    pub wald_pvalues: bool,

    /// Skip profile-likelihood intervals and p-values.
    #[arg(long)]
    pub no_lr: bool,

    /// Output file name within the output directory.
    #[arg(long, default_value = "fit.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Terms never dropped, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub protect: Vec<String>,

    /// Output file name within the output directory.
    #[arg(long, default_value = "selection.json")]
    pub output: String,
}

fn parse_design(s: &str) -> Result<StudyDesign, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_wiw(s: &str) -> Result<WiwMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn spec_from(args: &DataArgs) -> pairsurv_core::Result<ModelSpec> {
    let mut internal = HazardFamily::Exponential;
    let mut external = HazardFamily::Exponential;
    for item in &args.families {
        let (side, family) = item
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("--families expects internal=<family> or external=<family>, got `{item}`")))?;
        let family: HazardFamily = family.parse()?;
        match side.trim() {
            "internal" => internal = family,
            "external" => external = family,
            other => return Err(Error::Schema(format!("--families: unknown side `{other}`"))),
        }
    }
    let terms: Vec<String> = args.formula.iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
    Ok(ModelSpec::new(internal, external).with_formula(&terms))
}

fn household_dataset(args: &DataArgs, path: &PathBuf, terms: &[String]) -> pairsurv_core::Result<PairDataset> {
    let nh = match &args.natural_history {
        Some(p) => NaturalHistoryConfig::from_file(p)?,
        None => NaturalHistoryConfig::default(),
    };
    let data = read_household_csv(path, &nh)?;
    if args.wiw == WiwMode::Observed && !data.infectors_known {
        return Err(Error::Schema("--wiw observed needs an infector_id for every infection".into()));
    }
    let mut opts = ExtractOptions::new(args.design, args.wiw, f64::INFINITY);
    if args.design == StudyDesign::CompleteCohort {
        let last = data
            .population
            .individuals()
            .iter()
            .filter(|i| i.is_infected())
            .map(|i| i.infection_time)
            .fold(0.0, f64::max);
        opts.followup_end = last + nh.followup_days;
    } else {
        opts.followup_after_index = Some(nh.followup_days);
    }
    let raw =
        build_pair_rows(&data.population, &ContactStructure::households(), &data.infections, &opts, &data.covariates)?;
    let terms: Vec<Term> = terms.iter().map(|t| t.parse()).collect::<pairsurv_core::Result<_>>()?;
    build_design_matrix(&raw, &terms)
}

fn check_outcomes(ds: &PairDataset, wiw: WiwMode) -> pairsurv_core::Result<()> {
    let unexpected = match wiw {
        WiwMode::Observed => Outcome::EventCandidate,
        WiwMode::Unobserved => Outcome::EventKnown,
    };
    match ds.rows.iter().find(|r| r.outcome == unexpected) {
        Some(r) => Err(Error::Schema(format!(
            "pair ({}, {}) has outcome {} which does not fit --wiw {wiw}",
            r.source,
            r.subject,
            unexpected.name()
        ))),
        None => Ok(()),
    }
}

fn load(ctx: &Context, args: &DataArgs) -> anyhow::Result<(PairDataset, ModelSpec)> {
    let spec = spec_from(args)?;
    let ds = match (&args.pairs, &args.households) {
        (Some(path), _) => {
            let ds = read_pair_rows_file(path)?;
            check_outcomes(&ds, args.wiw)?;
            ds.select(&spec.formula)?
        }
        (None, Some(path)) => household_dataset(args, path, &spec.formula)?,
        (None, None) => return Err(Error::Schema("give --pairs or --households".into()).into()),
    };
    if args.save_pairs {
        write_pair_rows(create(&ctx.output("pairs.csv"))?, &ds)?;
    }
    Ok((ds, spec))
}

fn fit_options(ctx: &Context, args: &DataArgs) -> FitOptions {
    FitOptions { max_iter: args.max_iter, partitions: ctx.threads.unwrap_or(1), ..FitOptions::default() }
}

pub(crate) fn run(ctx: &Context, args: &FitArgs) -> anyhow::Result<Status> {
    let (ds, spec) = load(ctx, &args.data)?;
    let options = FitOptions {
        lr_intervals: !args.no_lr,
        lr_pvalues: !args.no_lr && !args.wald_pvalues,
        ..fit_options(ctx, &args.data)
    };
    let fit = fit_mle(&ds, &spec, &options)?;
    write_json(&ctx.output(&args.output), &fit)?;
    print_fit(&fit, args.wald_pvalues);
    if fit.converged {
        Ok(Status::Success)
    } else {
        log::error!("optimizer did not converge (max gradient {:.3e})", fit.max_gradient);
        Ok(Status::NotConverged)
    }
}

pub(crate) fn run_select(ctx: &Context, args: &SelectArgs) -> anyhow::Result<Status> {
    let (ds, spec) = load(ctx, &args.data)?;
    let protect: Vec<String> = args.protect.iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
    if let Some(t) = protect.iter().find(|t| !spec.formula.contains(t)) {
        return Err(Error::Schema(format!("protected term `{t}` is not in the formula")).into());
    }
    let options = FitOptions { lr_intervals: false, lr_pvalues: false, ..fit_options(ctx, &args.data) };
    let selection = backward_select(&ds, &spec, &protect, &options)?;
    write_json(&ctx.output(&args.output), &selection)?;
    print_selection(&selection);
    if selection.fit.converged {
        Ok(Status::Success)
    } else {
        Ok(Status::NotConverged)
    }
}
