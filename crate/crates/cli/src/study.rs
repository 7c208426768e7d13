use std::path::PathBuf;

use clap::Args;
use pairsurv_core::io::{study_config_from, write_replicates, write_summary, KeyValues};
use pairsurv_core::{replicate_study, FitOptions, StudyConfig};

use crate::{create, Context, Status};

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Key-value config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Skip profile-likelihood intervals (LR coverage is then reported as 0).
    #[arg(long)]
    pub no_lr: bool,
}

pub(crate) fn run(ctx: &Context, args: &StudyArgs) -> anyhow::Result<Status> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut kv = KeyValues::from_file(path)?;
            let cfg = study_config_from(&mut kv)?;
            kv.finish()?;
            cfg
        }
        None => StudyConfig::default(),
    };
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
        cfg.sim.seed = seed;
    }
    let options = FitOptions { lr_intervals: !args.no_lr, lr_pvalues: false, ..FitOptions::default() };
    let result = replicate_study(&cfg, &options)?;
    write_summary(create(&ctx.output("summary.csv"))?, &result.summary)?;
    write_replicates(create(&ctx.output("replicates.csv"))?, &result.records)?;

    let nonconverged = result.summary.iter().filter(|r| r.metric == "n_nonconverged").map(|r| r.value).sum::<f64>();
    println!("seed: {}", cfg.seed);
    println!("replicates: {}", cfg.n_replicates);
    println!("analyses: {}", cfg.n_replicates * cfg.designs.len() * cfg.wiw.len());
    println!("summary rows: {}", result.summary.len());
    if nonconverged > 0.0 {
        log::warn!("{nonconverged} parameter estimates came from fits that did not converge");
    }
    Ok(Status::Success)
}
